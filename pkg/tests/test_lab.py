import math

import numpy as np
import pytest

from jumplab import (
    CadlagPath,
    ConfigError,
    EnsembleRunner,
    InvalidParametersException,
    Tolerances,
    UnknownExampleException,
    event_equality_test,
    preset,
    reproduce,
    run_experiment,
)
from jumplab.lab import (
    EventFlags,
    IdentityRecord,
    classify_path,
    confusion_rows,
    equality_ids,
    equality_report,
    flag_frequencies,
    path_identities,
    recipe_config,
    recipe_ids,
    summarize_identities,
)
from jumplab.models import EventOracle
from tests.fixutres.paths import absorbed_path, martingale_path, runner  # noqa: F401
from tests.utils.telemetry import assert_span


def make_flags(**overrides: object) -> EventFlags:
    values: dict[str, object] = {
        "numeric_convergent": True,
        "numeric_liminf_bounded": True,
        "numeric_limsup_bounded": True,
        "numeric_qv_growing": False,
        "numeric_a_finite": True,
        "numeric_functional_c_finite": True,
        "numeric_tv_growing": False,
        "numeric_exp_converges_nonzero": True,
        "absorbed": False,
        "terminal_value": 0.0,
        "tail_oscillation": 0.0,
        "qv_terminal": 0.0,
        "total_variation": 0.0,
    }
    values.update(overrides)
    return EventFlags.model_validate(values)


class TestClassifyPath:
    def test_constant_path(self) -> None:
        path = CadlagPath(0.0, np.empty(0), np.empty(0), 4.0)
        flags = classify_path(path, Tolerances())
        assert flags.numeric_convergent
        assert flags.numeric_liminf_bounded
        assert flags.numeric_qv_finite
        assert flags.numeric_exp_converges_nonzero
        assert not flags.numeric_tv_growing
        assert not flags.absorbed
        assert flags.terminal_value == 0.0

    def test_absorbed_path(self, absorbed_path: CadlagPath) -> None:  # noqa: F811
        flags = classify_path(absorbed_path, Tolerances())
        assert flags.absorbed
        assert not flags.numeric_exp_converges_nonzero
        assert not flags.numeric_convergent
        assert flags.numeric_qv_growing
        assert flags.numeric_y_convergent is None
        assert flags.tail_oscillation == pytest.approx(1.0)
        assert flags.qv_terminal == pytest.approx(1.25)

    def test_late_jump_breaks_convergence(self) -> None:
        path = CadlagPath.pure_jump([(3.0, 0.5)], horizon=4.0)
        assert not classify_path(path, Tolerances()).numeric_convergent
        assert classify_path(path, Tolerances(alpha=0.8)).numeric_convergent


class TestEqualityReport:
    def test_ids(self) -> None:
        assert "conv-liminf" in equality_ids()
        assert "log-transform" in equality_ids()

    def test_numeric_only(self) -> None:
        flags = [make_flags(), make_flags(numeric_convergent=False)]
        report = equality_report(flags, "conv-liminf", None)
        assert report.mode == "numeric-only"
        assert report.n_evaluated == 2
        assert report.agreement == 0.5
        assert report.agreement_se == pytest.approx(np.sqrt(0.25 / 2))
        assert report.patterns == {"FT": 1, "TT": 1}
        assert report.event_frequencies["numeric_convergent"] == 0.5

    def test_undecided_rows_are_dropped(self) -> None:
        flags = [make_flags(), make_flags(numeric_v_finite=True, numeric_y_convergent=True)]
        report = equality_report(flags, "log-transform", None)
        assert report.n_paths == 2
        assert report.n_evaluated == 1
        assert report.agreement == 1.0

    def test_oracle_agreement(self) -> None:
        oracle = EventOracle(converges="yes", qv_finite="no", notes="example")
        flags = [make_flags(), make_flags(numeric_convergent=False)]
        report = equality_report(flags, "conv-liminf", oracle)
        assert report.mode == "oracle"
        assert report.oracle_agreement == {"numeric_convergent": 0.5, "numeric_qv_finite": 0.0}
        assert report.oracle_notes == ["example"]

    def test_mixed_oracle_notes_probability(self) -> None:
        oracle = EventOracle(converges="mixed", converge_probability=0.25)
        report = equality_report([make_flags()], "conv-liminf", oracle)
        assert "numeric_convergent" not in report.oracle_agreement
        assert "0.2500" in report.oracle_notes[0]

    def test_unknown_equality(self) -> None:
        with pytest.raises(InvalidParametersException):
            equality_report([make_flags()], "conv-nothing", None)

    def test_event_equality_span(self, runner: EnsembleRunner) -> None:  # noqa: F811
        expected = {
            "name": "event-equality conv-liminf",
            "attributes": {
                "jumplab.model.kind": "deterministic_series",
                "jumplab.equality.id": "conv-liminf",
                "jumplab.equality.agreement": 1.0,
            },
        }
        with assert_span(expected):
            report = event_equality_test(preset("zero", 4), "conv-liminf", 5, 1, runner=runner)
        assert report.mode == "oracle"
        assert not report.warnings


class TestFrequencies:
    def test_optional_flags_count_separately(self) -> None:
        flags = [make_flags(), make_flags(numeric_y_convergent=False, absorbed=True)]
        frequencies = flag_frequencies(flags)
        assert frequencies["absorbed"].mean == 0.5
        assert frequencies["absorbed"].count == 2
        assert frequencies["numeric_y_convergent"].count == 1
        assert frequencies["numeric_y_convergent"].mean == 0.0

    def test_confusion_rows(self) -> None:
        flags = [make_flags(), make_flags(), make_flags(numeric_convergent=False)]
        rows = {row.flag: row for row in confusion_rows(flags, EventOracle(converges="yes"))}
        convergent = rows["numeric_convergent"]
        assert (convergent.numeric_true, convergent.numeric_false) == (2, 1)
        assert convergent.diagonal == pytest.approx(2 / 3)
        assert rows["numeric_qv_finite"].diagonal is None

    def test_confusion_without_oracle(self) -> None:
        rows = confusion_rows([make_flags()], None)
        assert all(row.oracle_answer is None and row.diagonal is None for row in rows)


class TestIdentities:
    def test_martingale_path(self) -> None:
        M, comp = martingale_path()
        record = path_identities(M, comp)
        assert not record.skipped
        assert record.reciprocal is not None and record.reciprocal < 1e-10
        assert record.round_trip is not None and record.round_trip < 1e-12
        assert record.log_transform is not None and record.log_transform < 1e-10
        assert all(value is not None and value < 1e-9 for value in record.a_identity.values())

    def test_log_transform_needs_local_martingale(self) -> None:
        M, comp = martingale_path()
        assert path_identities(M, comp, local_martingale=False).log_transform is None

    def test_jump_below_minus_one_is_skipped(self) -> None:
        assert path_identities(CadlagPath.pure_jump([(1.0, -3.0)], horizon=2.0)).skipped

    def test_summary(self) -> None:
        M, comp = martingale_path()
        suite = summarize_identities([path_identities(M, comp), IdentityRecord(skipped=True)])
        assert suite.paths == 1
        assert suite.skipped == 1
        assert set(suite.a_identity) == {"-1", "0", "0.5", "2"}
        assert suite.failures() == []
        assert suite.failures({"reciprocal": -1.0}) == ["reciprocal"]


class TestRunExperiment:
    def test_zero_preset(self, runner: EnsembleRunner) -> None:  # noqa: F811
        config = {"preset": "zero", "n_paths": 4, "horizon": 4, "equalities": ["conv-liminf"], "follmer": True}
        report = run_experiment(config, runner=runner)

        assert report.name == "zero"
        assert report.horizon == 4
        assert report.frequencies["numeric_convergent"].mean == 1.0
        assert report.equalities[0].agreement == 1.0
        assert report.identities is not None and report.identities.paths == 4
        assert report.follmer is not None
        assert report.follmer.ui is not None and report.follmer.ui.trend == "flat"
        assert [row.horizon for row in report.follmer.ui.rows] == [1.0, 2.0, 4.0]
        assert all(result.passed for result in report.follmer.duality)
        assert report.follmer.reciprocal is not None and report.follmer.reciprocal.passed
        assert len(report.follmer.localization) == 2
        assert "runtime" not in report.model_dump()
        assert report.runtime["threads"] == 1

    def test_payload_depends_on_config_only(self) -> None:
        config = {"preset": "ui-summable", "n_paths": 12, "horizon": 6, "seed": 3}
        first = run_experiment(config, runner=EnsembleRunner(threads=1))
        second = run_experiment(config, runner=EnsembleRunner(threads=3))
        assert first.model_dump() == second.model_dump()

    def test_criteria_from_config(self, runner: EnsembleRunner) -> None:  # noqa: F811
        config = {
            "preset": "zero",
            "n_paths": 3,
            "horizon": 2,
            "family": {"kind": "rules", "rules": ["t=2", "t=1"]},
            "criteria": [{"tag": "LM_A"}],
        }
        report = run_experiment(config, runner=runner)
        assert [verdict.criterion for verdict in report.criteria] == ["LM_A"]
        assert report.criteria[0].verdict == "bounded"

    @pytest.mark.parametrize(
        "config",
        [
            {"preset": "not-a-preset"},
            {"preset": "zero", "horizon": 0.5},
            {"preset": "zero", "model": {"kind": "cox"}},
            {"model": {"kind": "random_walk"}},
            {"preset": "zero", "family": {"kind": "rules", "rules": ["t=abc"]}},
            {"preset": "zero", "criteria": [{"tag": "novikov_delta", "delta": 2.0}]},
            {"preset": "zero", "n_paths": 0},
        ],
    )
    def test_invalid_config(self, config: dict[str, object]) -> None:
        with pytest.raises(ConfigError):
            run_experiment(config)


class TestReproduce:
    def test_recipe_ids(self) -> None:
        ids = recipe_ids()
        assert ids == sorted(ids)
        assert {"ex-6.2-1", "ex-6.3-1", "ex-5.9", "remark-4.3", "zero"} <= set(ids)

    def test_alias(self) -> None:
        config = recipe_config("ex-5.16-part-2")
        assert config.preset == "ex-5.9-stopped"

    def test_tolerances_merge(self) -> None:
        config = recipe_config("ex-6.2-1", {"tolerances": {"alpha": 0.25}, "n_paths": 10})
        assert config.tolerances.epsilon == 0.05
        assert config.tolerances.alpha == 0.25
        assert config.n_paths == 10
        assert config.horizon == 4000

    def test_unknown_example(self) -> None:
        with pytest.raises(UnknownExampleException):
            reproduce("ex-0.0")

    def test_zero_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        report = reproduce("zero", {"n_paths": 6}, runner=runner)
        assert report.name == "zero"
        assert [check.name for check in report.checks] == ["martingale-mean"]
        assert report.passed

    def test_walk_harmonic_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        overrides = {"n_paths": 500, "horizon": 1000, "tolerances": {"epsilon": 0.1}}
        report = reproduce("ex-6.2-1", overrides, runner=runner)
        checks = {check.name: check for check in report.checks}

        assert list(checks) == ["numeric-convergent", "median-qv", "convergent-with-growing-qv"]
        assert checks["median-qv"].target == pytest.approx(math.fsum(1 / n for n in range(2, 1001)))
        assert report.passed

    def test_cox_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        report = reproduce("ex-6.4", {"n_paths": 1000}, runner=runner)
        mean, survival = report.checks

        assert (mean.name, survival.name) == ("martingale-mean", "cox-survival")
        assert survival.target == pytest.approx(math.exp(-50 / 51))
        assert report.passed

    def test_discrete_density_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        report = reproduce("ex-6.3-1", runner=runner)
        checks = {check.name: check for check in report.checks}

        for name in (
            "martingale-mean",
            "integrands-nonnegative",
            "novikov-delta-bound",
            "sup-B_a(a=2)",
            "finite-B_a(a=3)",
            "tilt-mass",
            "q-survival-T=32",
            "exact-truncated-mean",
        ):
            assert checks[name].passed, name
        assert checks["p-truncated-T=4"].target > 1.0
        assert report.passed

    def test_alternating_harmonic_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        report = reproduce("remark-4.3", {"n_paths": 3}, runner=runner)
        partial = report.checks[0]

        assert [check.name for check in report.checks] == ["partial-sum", "numeric-convergent", "numeric-tv-growing"]
        assert partial.value == pytest.approx(-math.log(2), abs=1e-3)
        assert report.passed

    def test_heavy_tail_recipe(self, runner: EnsembleRunner) -> None:  # noqa: F811
        report = reproduce("ex-5.16", {"n_paths": 6}, runner=runner)

        assert report.name == "ex-5.9"
        assert [check.name for check in report.checks] == ["diverged-L"]
        assert report.criteria[0].notes
        assert report.passed
