import math

import pytest

from jumplab import EnsembleRunner, InvalidParametersException, UnsupportedModelException, preset
from jumplab.criteria import CriterionSpec
from jumplab.follmer_mc import (
    PathStatistic,
    duality_check,
    extended_local_diag,
    parse_statistic,
    reciprocal_consistency,
    tilt_model,
    ui_probe,
)
from jumplab.models import DeterministicSeries, SequenceSpec
from jumplab.stopping import DeterministicTime, parse_rule
from tests.fixutres.paths import runner  # noqa: F401


class TestTiltModel:
    def test_certificate_masses(self) -> None:
        pair = tilt_model(preset("ui-summable", 6))
        assert len(pair.tilt_certificate) == 6
        assert pair.max_mass_defect() < 1e-12

        for row in pair.tilt_certificate:
            tilted = [(1 + x) * p for x, p in zip(row.p_sizes, row.p_masses)]
            assert sorted(row.q_masses) == pytest.approx(sorted(tilted))

    def test_zero_model(self) -> None:
        pair = tilt_model(preset("zero", 3))
        assert pair.max_mass_defect() == 0.0
        assert pair.q_model.horizon == 3
        assert pair.density_tilt is None

    def test_non_martingale(self) -> None:
        with pytest.raises(UnsupportedModelException):
            tilt_model(DeterministicSeries(x=SequenceSpec(family="alternating_harmonic"), horizon=5))


class TestPathStatistic:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("one", PathStatistic(kind="one")),
            ("tanh", PathStatistic(kind="tanh")),
            ("indicator:X<=0", PathStatistic(kind="below", upper=0.0)),
            ("indicator:X>=-1.5", PathStatistic(kind="above", lower=-1.5)),
            ("box:-1,2", PathStatistic(kind="box", lower=-1.0, upper=2.0)),
        ],
    )
    def test_parse(self, text: str, expected: PathStatistic) -> None:
        assert parse_statistic(text) == expected

    @pytest.mark.parametrize("text", ["", "two", "indicator:Y<=0", "box:1"])
    def test_bad_statistic(self, text: str) -> None:
        with pytest.raises(InvalidParametersException):
            parse_statistic(text)

    def test_values(self) -> None:
        assert parse_statistic("box:-1,2")(2.0) == 1.0
        assert parse_statistic("box:-1,2")(2.5) == 0.0
        assert parse_statistic("indicator:X<=0")(0.0) == 1.0
        assert parse_statistic("exp_neg_abs")(-1.0) == pytest.approx(math.exp(-1))


class TestDualityCheck:
    def test_zero_model(self, runner: EnsembleRunner) -> None:  # noqa: F811
        pair = tilt_model(preset("zero", 4))
        result = duality_check(pair, DeterministicTime(t=4.0), PathStatistic(kind="one"), 8, 5, runner=runner)
        assert result.lhs == pytest.approx(1.0)
        assert result.rhs == pytest.approx(1.0)
        assert result.passed
        assert result.rule == "t=4"

    def test_crossing_rule(self, runner: EnsembleRunner) -> None:  # noqa: F811
        pair = tilt_model(preset("zero", 4))
        G = parse_statistic("indicator:X<=0")
        result = duality_check(pair, parse_rule("cross:|X|>=1"), G, 6, 2, runner=runner)
        assert result.lhs == pytest.approx(1.0)
        assert result.passed

    def test_one_sided_target(self, runner: EnsembleRunner) -> None:  # noqa: F811
        pair = tilt_model(preset("zero", 4))
        with pytest.raises(InvalidParametersException):
            duality_check(pair, parse_rule("cross:criterion>=8"), PathStatistic(kind="one"), 4, 1, runner=runner)


class TestUiProbe:
    def test_zero_model_is_flat(self, runner: EnsembleRunner) -> None:  # noqa: F811
        probe = ui_probe(tilt_model(preset("zero", 4)), [1.0, 2.0, 4.0], 6, 3, runner=runner)
        assert probe.trend == "flat"
        assert [row.horizon for row in probe.rows] == [1.0, 2.0, 4.0]
        for row in probe.rows:
            assert row.p_mean == pytest.approx(1.0)
            assert row.p_truncated == pytest.approx(1.0)
            assert row.q_no_explosion == pytest.approx(1.0)

    @pytest.mark.parametrize("horizons", [[], [2.0, 1.0], [1.0, 1.0]])
    def test_bad_horizons(self, horizons: list[float]) -> None:
        with pytest.raises(InvalidParametersException):
            ui_probe(tilt_model(preset("zero", 4)), horizons, 4, 1)


class TestReciprocalConsistency:
    def test_zero_model(self, runner: EnsembleRunner) -> None:  # noqa: F811
        result = reciprocal_consistency(tilt_model(preset("zero", 4)), 4.0, 10, 1, runner=runner)
        assert result.statistic == 0.0
        assert result.p_count == result.q_count == 10
        assert result.passed


class TestExtendedLocalDiag:
    @pytest.mark.parametrize("z_weighted", [False, True])
    def test_zero_model(self, z_weighted: bool, runner: EnsembleRunner) -> None:  # noqa: F811
        diag = extended_local_diag(preset("zero", 4), "X", [1.0, 2.0], 5, 1, z_weighted=z_weighted, runner=runner)
        assert diag.sup_mean == [0.0, 0.0]
        assert diag.coverage == [1.0, 1.0]
        assert diag.nonfinite == 0
        assert diag.z_weighted is z_weighted

    def test_criterion_target_label(self, runner: EnsembleRunner) -> None:  # noqa: F811
        diag = extended_local_diag(
            preset("zero", 4), "criterion", [1.0], 3, 1, criterion=CriterionSpec(tag="LM_A"), runner=runner
        )
        assert diag.target == "criterion:LM_A"

    def test_levels_must_increase(self) -> None:
        with pytest.raises(InvalidParametersException):
            extended_local_diag(preset("zero", 4), "X", [2.0, 1.0], 3, 1)

    def test_unknown_target(self, runner: EnsembleRunner) -> None:  # noqa: F811
        with pytest.raises(InvalidParametersException):
            extended_local_diag(preset("zero", 4), "Y", [1.0], 2, 1, runner=runner)
