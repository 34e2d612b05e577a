import numpy as np
import pytest

from jumplab import CadlagPath, InvalidParametersException, stoch_exp
from jumplab.stopping import (
    DeterministicTime,
    FirstCrossing,
    default_family,
    parse_family,
    parse_rule,
    stopping_time,
)
from tests.fixutres.paths import jump_path  # noqa: F401


def targets_for(path: CadlagPath) -> dict[str, CadlagPath]:
    return {"X": path, "logZ": stoch_exp(path).exponential.log_path}


class TestParseRule:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("t=4", DeterministicTime(t=4.0)),
            ("cross:Z>=2", FirstCrossing(target="Z", level=2.0, direction="above")),
            ("cross:|X|>=3", FirstCrossing(target="X", level=3.0, direction="abs")),
            ("cross:X<=-1", FirstCrossing(target="X", level=-1.0, direction="below")),
            (" cross:QV >= 0.5 ", FirstCrossing(target="QV", level=0.5, direction="above")),
        ],
    )
    def test_parse(self, text: str, expected: DeterministicTime | FirstCrossing) -> None:
        assert parse_rule(text) == expected

    @pytest.mark.parametrize("text", ["t=abc", "t=-1", "cross:|X>=3", "cross:|X|<=3", "stop:X>=1", ""])
    def test_bad_rules(self, text: str) -> None:
        with pytest.raises(InvalidParametersException):
            parse_rule(text)

    def test_labels_round_trip(self) -> None:
        texts = ["t=4", "cross:Z>=2", "cross:|X|>=3", "cross:X<=-1"]
        assert parse_family(texts).labels() == texts


class TestStoppingTime:
    def test_deterministic_time_is_capped(self, jump_path: CadlagPath) -> None:  # noqa: F811
        targets = targets_for(jump_path)
        assert stopping_time(DeterministicTime(t=2.5), targets, 4.0) == 2.5
        assert stopping_time(DeterministicTime(t=10.0), targets, 4.0) == 4.0

    def test_crossings(self, jump_path: CadlagPath) -> None:  # noqa: F811
        targets = targets_for(jump_path)
        assert stopping_time(parse_rule("cross:X>=1"), targets, 4.0) == 3.0
        assert stopping_time(parse_rule("cross:X>=10"), targets, 4.0) == 4.0

    def test_exponential_crossing_reads_log(self, jump_path: CadlagPath) -> None:  # noqa: F811
        targets = targets_for(jump_path)
        assert stopping_time(parse_rule("cross:Z>=1.4"), targets, 4.0) == 1.0
        assert stopping_time(parse_rule("cross:Z>=2"), targets, 4.0) == 3.0

    def test_exponential_crossing_must_be_upward(self, jump_path: CadlagPath) -> None:  # noqa: F811
        targets = targets_for(jump_path)
        with pytest.raises(InvalidParametersException):
            stopping_time(parse_rule("cross:Z<=0.5"), targets, 4.0)

        with pytest.raises(InvalidParametersException):
            stopping_time(FirstCrossing(target="Z", level=0.0, direction="above"), targets, 4.0)

    def test_unknown_target(self, jump_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(InvalidParametersException):
            stopping_time(parse_rule("cross:N>=1"), targets_for(jump_path), 4.0)


class TestStoppingFamily:
    def test_default_family(self) -> None:
        family = default_family(64.0)
        assert len(family.rules) == 15
        assert family.labels()[:2] == ["t=64", "t=32"]
        assert "cross:Z>=32" in family.labels()
        assert "cross:criterion>=8" in family.labels()

    def test_evaluate(self, jump_path: CadlagPath) -> None:  # noqa: F811
        family = parse_family(["t=1", "cross:X>=1", "cross:Z>=100"])
        times = family.evaluate(targets_for(jump_path), 4.0)
        assert np.allclose(times, [1.0, 3.0, 4.0])

    def test_coarsened(self) -> None:
        family = parse_family(["t=1", "t=2", "t=3"])
        assert family.coarsened().labels() == ["t=1", "t=3"]

    def test_empty_family(self) -> None:
        with pytest.raises(ValueError):
            parse_family([])