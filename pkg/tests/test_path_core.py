import numpy as np
import pytest

from jumplab import (
    CadlagPath,
    InvalidParametersException,
    QueryAfterExplosionException,
    QueryBeyondHorizonException,
    UnsupportedPathException,
)
from jumplab.path_core import (
    first_crossing,
    left_limit,
    linear_combination,
    sup_abs,
    tail_oscillation,
    total_variation,
    value_at,
    zero_path,
)
from tests.fixutres.paths import drift_path, jump_path  # noqa: F401


class TestCadlagPath:
    def test_values_are_right_continuous(self, jump_path: CadlagPath) -> None:  # noqa: F811
        values = jump_path.values([0.0, 1.0, 1.5, 2.0, 3.0, 4.0])
        assert np.allclose(values, [0.0, 0.5, 0.5, 0.25, 1.25, 1.25])

    def test_left_limits(self, jump_path: CadlagPath) -> None:  # noqa: F811
        assert left_limit(jump_path, 1.0) == 0.0
        assert left_limit(jump_path, 2.0) == pytest.approx(0.5)
        assert left_limit(jump_path, 3.0) == pytest.approx(0.25)
        assert left_limit(jump_path, 0.0) == jump_path.initial

    def test_zero_jumps_are_dropped(self) -> None:
        path = CadlagPath.pure_jump([(1.0, 0.0), (2.0, 1.0)], horizon=3.0)
        assert path.jump_times.tolist() == [2.0]
        assert path.jumps[0].size == 1.0

    def test_drift_is_integrated(self, drift_path: CadlagPath) -> None:  # noqa: F811
        assert value_at(drift_path, 2.0) == pytest.approx(1.0)
        assert left_limit(drift_path, 2.0) == pytest.approx(2.0)
        assert value_at(drift_path, 4.0) == pytest.approx(2.0)
        assert not drift_path.is_pure_jump
        assert drift_path.drift_segments == [(0.0, 4.0, 0.5)]

    def test_stopped(self, jump_path: CadlagPath) -> None:  # noqa: F811
        stopped = jump_path.stopped(2.5)
        assert stopped.jump_times.tolist() == [1.0, 2.0]
        assert value_at(stopped, 4.0) == pytest.approx(0.25)

    @pytest.mark.parametrize(
        "times, sizes, horizon",
        [
            ([2.0, 1.0], [1.0, 1.0], 3.0),
            ([0.0], [1.0], 3.0),
            ([4.0], [1.0], 3.0),
            ([1.0, 2.0], [1.0], 3.0),
            ([1.0], [np.nan], 3.0),
            ([1.0], [1.0], -1.0),
        ],
    )
    def test_invalid_construction(self, times: list[float], sizes: list[float], horizon: float) -> None:
        with pytest.raises(InvalidParametersException):
            CadlagPath(0.0, np.array(times), np.array(sizes), horizon)

    def test_query_beyond_horizon(self, jump_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(QueryBeyondHorizonException):
            value_at(jump_path, 5.0)

        with pytest.raises(QueryBeyondHorizonException):
            value_at(jump_path, -1.0)

    def test_query_after_explosion(self) -> None:
        path = CadlagPath(0.0, np.empty(0), np.empty(0), 4.0, explosion_time=2.0)
        assert path.last_time() < 2.0

        with pytest.raises(QueryAfterExplosionException):
            value_at(path, 3.0)

        with pytest.raises(QueryAfterExplosionException):
            tail_oscillation(path, 1.0)


class TestPathFunctionals:
    def test_first_crossing_at_jump(self, jump_path: CadlagPath) -> None:  # noqa: F811
        assert first_crossing(jump_path, 1.0, "above") == 3.0
        assert first_crossing(jump_path, 0.5, "abs") == 1.0

    def test_first_crossing_not_reached(self, jump_path: CadlagPath) -> None:  # noqa: F811
        assert first_crossing(jump_path, 5.0, "above") is None

    def test_first_crossing_on_drift(self, drift_path: CadlagPath) -> None:  # noqa: F811
        crossing = first_crossing(drift_path, 1.5, "above")
        assert crossing == pytest.approx(1.0, abs=1e-9)

    def test_first_crossing_negative_abs_level(self, jump_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(InvalidParametersException):
            first_crossing(jump_path, -1.0, "abs")

    def test_tail_oscillation(self, jump_path: CadlagPath) -> None:  # noqa: F811
        assert tail_oscillation(jump_path, 1.5) == pytest.approx(1.0)
        assert tail_oscillation(jump_path, 3.5) == pytest.approx(0.0)

        with pytest.raises(QueryBeyondHorizonException):
            tail_oscillation(jump_path, 5.0)

    def test_sup_and_variation(self, jump_path: CadlagPath, drift_path: CadlagPath) -> None:  # noqa: F811
        assert sup_abs(jump_path) == pytest.approx(1.25)
        assert total_variation(jump_path) == pytest.approx(1.75)
        assert total_variation(drift_path) == pytest.approx(3.0)

    def test_linear_combination(self, jump_path: CadlagPath) -> None:  # noqa: F811
        combined = linear_combination((2.0, jump_path), (-1.0, jump_path))
        assert np.allclose(combined.jump_sizes, jump_path.jump_sizes)

        cancelled = linear_combination((1.0, jump_path), (-1.0, jump_path))
        assert cancelled.jump_times.size == 0

    def test_linear_combination_errors(self, jump_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(InvalidParametersException):
            linear_combination()

        with pytest.raises(UnsupportedPathException):
            linear_combination((1.0, jump_path), (1.0, zero_path(10.0)))
