import math

import numpy as np
import pytest

from jumplab import (
    CadlagPath,
    CompensatorSpec,
    DomainException,
    InvalidParametersException,
    JumpBelowMinusOneException,
    NotNonnegativeException,
    RevivesAfterZeroException,
    UnsupportedPathException,
    stoch_exp,
    stoch_log,
)
from jumplab.functionals import Atom, functional
from jumplab.path_core import ConstantDrift, ContinuousPart, value_at
from jumplab.stochexp import (
    log_exponential,
    log_transform,
    phi,
    pushforward_check,
    pushforward_check_nu,
    reciprocal_identity_deviation,
    reciprocal_log,
)
from tests.fixutres.paths import absorbed_path, drift_path, jump_path, martingale_path  # noqa: F401


def mean_zero_atoms(times: tuple[float, ...]) -> CompensatorSpec:
    return CompensatorSpec(atoms=tuple(Atom(time=t, sizes=(1.0, -0.5), masses=(1 / 3, 2 / 3)) for t in times))


class TestStochasticExponential:
    def test_pure_jump_product(self, jump_path: CadlagPath) -> None:  # noqa: F811
        Z = stoch_exp(jump_path).exponential
        assert np.allclose(Z.values([0.0, 1.0, 2.0, 4.0]), [1.0, 1.5, 1.125, 2.25])
        assert float(Z.left_limits(1.0)[0]) == pytest.approx(1.0)
        assert Z.absorption_time is None

    def test_initial_value_is_ignored(self, jump_path: CadlagPath) -> None:  # noqa: F811
        shifted = CadlagPath.pure_jump([(t, s) for t, s in jump_path.jumps], horizon=4.0, initial=3.0)
        assert np.allclose(stoch_exp(shifted).exponential.values(4.0), 2.25)

    def test_absorption(self, absorbed_path: CadlagPath) -> None:  # noqa: F811
        pair = stoch_exp(absorbed_path)
        Z = pair.exponential
        assert pair.absorption_time == 2.0
        assert float(Z.left_limits(2.0)[0]) == pytest.approx(1.5)
        assert np.all(Z.values([2.0, 3.0]) == 0.0)
        assert math.isinf(Z.log_abs_values(3.0)[0])

    def test_jump_below_minus_one(self) -> None:
        X = CadlagPath.pure_jump([(1.0, -2.0)], horizon=2.0)
        with pytest.raises(JumpBelowMinusOneException):
            stoch_exp(X)

        Z = stoch_exp(X, signed=True).exponential
        assert Z.is_signed
        assert float(Z.values(1.5)[0]) == pytest.approx(-1.0)

        with pytest.raises(NotNonnegativeException):
            stoch_log(Z)

    def test_drift(self, drift_path: CadlagPath) -> None:  # noqa: F811
        Z = stoch_exp(drift_path).exponential
        assert float(Z.values(1.0)[0]) == pytest.approx(math.exp(0.5))
        assert float(Z.values(3.0)[0]) == 0.0

    def test_continuous_part(self) -> None:
        part = ContinuousPart(sigma2=1.0, step=0.5, samples=np.array([0.0, 0.3, -0.2]))
        X = CadlagPath(0.0, np.empty(0), np.empty(0), 1.0, continuous=part)
        Z = stoch_exp(X).exponential
        assert float(Z.values(1.0)[0]) == pytest.approx(math.exp(-0.7))

    def test_numeric_zero(self) -> None:
        X = CadlagPath(0.0, np.empty(0), np.empty(0), 1.0, drift=(ConstantDrift(0.0, 1.0, -1000.0),))
        Z = stoch_exp(X).exponential
        assert float(Z.values(1.0)[0]) == 0.0
        assert bool(Z.is_numeric_zero(1.0)[0])
        assert Z.absorption_time is None

    def test_as_pure_jump_path(self, jump_path: CadlagPath, drift_path: CadlagPath) -> None:  # noqa: F811
        Z = stoch_exp(jump_path).exponential.as_pure_jump_path()
        assert Z.initial == 1.0
        assert value_at(Z, 4.0) == pytest.approx(2.25)

        with pytest.raises(UnsupportedPathException):
            stoch_exp(drift_path).exponential.as_pure_jump_path()


class TestStochasticLogarithm:
    def test_round_trip(self, jump_path: CadlagPath) -> None:  # noqa: F811
        back = stoch_log(stoch_exp(jump_path).exponential)
        assert np.allclose(back.jump_times, jump_path.jump_times)
        assert np.allclose(back.jump_sizes, jump_path.jump_sizes, rtol=0, atol=1e-12)

    def test_round_trip_keeps_absorbing_jump(self, absorbed_path: CadlagPath) -> None:  # noqa: F811
        back = stoch_log(stoch_exp(absorbed_path).exponential)
        assert back.jump_sizes.tolist()[-1] == -1.0
        assert back.absorption_time == 2.0

    def test_raw_path(self) -> None:
        Z = CadlagPath.pure_jump([(1.0, 0.5), (2.0, -1.5)], horizon=3.0, initial=1.0)
        X = stoch_log(Z)
        assert np.allclose(X.jump_sizes, [0.5, -1.0])
        assert X.absorption_time == 2.0

    @pytest.mark.parametrize(
        "jumps, initial, error",
        [
            ([(1.0, -2.0)], 1.0, NotNonnegativeException),
            ([(1.0, 1.0)], 0.0, NotNonnegativeException),
            ([(1.0, -1.0), (2.0, 1.0)], 1.0, RevivesAfterZeroException),
        ],
    )
    def test_raw_path_errors(self, jumps: list[tuple[float, float]], initial: float, error: type[Exception]) -> None:
        with pytest.raises(error):
            stoch_log(CadlagPath.pure_jump(jumps, horizon=3.0, initial=initial))

    def test_raw_path_with_drift(self, drift_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(UnsupportedPathException):
            stoch_log(drift_path)


class TestReciprocal:
    def test_phi(self) -> None:
        assert phi(1.0) == -0.5
        assert phi(phi(0.3)) == pytest.approx(0.3)  # type: ignore[arg-type]

        with pytest.raises(DomainException):
            phi(-1.0)

    def test_reciprocal_jumps(self, jump_path: CadlagPath) -> None:  # noqa: F811
        N = reciprocal_log(jump_path)
        assert np.allclose(N.jump_sizes, -jump_path.jump_sizes / (1 + jump_path.jump_sizes))
        assert reciprocal_identity_deviation(jump_path) < 1e-12

    def test_reciprocal_with_drift(self) -> None:
        M = CadlagPath(0.0, np.array([2.0]), np.array([0.5]), 4.0, drift=(ConstantDrift(0.0, 4.0, 0.5),))
        assert reciprocal_identity_deviation(M) < 1e-12

    def test_reciprocal_checks_compensator_support(self) -> None:
        M, comp = martingale_path()
        assert np.allclose(reciprocal_log(M, comp).jump_sizes, reciprocal_log(M).jump_sizes)

        with pytest.raises(InvalidParametersException, match="no mass"):
            reciprocal_log(CadlagPath.pure_jump([(1.0, 0.25)], horizon=4.0), comp)

        with pytest.raises(InvalidParametersException, match="atom grid"):
            reciprocal_log(CadlagPath.pure_jump([(1.5, 1.0)], horizon=4.0), comp)

    def test_reciprocal_domain(self, absorbed_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(DomainException):
            reciprocal_log(absorbed_path)

    def test_pushforward(self, jump_path: CadlagPath) -> None:  # noqa: F811
        for tag in ("identity", "square", "log1p", "xm_log"):
            lhs, rhs = pushforward_check(jump_path, functional(tag), 4.0)  # type: ignore[arg-type]
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_pushforward_compensator(self) -> None:
        lhs, rhs = pushforward_check_nu(mean_zero_atoms((1.0, 2.0)), functional("square"), 3.0)
        assert lhs == pytest.approx(1.0)
        assert rhs == pytest.approx(lhs)


class TestLogTransform:
    def test_log_exponential(self, jump_path: CadlagPath) -> None:  # noqa: F811
        assert value_at(log_exponential(jump_path), 4.0) == pytest.approx(math.log(2.25))

    def test_log_exponential_with_drift(self) -> None:
        M = CadlagPath(0.0, np.array([2.0]), np.array([0.5]), 4.0, drift=(ConstantDrift(0.0, 4.0, 0.5),))
        assert value_at(log_exponential(M), 4.0) == pytest.approx(2.0 + math.log(1.5))

    def test_matches_exponential_for_martingale(self) -> None:
        X = CadlagPath.pure_jump([(1.0, 1.0), (2.0, -0.5), (3.0, 1.0)], horizon=4.0)
        split = log_transform(X, mean_zero_atoms((1.0, 2.0, 3.0)))
        logs = split.log_exponential_values([0.5, 1.0, 2.5, 4.0])
        assert np.allclose(logs, [0.0, math.log(2.0), 0.0, math.log(2.0)])
