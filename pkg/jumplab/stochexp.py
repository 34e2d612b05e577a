from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt
from rcheck import r

from .exceptions import (
    InvalidParametersException,
    JumpBelowMinusOneException,
    NotNonnegativeException,
    RevivesAfterZeroException,
    UnsupportedPathException,
)
from .functionals import (
    Atom,
    CompensatorSpec,
    TestFunction,
    compensator_integral,
    compensator_path,
    jump_integral,
    phi_values,
    quadratic_variation,
)
from .jumplab_types import FloatArray
from .path_core import CadlagPath, ConstantDrift, linear_combination

# |1 + dX| below this is an absorbing jump
ABSORPTION_TOLERANCE = 1e-12
# exp of anything below this is a numeric zero
LOG_FLOOR = -745.0


def phi(x: npt.ArrayLike) -> FloatArray | float:
    """The involution ``-x / (1 + x)`` pairing the jumps of a path and its reciprocal

    Raises
    ------
    DomainException
        When x <= -1
    """
    values = phi_values(x)
    return float(values) if np.ndim(x) == 0 else values


@dataclass(frozen=True)
class ExponentialPath:
    """Stochastic exponential of ``base`` held in log space

    ``log_path`` carries ``log|Z|`` up to the absorption time; after it the
    exponential is exactly zero.
    """

    base: CadlagPath
    log_path: CadlagPath
    flip_times: FloatArray
    absorption_time: Optional[float]

    @property
    def horizon(self) -> float:
        return self.base.horizon

    @property
    def explosion_time(self) -> Optional[float]:
        return self.base.explosion_time

    @property
    def is_signed(self) -> bool:
        return self.flip_times.size > 0

    def _sign_at(self, ts: FloatArray, side: str) -> FloatArray:
        if self.flip_times.size == 0:
            return np.ones_like(ts)
        flips = np.searchsorted(self.flip_times, ts, side=side)  # type: ignore[call-overload]
        return np.where(flips % 2 == 0, 1.0, -1.0)

    def log_abs_values(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        out = self.log_path.values(ts)
        if self.absorption_time is not None:
            out = np.where(ts >= self.absorption_time, -np.inf, out)
        return out

    def log_abs_left_limits(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        out = self.log_path.left_limits(ts)
        if self.absorption_time is not None:
            out = np.where(ts > self.absorption_time, -np.inf, out)
        return out

    def _from_log(self, logs: FloatArray, signs: FloatArray) -> FloatArray:
        with np.errstate(over="ignore"):
            return np.where(logs < LOG_FLOOR, 0.0, signs * np.exp(logs))

    def values(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        return self._from_log(self.log_abs_values(ts), self._sign_at(ts, "right"))

    def left_limits(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        return self._from_log(self.log_abs_left_limits(ts), self._sign_at(ts, "left"))

    def is_numeric_zero(self, ts: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        """Underflowed to zero without being absorbed"""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        logs = self.log_abs_values(ts)
        return np.isfinite(logs) & (logs < LOG_FLOOR)

    def critical_times(self, start: float = 0.0, end: Optional[float] = None) -> FloatArray:
        ts = self.base.critical_times(start, end)
        if self.absorption_time is not None:
            ts = np.unique(np.append(ts, self.absorption_time))
            ts = ts[(ts >= start) & (ts <= (self.base.last_time() if end is None else end))]
        return ts

    def as_pure_jump_path(self) -> CadlagPath:
        """Z as a piecewise constant path, only defined when the base is pure jump"""
        if not self.base.is_pure_jump:
            raise UnsupportedPathException("Exponential of a path with continuous part is not piecewise constant")

        times = self.base.jump_times
        if self.absorption_time is not None:
            times = times[times <= self.absorption_time]

        after = self.values(times) if times.size else np.empty(0)
        before = self.left_limits(times) if times.size else np.empty(0)
        return CadlagPath(
            initial=1.0,
            jump_times=times,
            jump_sizes=after - before,
            horizon=self.horizon,
            absorption_time=self.absorption_time,
        )


@dataclass(frozen=True)
class ExponentialPair:
    base: CadlagPath
    exponential: ExponentialPath
    absorption_time: Optional[float]


@dataclass(frozen=True)
class LogTransform:
    """Local martingale part ``Y`` and exponential compensator ``V`` of ``log E(X)``"""

    Y: CadlagPath
    V: CadlagPath

    def log_exponential_values(self, ts: npt.ArrayLike) -> FloatArray:
        return self.Y.values(ts) - self.V.values(ts)


def _qv_drift(path: CadlagPath, coef: float) -> tuple[ConstantDrift, ...]:
    part = path.continuous
    if part is None or part.qv_rate == 0:
        return ()
    return (ConstantDrift(part.start, min(part.stop, path.horizon), coef * part.qv_rate),)


def stoch_exp(X: CadlagPath, signed: bool = False) -> ExponentialPair:
    """Stochastic exponential ``E(X)``

    Parameters
    ----------
    X : CadlagPath
        Driving path
    signed : bool = False
        Allow jumps below -1, so the exponential changes sign at them

    Raises
    ------
    JumpBelowMinusOneException
        When a jump is below -1 and ``signed`` is False

    Returns
    -------
    stoch_exp : ExponentialPair
        The exponential, with ``absorption_time`` at the first jump equal to -1
    """
    signed = r.check_bool("signed", signed)
    one_plus = 1.0 + X.jump_sizes
    absorbing = np.abs(one_plus) < ABSORPTION_TOLERANCE

    if not signed and np.any((one_plus < 0) & ~absorbing):
        first = X.jump_sizes[(one_plus < 0) & ~absorbing][0]
        raise JumpBelowMinusOneException(f"Jump of size {first} would flip the sign of the exponential")

    absorption: Optional[float] = None
    live = np.ones_like(one_plus, dtype=bool)
    if np.any(absorbing):
        index = int(np.flatnonzero(absorbing)[0])
        absorption = float(X.jump_times[index])
        live[index:] = False

    times = X.jump_times[live]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_jumps = np.where(
            one_plus[live] > 0,
            np.log1p(X.jump_sizes[live]),
            np.log(np.abs(one_plus[live])),
        )

    log_path = CadlagPath(
        initial=0.0,
        jump_times=times,
        jump_sizes=log_jumps,
        horizon=X.horizon,
        drift=(*X.drift, *_qv_drift(X, -0.5)),
        continuous=X.continuous,
        absorption_time=absorption,
        explosion_time=X.explosion_time,
    )
    flip_times = times[one_plus[live] < 0]

    exponential = ExponentialPath(X, log_path, flip_times, absorption)
    return ExponentialPair(X, exponential, absorption)


def _log_of_raw(Z: CadlagPath) -> CadlagPath:
    if not Z.is_pure_jump:
        raise UnsupportedPathException("stoch_log of a raw path needs a pure-jump path")

    if Z.initial <= 0:
        raise NotNonnegativeException(f"Path starts at {Z.initial}")

    times = Z.jump_times
    before = Z.left_limits(times) if times.size else np.empty(0)
    after = Z.values(times) if times.size else np.empty(0)

    if np.any(after < 0):
        raise NotNonnegativeException(f"Path goes negative at t={times[after < 0][0]}")

    dead = before == 0
    if np.any(dead):
        raise RevivesAfterZeroException(f"Path leaves zero at t={times[dead][0]}")

    sizes = (after - before) / before
    zero = after == 0
    absorption: Optional[float] = None
    if np.any(zero):
        index = int(np.flatnonzero(zero)[0])
        absorption = float(times[index])
        sizes[index] = -1.0

    return CadlagPath(0.0, times, sizes, Z.horizon, absorption_time=absorption)


def stoch_log(Z: ExponentialPath | CadlagPath) -> CadlagPath:
    """Stochastic logarithm, the inverse of ``stoch_exp``

    Raises
    ------
    NotNonnegativeException
        When a raw path is negative somewhere
    RevivesAfterZeroException
        When a raw path leaves zero after hitting it
    UnsupportedPathException
        When a raw path has a continuous part
    """
    if isinstance(Z, CadlagPath):
        return _log_of_raw(Z)

    if Z.is_signed:
        raise NotNonnegativeException("Signed exponential has no stochastic logarithm")

    log_path = Z.log_path
    sizes = np.expm1(log_path.jump_sizes)
    times = log_path.jump_times

    if Z.absorption_time is not None:
        times = np.append(times, Z.absorption_time)
        sizes = np.append(sizes, -1.0)

    base = Z.base
    return CadlagPath(
        initial=0.0,
        jump_times=times,
        jump_sizes=sizes,
        horizon=base.horizon,
        drift=base.drift,
        continuous=base.continuous,
        absorption_time=Z.absorption_time,
        explosion_time=base.explosion_time,
    )


def _check_support(M: CadlagPath, comp: CompensatorSpec) -> None:
    for t, x in zip(M.jump_times.tolist(), M.jump_sizes.tolist()):
        atom = comp.atom_at(t)
        if atom is None:
            if comp.rate_density is None:
                raise InvalidParametersException(f"Jump at t={t} is off the compensator's atom grid")
            continue
        if atom.heavy_tail is not None:
            continue
        live = [s for s, m in zip(atom.sizes, atom.masses) if m > 0]
        if not any(math.isclose(x, s, rel_tol=1e-9, abs_tol=1e-12) for s in live):
            raise InvalidParametersException(f"Jump {x} at t={t} has no mass under the compensator")


def reciprocal_log(M: CadlagPath, comp: Optional[CompensatorSpec] = None) -> CadlagPath:
    """``N = -M + [M^c, M^c] + x^2 / (1 + x) * mu``, so that ``E(M) E(N) = 1``

    Jumps are computed directly as ``phi`` of the jumps of ``M``. When ``comp``
    is given every jump of ``M`` must carry mass under it.

    Raises
    ------
    DomainException
        When a jump of M is at or below -1
    InvalidParametersException
        When a jump of M has no mass under ``comp``
    """
    if comp is not None:
        _check_support(M, comp)
    part = M.continuous
    return CadlagPath(
        initial=0.0,
        jump_times=M.jump_times,
        jump_sizes=phi_values(M.jump_sizes),
        horizon=M.horizon,
        drift=(*(term.scaled(-1.0) for term in M.drift), *_qv_drift(M, 1.0)),
        continuous=None if part is None else part.scaled(-1.0),
        explosion_time=M.explosion_time,
    )


def pushforward_check(M: CadlagPath, fn: TestFunction, t: float) -> tuple[float, float]:
    """``(F * mu^M_t, (F o phi) * mu^N_t)``, equal by construction of N"""
    N = reciprocal_log(M)
    lhs = float(jump_integral(M, fn).values(t)[0])
    sizes = N.jump_sizes_until(t)
    rhs = float(fn(phi_values(sizes)).sum()) if sizes.size else 0.0
    return lhs, rhs


def pushforward_compensator(comp: CompensatorSpec) -> CompensatorSpec:
    """Compensator of the reciprocal's jumps under the same measure"""
    atoms = tuple(
        Atom(time=atom.time, sizes=tuple(phi_values(atom.sizes).tolist()), masses=atom.masses)
        for atom in comp.atoms
    )
    density = comp.rate_density
    if density is not None:
        density = density.model_copy(update={"reflected": not density.reflected})
    return CompensatorSpec(atoms=atoms, rate_density=density)


def pushforward_check_nu(comp: CompensatorSpec, fn: TestFunction, t: float) -> tuple[float, float]:
    """``(F * nu^M_t, (F o phi) * nu^N_t)`` for analytic compensators without heavy tails

    The right side integrates the composed function by quadrature, so the two
    sides agree to quadrature tolerance.
    """
    if any(atom.heavy_tail is not None for atom in comp.atoms):
        raise UnsupportedPathException("Heavy-tailed atoms have no reciprocal pushforward check")

    lhs = compensator_integral(comp, fn, t, allow_infinite=True)
    reciprocal = pushforward_compensator(comp)

    def composed(y: FloatArray) -> FloatArray:
        return fn(phi_values(y))

    rhs = sum(atom.integrate(composed) for atom in reciprocal.atoms_until(t))
    if reciprocal.rate_density is not None:
        rhs += reciprocal.rate_density.integrate(composed, t)

    return lhs, float(rhs)


def log_transform(X: CadlagPath, comp: CompensatorSpec) -> LogTransform:
    """``Y = X^c + log(1+x) * (mu - nu)`` and ``V = [X^c]/2 + (x - log(1+x)) * nu``

    Raises
    ------
    CompensatorDivergesException
        When ``(x - log(1+x)) * nu`` or ``log(1+x) * nu`` is infinite before the horizon
    DomainException
        When a jump of X is at or below -1
    """
    log1p = TestFunction(tag="log1p")
    xm_log = TestFunction(tag="xm_log")

    jumps = CadlagPath(
        initial=0.0,
        jump_times=X.jump_times,
        jump_sizes=log1p(X.jump_sizes),
        horizon=X.horizon,
        continuous=X.continuous,
    )
    Y = linear_combination((1.0, jumps), (1.0, compensator_path(comp, log1p, X, coef=-1.0)))

    qv_half = CadlagPath(0.0, np.empty(0), np.empty(0), X.horizon, drift=_qv_drift(X, 0.5))
    V = linear_combination((1.0, qv_half), (1.0, compensator_path(comp, xm_log, X)))
    return LogTransform(Y, V)


def log_exponential(X: CadlagPath) -> CadlagPath:
    """``log E(X) = X - X_0 - [X^c]/2 - (x - log(1+x)) * mu`` for jumps above -1"""
    qv = quadratic_variation(X)
    qv_continuous = CadlagPath(0.0, np.empty(0), np.empty(0), X.horizon, drift=qv.drift)
    return linear_combination(
        (1.0, X.centered()),
        (-0.5, qv_continuous),
        (-1.0, jump_integral(X, TestFunction(tag="xm_log"))),
    )


def reciprocal_identity_deviation(M: CadlagPath) -> float:
    """Largest ``|E(M) E(N) - 1|`` over the event times of M"""
    N = reciprocal_log(M)
    z_m = stoch_exp(M).exponential
    z_n = stoch_exp(N).exponential
    ts = M.critical_times()
    logs = z_m.log_abs_values(ts) + z_n.log_abs_values(ts)
    return float(np.max(np.abs(np.expm1(logs))))

