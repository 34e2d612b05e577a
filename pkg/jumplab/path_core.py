from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt
from scipy import optimize

from .exceptions import (
    InvalidParametersException,
    QueryAfterExplosionException,
    QueryBeyondHorizonException,
    UnsupportedPathException,
)
from .jumplab_types import Direction, FloatArray

_HORIZON_SLACK = 1e-12
# points per unit time used to resolve drifts that are not piecewise linear
_REFINEMENT = 64


def _frozen(values: npt.ArrayLike) -> FloatArray:
    array = np.array(values, dtype=np.float64).reshape(-1)
    array.setflags(write=False)
    return array


class JumpEvent(NamedTuple):
    time: float
    size: float


@runtime_checkable
class DriftTerm(Protocol):
    """Absolutely continuous finite-variation piece of a path"""

    is_linear: bool

    def integral(self, ts: FloatArray) -> FloatArray: ...

    def breakpoints(self) -> FloatArray: ...

    def scaled(self, c: float) -> DriftTerm: ...

    def stopped(self, at: float) -> DriftTerm: ...


@dataclass(frozen=True)
class ConstantDrift:
    start: float
    end: float
    rate: float
    is_linear: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        if not self.end >= self.start >= 0:
            raise InvalidParametersException(
                f"Drift segment needs 0 <= start <= end, got [{self.start}, {self.end}]"
            )

    def integral(self, ts: FloatArray) -> FloatArray:
        elapsed = np.clip(np.asarray(ts, dtype=np.float64) - self.start, 0.0, self.end - self.start)
        return self.rate * elapsed

    def breakpoints(self) -> FloatArray:
        return np.array([self.start, self.end], dtype=np.float64)

    def scaled(self, c: float) -> ConstantDrift:
        return ConstantDrift(self.start, self.end, self.rate * c)

    def stopped(self, at: float) -> ConstantDrift:
        return ConstantDrift(self.start, max(self.start, min(self.end, at)), self.rate)


@dataclass(frozen=True)
class ContinuousPart:
    """Continuous local martingale part driven by a sampled motion

    ``samples`` holds the driving motion on ``start + k * step``; the path's
    value is ``scale`` times its linear interpolant. The quadratic variation is
    carried analytically as ``sigma2 * scale**2`` per unit time and does not
    depend on the samples. Two parts with the same ``label`` share the same
    driving motion.
    """

    sigma2: float
    scale: float = 1.0
    start: float = 0.0
    stop: float = math.inf
    step: Optional[float] = None
    samples: Optional[FloatArray] = None
    label: str = "W"

    def __post_init__(self) -> None:
        if self.sigma2 < 0:
            raise InvalidParametersException(f"Negative quadratic variation rate: {self.sigma2}")

        if self.samples is not None:
            if self.step is None or self.step <= 0:
                raise InvalidParametersException("Sampled motion needs a positive grid step")
            object.__setattr__(self, "samples", _frozen(self.samples))

    @property
    def qv_rate(self) -> float:
        return self.sigma2 * self.scale**2

    def qv(self, ts: FloatArray) -> FloatArray:
        elapsed = np.clip(np.asarray(ts, dtype=np.float64) - self.start, 0.0, self.stop - self.start)
        return self.qv_rate * elapsed

    def grid_times(self) -> FloatArray:
        if self.samples is None or self.step is None:
            return np.empty(0)
        return self.start + self.step * np.arange(self.samples.size)

    def values(self, ts: FloatArray) -> FloatArray:
        ts = np.asarray(ts, dtype=np.float64)
        if self.samples is None or self.scale == 0:
            return np.zeros_like(ts)
        return self.scale * np.interp(np.minimum(ts, self.stop), self.grid_times(), self.samples)

    def scaled(self, c: float) -> ContinuousPart:
        return replace(self, scale=self.scale * c)

    def stopped(self, at: float) -> ContinuousPart:
        return replace(self, stop=min(self.stop, max(at, self.start)))


@dataclass(frozen=True)
class CadlagPath:
    """One simulated trajectory on ``[0, horizon]``

    Zero jumps are dropped on construction. When ``absorption_time`` is set the
    drift and continuous parts are stopped there.
    """

    initial: float
    jump_times: FloatArray
    jump_sizes: FloatArray
    horizon: float
    drift: tuple[DriftTerm, ...] = ()
    continuous: Optional[ContinuousPart] = None
    absorption_time: Optional[float] = None
    explosion_time: Optional[float] = None

    def __post_init__(self) -> None:
        times = _frozen(self.jump_times)
        sizes = _frozen(self.jump_sizes)

        if times.size != sizes.size:
            raise InvalidParametersException("jump_times and jump_sizes differ in length")

        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidParametersException(f"Horizon must be positive and finite, got {self.horizon}")

        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(sizes)):
            raise InvalidParametersException("Jump times and sizes must be finite")

        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise InvalidParametersException("Jump times must be positive and strictly increasing")

        if times.size and times[-1] > self.horizon * (1 + _HORIZON_SLACK):
            raise InvalidParametersException("Jump after the horizon")

        if self.explosion_time is not None and times.size and times[-1] >= self.explosion_time:
            raise InvalidParametersException("Jump at or after the explosion time")

        keep = sizes != 0
        if not np.all(keep):
            times, sizes = _frozen(times[keep]), _frozen(sizes[keep])

        drift = tuple(self.drift)
        continuous = self.continuous
        if self.absorption_time is not None:
            if times.size and times[-1] > self.absorption_time:
                raise InvalidParametersException("Jump after the absorption time")
            drift = tuple(term.stopped(self.absorption_time) for term in drift)
            if continuous is not None:
                continuous = continuous.stopped(self.absorption_time)

        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_sizes", sizes)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "continuous", continuous)

    @classmethod
    def pure_jump(
        cls,
        jumps: list[tuple[float, float]],
        horizon: float,
        initial: float = 0.0,
    ) -> CadlagPath:
        times = [t for t, _ in jumps]
        sizes = [s for _, s in jumps]
        return cls(initial, np.asarray(times, dtype=np.float64), np.asarray(sizes, dtype=np.float64), horizon)

    @property
    def jumps(self) -> tuple[JumpEvent, ...]:
        return tuple(JumpEvent(float(t), float(s)) for t, s in zip(self.jump_times, self.jump_sizes))

    @property
    def diffusion_qv_rate(self) -> float:
        return 0.0 if self.continuous is None else self.continuous.qv_rate

    @property
    def drift_segments(self) -> list[tuple[float, float, float]]:
        return [(d.start, d.end, d.rate) for d in self.drift if isinstance(d, ConstantDrift)]

    @property
    def is_pure_jump(self) -> bool:
        return not self.drift and self.diffusion_qv_rate == 0

    def _check_times(self, ts: FloatArray) -> None:
        if ts.size == 0:
            return

        if np.any(ts < 0):
            raise QueryBeyondHorizonException(f"Negative time queried: {ts.min()}")

        if self.explosion_time is not None and np.any(ts >= self.explosion_time):
            raise QueryAfterExplosionException(
                f"Path explodes at {self.explosion_time}, queried up to {ts.max()}"
            )

        if np.any(ts > self.horizon * (1 + _HORIZON_SLACK)):
            raise QueryBeyondHorizonException(f"Horizon is {self.horizon}, queried up to {ts.max()}")

    def continuous_values(self, ts: npt.ArrayLike) -> FloatArray:
        """Drift plus continuous martingale part, without jumps or initial value"""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        out = np.zeros_like(ts)

        for term in self.drift:
            out = out + term.integral(ts)

        if self.continuous is not None:
            out = out + self.continuous.values(ts)

        return out

    def diffusion_qv(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if self.continuous is None:
            return np.zeros_like(ts)
        return self.continuous.qv(ts)

    def _jump_sums(self, ts: FloatArray, side: str) -> FloatArray:
        if self.jump_sizes.size == 0:
            return np.zeros_like(ts)

        cumulative = np.concatenate(([0.0], np.cumsum(self.jump_sizes)))
        index = np.searchsorted(self.jump_times, ts, side=side)  # type: ignore[call-overload]
        return cumulative[index]

    def values(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        self._check_times(ts)
        return self.initial + self._jump_sums(ts, "right") + self.continuous_values(ts)

    def left_limits(self, ts: npt.ArrayLike) -> FloatArray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        self._check_times(ts)
        return self.initial + self._jump_sums(ts, "left") + self.continuous_values(ts)

    def jump_sizes_until(self, t: float) -> FloatArray:
        return self.jump_sizes[: np.searchsorted(self.jump_times, t, side="right")]

    def last_time(self) -> float:
        """Largest time that can be queried"""
        if self.explosion_time is not None and self.explosion_time <= self.horizon:
            return float(np.nextafter(self.explosion_time, 0.0))
        return self.horizon

    def critical_times(self, start: float = 0.0, end: Optional[float] = None) -> FloatArray:
        """Times between which the path is continuous and, apart from analytic drift, linear"""
        end = self.last_time() if end is None else end
        pieces = [np.array([start, end]), self.jump_times]

        for term in self.drift:
            pieces.append(term.breakpoints())
            if not term.is_linear:
                count = max(2, int(math.ceil((end - start) * _REFINEMENT)) + 1)
                pieces.append(np.linspace(start, end, count))

        if self.continuous is not None:
            pieces.append(self.continuous.grid_times())
            pieces.append(np.array([self.continuous.start, self.continuous.stop]))

        ts = np.unique(np.concatenate(pieces))
        return ts[(ts >= start) & (ts <= end)]

    def centered(self) -> CadlagPath:
        return replace(self, initial=0.0)

    def stopped(self, at: float) -> CadlagPath:
        keep = self.jump_times <= at
        return replace(
            self,
            jump_times=self.jump_times[keep],
            jump_sizes=self.jump_sizes[keep],
            drift=tuple(term.stopped(at) for term in self.drift),
            continuous=None if self.continuous is None else self.continuous.stopped(at),
        )


def value_at(path: CadlagPath, t: float) -> float:
    """Value of the path at time t, right-continuous at jumps

    Raises
    ------
    QueryAfterExplosionException
        When t is at or after the explosion time
    QueryBeyondHorizonException
        When t is negative or after the horizon
    """
    return float(path.values(t)[0])


def left_limit(path: CadlagPath, t: float) -> float:
    """Left limit of the path at t, with the convention that it equals the initial value at 0"""
    return float(path.left_limits(t)[0])


def _hits(values: FloatArray, level: float, direction: Direction) -> npt.NDArray[np.bool_]:
    match direction:
        case "abs":
            return np.abs(values) >= level
        case "above":
            return values >= level
        case "below":
            return values <= level


def _distance(value: float, level: float, direction: Direction) -> float:
    match direction:
        case "abs":
            return abs(value) - level
        case "above":
            return value - level
        case "below":
            return level - value


def first_crossing(
    path: CadlagPath,
    level: float,
    direction: Direction = "abs",
    start: float = 0.0,
) -> Optional[float]:
    """First time after ``start`` the path reaches ``level``

    Parameters
    ----------
    path : CadlagPath
        Path to scan
    level : float
        Crossing level. For ``direction="abs"`` it must be nonnegative
    direction : Literal["above", "below", "abs"] = "abs"
        ``abs`` looks for ``|X_t| >= level``
    start : float = 0.0
        Scan starts here

    Returns
    -------
    first_crossing : float | None
        ``inf{t >= start : X_t reaches level}`` or None when it is not reached by
        the last queryable time
    """
    if direction == "abs" and level < 0:
        raise InvalidParametersException(f"Crossing level must be nonnegative, got {level}")

    ts = path.critical_times(start)
    values = path.values(ts)
    lefts = path.left_limits(ts)
    hit_values = _hits(values, level, direction)
    hit_lefts = _hits(lefts, level, direction)
    hit_lefts[0] = False

    candidates = np.flatnonzero(hit_values | hit_lefts)
    if candidates.size == 0:
        return None

    i = int(candidates[0])
    if not hit_lefts[i]:
        return float(ts[i])

    lo, hi = float(ts[i - 1]), float(ts[i])

    def distance(s: float) -> float:
        return _distance(float(path.left_limits(s)[0]), level, direction)

    if distance(lo) >= 0:
        return lo

    return float(optimize.brentq(distance, lo, hi, xtol=1e-12))


def tail_oscillation(path: CadlagPath, window_start: float) -> float:
    """Range of the path over ``[window_start, horizon]``

    Raises
    ------
    QueryAfterExplosionException
        When the path explodes inside the window
    """
    if path.explosion_time is not None and path.explosion_time <= path.horizon:
        raise QueryAfterExplosionException(
            f"Window [{window_start}, {path.horizon}] meets the explosion at {path.explosion_time}"
        )

    if not 0 <= window_start <= path.horizon:
        raise QueryBeyondHorizonException(f"Window start {window_start} outside [0, {path.horizon}]")

    ts = path.critical_times(window_start, path.horizon)
    seen = np.concatenate((path.values(ts), path.left_limits(ts[ts > window_start])))
    return float(seen.max() - seen.min())


def sup_abs(path: CadlagPath, end: Optional[float] = None) -> float:
    ts = path.critical_times(0.0, end)
    return float(max(np.abs(path.values(ts)).max(), np.abs(path.left_limits(ts)).max()))


def total_variation(path: CadlagPath, end: Optional[float] = None) -> float:
    """Variation of the path on [0, end], exact for piecewise monotone drift"""
    ts = path.critical_times(0.0, end)
    continuous = np.abs(np.diff(path.continuous_values(ts))).sum()
    return float(np.abs(path.jump_sizes_until(ts[-1])).sum() + continuous)


def linear_combination(*terms: tuple[float, CadlagPath]) -> CadlagPath:
    """Path ``sum(c * X)`` over the given ``(c, X)`` pairs

    All paths must share the horizon. Continuous parts must be driven by the
    same motion (same label, start and stop).
    """
    if not terms:
        raise InvalidParametersException("linear_combination needs at least one term")

    horizon = terms[0][1].horizon
    if any(not math.isclose(p.horizon, horizon) for _, p in terms):
        raise UnsupportedPathException("Paths in a linear combination must share the horizon")

    times = np.concatenate([p.jump_times for _, p in terms])
    sizes = np.concatenate([c * p.jump_sizes for c, p in terms])
    merged_times, inverse = np.unique(times, return_inverse=True)
    merged_sizes = np.bincount(inverse, weights=sizes, minlength=merged_times.size)

    drift: list[DriftTerm] = []
    for c, p in terms:
        if c != 0:
            drift.extend(term.scaled(c) for term in p.drift)

    continuous: Optional[ContinuousPart] = None
    for c, p in terms:
        if p.continuous is None or c == 0:
            continue

        part = p.continuous.scaled(c)
        if continuous is None:
            continuous = part
            continue

        if (part.label, part.start, part.stop, part.sigma2) != (
            continuous.label,
            continuous.start,
            continuous.stop,
            continuous.sigma2,
        ):
            raise UnsupportedPathException("Cannot combine paths driven by different continuous parts")

        continuous = replace(continuous, scale=continuous.scale + part.scale)

    explosions = [p.explosion_time for _, p in terms if p.explosion_time is not None]

    return CadlagPath(
        initial=float(sum(c * p.initial for c, p in terms)),
        jump_times=merged_times,
        jump_sizes=merged_sizes,
        horizon=horizon,
        drift=tuple(drift),
        continuous=continuous,
        explosion_time=min(explosions) if explosions else None,
    )


def zero_path(horizon: float) -> CadlagPath:
    return CadlagPath(0.0, np.empty(0), np.empty(0), horizon)
