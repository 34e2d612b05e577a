from __future__ import annotations

import functools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy import integrate, optimize

from .exceptions import (
    CompensatorDivergesException,
    DomainException,
    IntegrabilityException,
    InvalidParametersException,
    UnsupportedModelException,
)
from .jumplab_types import FloatArray
from .path_core import CadlagPath, ConstantDrift

TestFunctionTag = Literal[
    "one",
    "identity",
    "square",
    "abs",
    "truncated_square",
    "truncated_abs",
    "pos_tail",
    "neg_tail",
    "neg_log_tail",
    "log1p",
    "xm_log",
    "entropy",
    "entropy_tail",
    "expm",
    "reciprocal_square",
    "log_ratio",
    "log_ratio_neg",
    "ratio_square",
    "custom",
]

_LOG_DOMAIN = frozenset(
    {
        "log1p",
        "xm_log",
        "entropy",
        "neg_log_tail",
        "reciprocal_square",
        "log_ratio",
        "log_ratio_neg",
        "ratio_square",
    }
)

_QUAD_OPTIONS = {"epsabs": 1e-10, "epsrel": 1e-10, "limit": 200}
_TABLE_POINTS = 4097


class TestFunction(BaseModel):
    """Deterministic integrand F(x) for jump measures and their compensators

    ``kappa`` is the truncation level of the tail and truncated tags and
    ``exponent`` the parameter ``a`` of ``log_ratio``.
    """

    __test__ = False

    tag: TestFunctionTag
    kappa: float = Field(default=1.0, gt=0)
    exponent: float = 0.0
    table_x: tuple[float, ...] = ()
    table_y: tuple[float, ...] = ()

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_table(self) -> TestFunction:
        if self.tag == "custom":
            if len(self.table_x) < 2 or len(self.table_x) != len(self.table_y):
                raise InvalidParametersException("custom test function needs matching tables of length >= 2")
            if np.any(np.diff(self.table_x) <= 0):
                raise InvalidParametersException("custom table_x must be strictly increasing")
        return self

    @property
    def needs_log_domain(self) -> bool:
        return self.tag in _LOG_DOMAIN

    def __call__(self, x: npt.ArrayLike) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)

        if self.needs_log_domain and np.any(x <= -1):
            raise DomainException(f"{self.tag} needs jumps > -1, got {x.min()}")

        with np.errstate(over="ignore"):
            return self._evaluate(x)

    def _evaluate(self, x: FloatArray) -> FloatArray:
        match self.tag:
            case "one":
                return np.ones_like(x)
            case "identity":
                return x.copy()
            case "square":
                return x**2
            case "abs":
                return np.abs(x)
            case "truncated_square":
                return np.where(np.abs(x) <= self.kappa, x**2, 0.0)
            case "truncated_abs":
                return np.minimum(x**2, np.abs(x))
            case "pos_tail":
                return np.where(x > self.kappa, x, 0.0)
            case "neg_tail":
                return np.where(x < -self.kappa, -x, 0.0)
            case "neg_log_tail":
                return np.where(x < -self.kappa, -np.log1p(x), 0.0)
            case "log1p":
                return np.log1p(x)
            case "xm_log":
                return x - np.log1p(x)
            case "entropy":
                return (1 + x) * np.log1p(x) - x
            case "entropy_tail":
                # clipped so jumps at or below -1 stay outside the log
                tail = np.maximum(x, self.kappa)
                return np.where(x > self.kappa, (1 + tail) * np.log1p(tail) - tail, 0.0)
            case "expm":
                return np.expm1(x) - x
            case "reciprocal_square":
                return x**2 / (1 + x)
            case "log_ratio":
                return np.log1p(x) - (self.exponent * x**2 + x) / (1 + x)
            case "log_ratio_neg":
                return np.where(x < 0, np.log1p(x) - (self.exponent * x**2 + x) / (1 + x), 0.0)
            case "ratio_square":
                return (x / (1 + x)) ** 2
            case "custom":
                return np.interp(x, self.table_x, self.table_y)


def functional(tag: TestFunctionTag, kappa: float = 1.0, exponent: float = 0.0) -> TestFunction:
    return TestFunction(tag=tag, kappa=kappa, exponent=exponent)


RateName = Literal["constant", "inverse_square", "linear", "shifted_square", "inverse_linear", "ratio"]


def _where_finite(t: FloatArray, value: Callable[[FloatArray], FloatArray], at_inf: float) -> FloatArray:
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        finite = value(np.where(np.isinf(t), 0.0, t))
    return np.where(np.isinf(t), at_inf, finite)


class RateFunction(BaseModel):
    """Nonnegative function of time with a registered antiderivative and inverse"""

    name: RateName
    coef: float = Field(default=1.0, gt=0)

    model_config = ConfigDict(extra="forbid", frozen=True)

    def __call__(self, s: npt.ArrayLike) -> FloatArray:
        s = np.asarray(s, dtype=np.float64)
        c = self.coef

        match self.name:
            case "constant":
                return np.full_like(s, c)
            case "inverse_square":
                return c / (1 + s) ** 2
            case "linear":
                return c * s
            case "shifted_square":
                return c * (1 + s) ** 2
            case "inverse_linear":
                return c / (1 + s)
            case "ratio":
                return c * s / (1 + s)

    def integral(self, t: npt.ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64)
        c = self.coef

        match self.name:
            case "constant":
                return c * t
            case "inverse_square":
                return _where_finite(t, lambda u: c * u / (1 + u), c)
            case "linear":
                return c * t**2 / 2
            case "shifted_square":
                return c * ((1 + t) ** 3 - 1) / 3
            case "inverse_linear":
                return c * np.log1p(t)
            case "ratio":
                return _where_finite(t, lambda u: c * (u - np.log1p(u)), math.inf)

    def total(self) -> float:
        return float(self.integral(math.inf))

    def inverse(self, theta: float) -> float:
        """Smallest t with integral(t) >= theta, infinite when theta >= total()"""
        if theta <= 0:
            return 0.0
        if theta >= self.total():
            return math.inf

        c = self.coef
        match self.name:
            case "constant":
                return theta / c
            case "inverse_square":
                return theta / (c - theta)
            case "linear":
                return math.sqrt(2 * theta / c)
            case "shifted_square":
                return float(np.cbrt(3 * theta / c + 1) - 1)
            case "inverse_linear":
                return math.expm1(theta / c)
            case "ratio":
                return _expanding_root(lambda t: float(self.integral(t)) - theta)


def _expanding_root(fn: Callable[[float], float], start: float = 1.0) -> float:
    hi = start
    while fn(hi) < 0:
        hi *= 2
        if hi > 1e300:
            return math.inf
    return float(optimize.brentq(fn, 0.0, hi, xtol=1e-14, rtol=1e-14))


def phi_values(x: npt.ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= -1):
        raise DomainException(f"phi needs x > -1, got {x.min()}")
    return -x / (1 + x)


def _g(t: FloatArray) -> FloatArray:
    return np.log1p(t) + 1 / (1 + t) - 1


def _frac(t: FloatArray) -> FloatArray:
    return t / (1 + t)


def _square(t: FloatArray) -> FloatArray:
    return t - 2 * np.log1p(t) - 1 / (1 + t) + 1


ClosedForm = Callable[[FloatArray], FloatArray]


class RateDensity(BaseModel):
    """Single-jump compensator ``F * nu_t = int_0^t F(size(s)) rate(s) ds``

    With ``g = mark_sign * mark(s)`` the jump size is ``g`` or, when
    ``reflected``, ``phi(g)``. The effective rate is
    ``intensity(s) * (1 + g)**weight_power``. ``tilt`` moves between the two
    sides of the measure change.
    """

    intensity: RateFunction
    mark: RateFunction
    mark_sign: Literal[1, -1] = 1
    reflected: bool = False
    weight_power: int = 0

    model_config = ConfigDict(extra="forbid", frozen=True)

    def mark_values(self, s: npt.ArrayLike) -> FloatArray:
        return self.mark_sign * self.mark(s)

    def size(self, s: npt.ArrayLike) -> FloatArray:
        g = self.mark_values(s)
        return phi_values(g) if self.reflected else g

    def rate(self, s: npt.ArrayLike) -> FloatArray:
        lam = self.intensity(s)
        if self.weight_power == 0:
            return lam
        return lam * (1 + self.mark_values(s)) ** self.weight_power

    def tilt(self) -> RateDensity:
        """Compensator of the reciprocal jump under the (1 + x)-weighted measure"""
        step = -1 if self.reflected else 1
        return self.model_copy(update={"reflected": not self.reflected, "weight_power": self.weight_power + step})

    def _closed_form(self, fn: TestFunction) -> Optional[ClosedForm]:
        ci, cm, sign = self.intensity.coef, self.mark.coef, self.mark_sign
        key = (self.intensity.name, self.mark.name, self.reflected, self.weight_power)
        unit_mark = cm == 1 and sign == 1

        if key == ("inverse_square", "linear", False, 0):
            match fn.tag:
                case "one":
                    return lambda t: _where_finite(t, lambda u: ci * _frac(u), ci)
                case "identity":
                    return lambda t: _where_finite(t, lambda u: sign * ci * cm * _g(u), sign * math.inf)
                case "square":
                    return lambda t: _where_finite(t, lambda u: ci * cm**2 * _square(u), math.inf)
                case "truncated_abs":
                    knee = 1 / cm

                    def truncated(t: FloatArray) -> FloatArray:
                        def finite(u: FloatArray) -> FloatArray:
                            below = ci * cm**2 * _square(np.minimum(u, knee))
                            above = ci * cm * np.maximum(_g(u) - _g(np.asarray(knee)), 0.0)
                            return below + above

                        return _where_finite(t, finite, math.inf)

                    return truncated
                case "log1p" if unit_mark:
                    return lambda t: _where_finite(t, lambda u: ci * (_frac(u) - np.log1p(u) / (1 + u)), ci)
                case "xm_log" if unit_mark:
                    return lambda t: _where_finite(
                        t, lambda u: ci * (_g(u) + np.log1p(u) / (1 + u) - _frac(u)), math.inf
                    )
                case "entropy" if unit_mark:
                    return lambda t: _where_finite(t, lambda u: ci * (0.5 * np.log1p(u) ** 2 - _g(u)), math.inf)

        if key == ("inverse_square", "shifted_square", False, 0):
            match fn.tag:
                case "one":
                    return lambda t: _where_finite(t, lambda u: ci * _frac(u), ci)
                case "identity":
                    return lambda t: _where_finite(t, lambda u: sign * ci * cm * u, sign * math.inf)

        if key == ("inverse_square", "linear", True, 1):
            match fn.tag:
                case "one":
                    return lambda t: _where_finite(t, lambda u: ci * (_frac(u) + sign * cm * _g(u)), math.inf)
                case "identity":
                    return lambda t: _where_finite(t, lambda u: -sign * ci * cm * _g(u), -sign * math.inf)
                case "log1p" if unit_mark:
                    return lambda t: _where_finite(t, lambda u: -0.5 * ci * np.log1p(u) ** 2, -math.inf)
                case "xm_log" if unit_mark:
                    return lambda t: _where_finite(t, lambda u: ci * (0.5 * np.log1p(u) ** 2 - _g(u)), math.inf)
                case "entropy" if unit_mark:
                    return lambda t: _where_finite(
                        t, lambda u: ci * (np.log1p(u) / (1 + u) - _frac(u) + _g(u)), math.inf
                    )
                case "square" | "truncated_abs" if unit_mark:
                    return lambda t: _where_finite(
                        t,
                        lambda u: ci * (np.log1p(u) - 2 * _frac(u) + 0.5 * (1 - 1 / (1 + u) ** 2)),
                        math.inf,
                    )

        return None

    def _integrand(self, fn: Callable[[FloatArray], FloatArray]) -> Callable[[float], float]:
        def integrand(s: float) -> float:
            with np.errstate(over="ignore", invalid="ignore"):
                return float(fn(self.size(np.asarray([s])))[0] * self.rate(s))

        return integrand

    def integrate(self, fn: TestFunction | Callable[[FloatArray], FloatArray], t: float) -> float:
        """``int_0^t fn(size(s)) rate(s) ds``, possibly infinite

        Registered closed forms are used when ``fn`` is a TestFunction that has
        one, adaptive quadrature otherwise.
        """
        if t <= 0:
            return 0.0

        if isinstance(fn, TestFunction):
            closed = self._closed_form(fn)
            if closed is not None:
                return float(closed(np.asarray([t], dtype=np.float64))[0])

        integrand = self._integrand(fn)
        if math.isinf(t):
            return _integral_to_infinity(integrand)
        return _piecewise_quad(integrand, 0.0, t)

    def cumulative(self, fn: TestFunction, ts: FloatArray, horizon: float) -> FloatArray:
        """Vectorised ``integrate`` over times in ``[0, horizon]``"""
        ts = np.asarray(ts, dtype=np.float64)
        closed = self._closed_form(fn)
        if closed is not None:
            return closed(np.maximum(ts, 0.0))

        grid, table = _cumulative_table(self.model_dump_json(), fn.model_dump_json(), float(horizon))
        return np.interp(ts, grid, table)

    def cumulative_rate(self, t: float) -> float:
        return self.integrate(TestFunction(tag="one"), t)

    def arrival_time(self, theta: float) -> float:
        """First time the cumulative rate reaches ``theta``, infinite if it never does"""
        if self.weight_power == 0:
            return self.intensity.inverse(theta)

        if theta >= self.cumulative_rate(math.inf):
            return math.inf

        if (self.intensity.name, self.mark.name, self.mark_sign, self.mark.coef) == (
            "inverse_square",
            "linear",
            1,
            1.0,
        ) and (self.reflected, self.weight_power) == (True, 1):
            return math.expm1(theta / self.intensity.coef)

        return _expanding_root(lambda t: self.cumulative_rate(t) - theta)


@functools.lru_cache(maxsize=64)
def _cumulative_table(density_json: str, fn_json: str, horizon: float) -> tuple[FloatArray, FloatArray]:
    density = RateDensity.model_validate_json(density_json)
    fn = TestFunction.model_validate_json(fn_json)
    integrand = density._integrand(fn)
    grid = np.linspace(0.0, horizon, _TABLE_POINTS)
    pieces = [integrate.quad(integrand, a, b, **_QUAD_OPTIONS)[0] for a, b in zip(grid[:-1], grid[1:])]
    table = np.concatenate(([0.0], np.cumsum(pieces)))
    grid.setflags(write=False)
    table.setflags(write=False)
    return grid, table


_DECADES = (1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7)


def _piecewise_quad(fn: Callable[[float], float], lo: float, hi: float) -> float:
    points = [lo, *[p for p in _DECADES if lo < p < hi], hi]
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        value, _ = integrate.quad(fn, a, b, **_QUAD_OPTIONS)  # type: ignore[arg-type]
        total += value
    return total if math.isfinite(total) else math.inf


def _integral_to_infinity(fn: Callable[[float], float]) -> float:
    """Integral over [0, inf); growth over [1e4, 1e8] comparable to [1e2, 1e4] counts as divergence"""
    near = _piecewise_quad(fn, 0.0, 1e2)
    mid = _piecewise_quad(fn, 1e2, 1e4)
    far = _piecewise_quad(fn, 1e4, 1e8)

    for value in (near, mid, far):
        if not math.isfinite(value):
            return value

    if abs(far) > 1e-9 and abs(far) > 0.5 * abs(mid):
        return math.copysign(math.inf, far)

    tail, _ = integrate.quad(fn, 1e4, math.inf, **_QUAD_OPTIONS)  # type: ignore[arg-type]
    return near + mid + tail


# upper end stays below log(max float) so sizes never overflow
_TAIL_BREAKS = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0)
_SAMPLING_U = np.linspace(0.0, 60.0, 60_001)


def _log_level(u: FloatArray | float) -> FloatArray:
    """log(e + y) written in u = log(1 + y)"""
    return np.asarray(u) + np.log1p((math.e - 1) * np.exp(-np.asarray(u)))


class HeavyTailMark(BaseModel):
    """Jump of size Y with density proportional to 1 / ((1 + y)^2 log^2(e + y)) on [0, inf)

    Y has a finite mean while ``(1 + Y) log(1 + Y)`` does not. ``mass`` is the
    probability of the jump. When ``tilted`` the sizes are ``phi(Y)`` with the
    law reweighted by ``1 + Y``.
    """

    mass: float = Field(ge=0, le=1)
    tilted: bool = False

    model_config = ConfigDict(extra="forbid", frozen=True)

    def _weight(self, u: float) -> float:
        if self.tilted:
            return float(1 / _log_level(u) ** 2)
        return float(math.exp(-u) / _log_level(u) ** 2)

    def _size(self, u: float) -> float:
        return math.expm1(-u) if self.tilted else math.expm1(u)

    def integrate(self, fn: TestFunction | Callable[[FloatArray], FloatArray]) -> float:
        """``mass * E[fn(size)]``; infinite when the truncated integral keeps growing"""

        def integrand(u: float) -> float:
            with np.errstate(over="ignore", invalid="ignore"):
                return float(fn(np.asarray([self._size(u)]))[0]) * self._weight(u)

        partial = []
        running = 0.0
        for a, b in zip(_TAIL_BREAKS[:-1], _TAIL_BREAKS[1:]):
            running += integrate.quad(integrand, a, b, **_QUAD_OPTIONS)[0]  # type: ignore[call-overload]
            partial.append(running)

        at_160, at_320, at_640 = partial[-3], partial[-2], partial[-1]
        if math.isinf(at_640):
            return at_640
        if not math.isfinite(at_640) or abs(at_640 - at_160) > 0.1 * max(1.0, abs(at_160)):
            return math.copysign(math.inf, at_640 - at_160)

        # remainder past 640 extrapolated from a 1/u^2 decay
        tail = at_640 - at_320
        return self.mass * (at_640 + tail) / _normalizer()

    def truncated(self, fn: TestFunction, upper_u: float) -> float:
        """``mass * E[fn(size); log(1 + Y) <= upper_u]``"""

        def integrand(u: float) -> float:
            return float(fn(np.asarray([self._size(u)]))[0]) * self._weight(u)

        points = [p for p in _TAIL_BREAKS if p < upper_u] + [upper_u]
        total = sum(
            integrate.quad(integrand, a, b, **_QUAD_OPTIONS)[0]  # type: ignore[call-overload]
            for a, b in zip(points[:-1], points[1:])
        )
        return self.mass * total / _normalizer()

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        """Inverse-CDF draws of Y"""
        if self.tilted:
            raise UnsupportedModelException("The tilted heavy-tailed mark has no sampler")
        grid, cdf = _sampling_cdf()
        return np.expm1(np.interp(rng.random(size), cdf, grid))


@functools.lru_cache(maxsize=1)
def _normalizer() -> float:
    value, _ = integrate.quad(lambda u: math.exp(-u) / float(_log_level(u)) ** 2, 0, math.inf, **_QUAD_OPTIONS)
    return float(value)


@functools.lru_cache(maxsize=1)
def _sampling_cdf() -> tuple[FloatArray, FloatArray]:
    density = np.exp(-_SAMPLING_U) / _log_level(_SAMPLING_U) ** 2
    cdf = integrate.cumulative_trapezoid(density, _SAMPLING_U, initial=0.0)
    return _SAMPLING_U, cdf / cdf[-1]


class Atom(BaseModel):
    """Jump law ``nu({time}, .)`` at a scheduled time"""

    time: float = Field(gt=0)
    sizes: tuple[float, ...] = ()
    masses: tuple[float, ...] = ()
    heavy_tail: Optional[HeavyTailMark] = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_masses(self) -> Atom:
        if len(self.sizes) != len(self.masses):
            raise InvalidParametersException("Atom sizes and masses differ in length")
        if any(m < 0 for m in self.masses):
            raise InvalidParametersException("Atom masses must be nonnegative")
        extra = 0.0 if self.heavy_tail is None else self.heavy_tail.mass
        if sum(self.masses) + extra > 1 + 1e-12:
            raise InvalidParametersException(f"Atom at {self.time} has total mass above one")
        return self

    def integrate(self, fn: TestFunction | Callable[[FloatArray], FloatArray]) -> float:
        sizes = np.asarray(self.sizes, dtype=np.float64)
        masses = np.asarray(self.masses, dtype=np.float64)
        live = masses > 0
        total = float(np.dot(masses[live], fn(sizes[live]))) if np.any(live) else 0.0
        if self.heavy_tail is not None and self.heavy_tail.mass > 0:
            total += self.heavy_tail.integrate(fn)
        return total

    def total_mass(self) -> float:
        return sum(self.masses) + (0.0 if self.heavy_tail is None else self.heavy_tail.mass)


class CompensatorSpec(BaseModel):
    atoms: tuple[Atom, ...] = ()
    rate_density: Optional[RateDensity] = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    _times: Optional[FloatArray] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_order(self) -> CompensatorSpec:
        times = [atom.time for atom in self.atoms]
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise InvalidParametersException("Compensator atoms must have increasing times")
        return self

    @property
    def atom_times(self) -> FloatArray:
        if self._times is None:
            self._times = np.array([atom.time for atom in self.atoms], dtype=np.float64)
        return self._times

    def atom_at(self, t: float) -> Optional[Atom]:
        times = self.atom_times
        index = int(np.searchsorted(times, t))
        if index < times.size and math.isclose(times[index], t, rel_tol=0, abs_tol=1e-12):
            return self.atoms[index]
        return None

    def atoms_until(self, t: float) -> tuple[Atom, ...]:
        return self.atoms[: int(np.searchsorted(self.atom_times, t, side="right"))]

    def tilt(self) -> CompensatorSpec:
        """Jump laws of phi(x) reweighted by (1 + x)"""
        atoms = []
        for atom in self.atoms:
            sizes = np.asarray(atom.sizes, dtype=np.float64)
            masses = np.asarray(atom.masses, dtype=np.float64)
            heavy = None if atom.heavy_tail is None else atom.heavy_tail.model_copy(
                update={"tilted": not atom.heavy_tail.tilted}
            )
            atoms.append(
                Atom(
                    time=atom.time,
                    sizes=tuple(phi_values(sizes).tolist()),
                    masses=tuple(((1 + sizes) * masses).tolist()),
                    heavy_tail=heavy,
                )
            )
        density = None if self.rate_density is None else self.rate_density.tilt()
        return CompensatorSpec(atoms=tuple(atoms), rate_density=density)


def density_arrival(comp: CompensatorSpec, path: Optional[CadlagPath]) -> float:
    """Time of the single density jump on the path, infinite if none happened"""
    if path is None or comp.rate_density is None:
        return math.inf

    for t in path.jump_times:
        if comp.atom_at(float(t)) is None:
            return float(t)

    return math.inf


def compensator_integral(
    comp: CompensatorSpec,
    fn: TestFunction,
    t: float,
    path: Optional[CadlagPath] = None,
    allow_infinite: bool = False,
) -> float:
    """``F * nu_t``: atoms up to t plus the density part up to ``t`` and the path's jump time

    Parameters
    ----------
    comp : CompensatorSpec
        Analytic compensator of the model
    fn : TestFunction
        Integrand
    t : float
        Time, may be ``math.inf``
    path : Optional[CadlagPath] = None
        Sampled path; its first jump off the atom grid stops the density part
    allow_infinite : bool = False
        Return ``inf`` instead of raising when the integral diverges

    Raises
    ------
    DomainException
        When a log-family integrand meets a size at or below -1
    IntegrabilityException
        When the integral is infinite and ``allow_infinite`` is False
    """
    total = sum(atom.integrate(fn) for atom in comp.atoms_until(t))

    if comp.rate_density is not None:
        upper = min(t, density_arrival(comp, path))
        total += comp.rate_density.integrate(fn, upper)

    if not math.isfinite(total) and not allow_infinite:
        raise IntegrabilityException(f"{fn.tag} * nu diverges by t={t}")

    return float(total)


@dataclass(frozen=True)
class CompensatorDrift:
    """Density part of ``coef * (F * nu)`` stopped at the jump time"""

    coef: float
    density: RateDensity
    fn: TestFunction
    horizon: float
    stop: float = math.inf
    is_linear: bool = field(default=False, init=False)

    def integral(self, ts: FloatArray) -> FloatArray:
        ts = np.minimum(np.asarray(ts, dtype=np.float64), min(self.stop, self.horizon))
        return self.coef * self.density.cumulative(self.fn, ts, self.horizon)

    def breakpoints(self) -> FloatArray:
        return np.array([0.0, self.stop]) if math.isfinite(self.stop) else np.array([0.0])

    def scaled(self, c: float) -> CompensatorDrift:
        return CompensatorDrift(self.coef * c, self.density, self.fn, self.horizon, self.stop)

    def stopped(self, at: float) -> CompensatorDrift:
        return CompensatorDrift(self.coef, self.density, self.fn, self.horizon, min(self.stop, at))


def compensator_path(
    comp: CompensatorSpec,
    fn: TestFunction,
    path: CadlagPath,
    coef: float = 1.0,
) -> CadlagPath:
    """``coef * (F * nu)`` as a path on the horizon of ``path``

    Raises
    ------
    CompensatorDivergesException
        When an atom integral is infinite or the density part diverges before
        the horizon
    """
    atoms = comp.atoms_until(path.horizon)
    values = [atom.integrate(fn) for atom in atoms]
    if any(not math.isfinite(v) for v in values):
        raise CompensatorDivergesException(f"{fn.tag} * nu is infinite at an atom")

    drift: tuple[CompensatorDrift, ...] = ()
    if comp.rate_density is not None:
        stop = density_arrival(comp, path)
        upper = min(stop, path.horizon)
        if not math.isfinite(comp.rate_density.integrate(fn, upper)):
            raise CompensatorDivergesException(f"{fn.tag} * nu diverges by t={upper}")
        drift = (CompensatorDrift(coef, comp.rate_density, fn, path.horizon, stop),)

    return CadlagPath(
        initial=0.0,
        jump_times=np.array([atom.time for atom in atoms], dtype=np.float64),
        jump_sizes=coef * np.asarray(values, dtype=np.float64),
        horizon=path.horizon,
        drift=drift,
    )


def quadratic_variation(path: CadlagPath) -> CadlagPath:
    """``[X, X]``: continuous quadratic variation plus the sum of squared jumps"""
    drift: tuple[ConstantDrift, ...] = ()
    part = path.continuous
    if part is not None and part.qv_rate > 0:
        drift = (ConstantDrift(part.start, min(part.stop, path.horizon), part.qv_rate),)

    return CadlagPath(
        initial=0.0,
        jump_times=path.jump_times,
        jump_sizes=path.jump_sizes**2,
        horizon=path.horizon,
        drift=drift,
        explosion_time=path.explosion_time,
    )


def jump_integral(path: CadlagPath, fn: TestFunction) -> CadlagPath:
    """``F * mu``, the running sum of ``F`` over the path's jumps

    Raises
    ------
    DomainException
        When a log-family ``fn`` meets a jump at or below -1
    """
    return CadlagPath(
        initial=0.0,
        jump_times=path.jump_times,
        jump_sizes=fn(path.jump_sizes),
        horizon=path.horizon,
        explosion_time=path.explosion_time,
    )


def gamma_process(comp: CompensatorSpec, t: float) -> float:
    """``-int log(1 + x) nu({t}, dx)``, zero off the atom grid"""
    atom = comp.atom_at(t)
    if atom is None:
        return 0.0
    return -atom.integrate(TestFunction(tag="log1p"))


def convergence_functional_c(
    path: CadlagPath,
    comp: CompensatorSpec,
    a_path: CadlagPath,
    t: float,
) -> float:
    """``[X^c, X^c]_t + (x^2 ^ |x|) * nu_t + A_t``, infinite when the compensator part diverges"""
    diffusion = float(path.diffusion_qv(t)[0])
    truncated = compensator_integral(comp, TestFunction(tag="truncated_abs"), t, path, allow_infinite=True)
    return diffusion + truncated + float(a_path.values(t)[0])


def mean_zero_deviation(comp: CompensatorSpec) -> float:
    """Largest ``|int x nu({t}, dx)|`` over the atoms"""
    identity = TestFunction(tag="identity")
    return max((abs(atom.integrate(identity)) for atom in comp.atoms), default=0.0)


def compensator_diverges(comp: CompensatorSpec, fn: TestFunction, t: float) -> bool:
    try:
        return not math.isfinite(compensator_integral(comp, fn, t, allow_infinite=True))
    except IntegrabilityException:
        return True
