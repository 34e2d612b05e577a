from __future__ import annotations

import functools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, TypeAdapter, ValidationError, model_validator

from .exceptions import (
    DomainException,
    InvalidParametersException,
    UnknownPresetException,
    UnsupportedModelException,
    oracle_unavailable,
)
from .functionals import (
    Atom,
    CompensatorDrift,
    CompensatorSpec,
    HeavyTailMark,
    RateDensity,
    RateFunction,
    TestFunction,
    phi_values,
)
from .jumplab_types import FloatArray, Ternary
from .path_core import CadlagPath, ConstantDrift, ContinuousPart, linear_combination

SequenceFamily = Literal[
    "constant",
    "alternating_sqrt",
    "alternating_harmonic",
    "oscillating_harmonic",
    "exp_alternating_sqrt",
    "neg_harmonic",
    "geometric",
    "dyadic_ui",
    "table",
]


@dataclass(frozen=True)
class SeriesFlags:
    sum_converges: bool
    squares_summable: bool
    abs_summable: bool


_SERIES_FLAGS: dict[str, SeriesFlags] = {
    "constant": SeriesFlags(False, False, False),
    "alternating_sqrt": SeriesFlags(True, False, False),
    "alternating_harmonic": SeriesFlags(True, True, False),
    "oscillating_harmonic": SeriesFlags(False, True, False),
    "exp_alternating_sqrt": SeriesFlags(False, False, False),
    "neg_harmonic": SeriesFlags(False, True, False),
    "geometric": SeriesFlags(True, True, True),
    "dyadic_ui": SeriesFlags(True, True, True),
}


@functools.lru_cache(maxsize=8)
def _oscillating_signs(count: int) -> tuple[float, ...]:
    """Signs making the partial sums of +-1/n swing between levels that grow by 1/2 per swing"""
    signs = []
    total, sign, level = 0.0, 1.0, 0.5
    for n in range(1, count + 1):
        signs.append(sign)
        total += sign / n
        if sign > 0 and total >= level:
            sign = -1.0
        elif sign < 0 and total <= -level:
            sign, level = 1.0, level + 0.5
    return tuple(signs)


@functools.lru_cache(maxsize=8)
def _dyadic_ui(count: int) -> tuple[float, ...]:
    """Largest 2^-k with p log(1 + 1/p) <= n^-3 and p <= 2^-n (e^(n^-2) - 1)^n

    Underflows to 0 once k passes the float range.
    """
    out = []
    for n in range(1, count + 1):
        log2_bound = -n + n * math.log2(math.expm1(n**-2.0))
        k = max(0, math.ceil(-log2_bound))
        while math.ldexp(1.0, -k) * (k * math.log(2) + math.log1p(math.ldexp(1.0, -k))) > n**-3.0:
            k += 1
        out.append(math.ldexp(1.0, -k))
    return tuple(out)


class SequenceSpec(BaseModel):
    """Deterministic sequence ``x_1, x_2, ...`` from a registered family"""

    family: SequenceFamily
    scale: float = 1.0
    ratio: float = Field(default=0.5, gt=0, lt=1)
    first_zero: bool = False
    table: tuple[float, ...] = ()

    model_config = ConfigDict(extra="forbid", frozen=True)

    def values(self, count: int) -> FloatArray:
        n = np.arange(1, count + 1, dtype=np.float64)
        signs = np.power(-1.0, n)

        match self.family:
            case "constant":
                out = np.ones_like(n)
            case "alternating_sqrt":
                out = signs / np.sqrt(n)
            case "alternating_harmonic":
                out = signs / n
            case "oscillating_harmonic":
                out = np.asarray(_oscillating_signs(count)) / n
            case "exp_alternating_sqrt":
                out = np.expm1(signs / np.sqrt(n))
            case "neg_harmonic":
                out = -1.0 / n
            case "geometric":
                out = self.ratio**n
            case "dyadic_ui":
                out = np.asarray(_dyadic_ui(count), dtype=np.float64)
            case "table":
                if count > len(self.table):
                    raise InvalidParametersException(f"Table has {len(self.table)} entries, {count} needed")
                out = np.asarray(self.table[:count], dtype=np.float64)

        out = self.scale * out
        if self.first_zero and count:
            out[0] = 0.0
        return out

    def series_flags(self) -> SeriesFlags:
        if self.scale == 0:
            return SeriesFlags(True, True, True)
        if self.family == "table":
            oracle_unavailable("table sequence")
        return _SERIES_FLAGS[self.family]

    @property
    def is_summable_probability(self) -> bool:
        return self.family in ("geometric", "dyadic_ui", "table")


class EventOracle(BaseModel):
    """Asymptotic answers known in closed form"""

    converges: Optional[Ternary] = None
    qv_finite: Optional[Ternary] = None
    closure_semimartingale: Optional[Ternary] = None
    ui: Optional[Ternary] = None
    exp_nonzero_limit: Optional[Ternary] = None
    converge_probability: Optional[float] = None
    limit_expectation: Optional[float] = None
    notes: str = ""

    model_config = ConfigDict(extra="forbid", frozen=True)


def _yes_no(flag: bool) -> Ternary:
    return "yes" if flag else "no"


@dataclass(frozen=True)
class SampledPath:
    path: CadlagPath
    latents: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class StepLaw:
    """Two-outcome jump laws at integer times: ``first`` w.p. ``1 - p_second``, else ``second``"""

    times: FloatArray
    first: FloatArray
    second: FloatArray
    p_second: FloatArray

    def tilted(self) -> StepLaw:
        masses_first = 1 - self.p_second
        live_second = self.p_second > 0
        if np.any(1 + self.first[masses_first > 0] <= 0) or np.any(1 + self.second[live_second] <= 0):
            raise UnsupportedModelException("Jump laws with mass at or below -1 cannot be tilted")

        second = np.where(live_second, self.second, 0.0)
        return StepLaw(
            times=self.times,
            first=phi_values(self.first),
            second=np.where(live_second, phi_values(second), 0.0),
            p_second=(1 + second) * self.p_second,
        )

    def atoms(self) -> tuple[Atom, ...]:
        return tuple(
            Atom(time=float(t), sizes=(float(a), float(b)), masses=(float(1 - p), float(p)))
            for t, a, b, p in zip(self.times, self.first, self.second, self.p_second)
        )

    def sample(self, rng: np.random.Generator, horizon: float) -> SampledPath:
        second = rng.random(self.times.size) < self.p_second
        sizes = np.where(second, self.second, self.first)
        rare_times = self.times[second]
        path = CadlagPath(0.0, self.times, sizes, horizon)
        return SampledPath(
            path,
            {
                "second_count": float(second.sum()),
                "last_second": float(rare_times[-1]) if rare_times.size else 0.0,
            },
        )


# substream ids: model paths, dual-side paths, bootstrap resampling
PATH_STREAM = 0
DUAL_STREAM = 1
BOOTSTRAP_STREAM = 9


def path_seed(seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    """Counter-based substream of path ``index`` in ``stream``, independent of worker layout"""
    return np.random.SeedSequence(entropy=seed, spawn_key=(stream, index))


class _ModelBase(BaseModel):
    horizon: float = Field(gt=0)
    preset_id: Optional[str] = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def is_martingale(self) -> bool:
        return True

    @property
    def min_horizon(self) -> float:
        return 0.0

    def rebuilt(self, **updates: Any) -> Any:
        """Validated copy with fresh caches"""
        return type(self).model_validate({**self.model_dump(), **updates})

    def with_horizon(self, horizon: float) -> Any:
        if horizon < self.min_horizon:
            raise InvalidParametersException(f"Horizon {horizon} below the model minimum {self.min_horizon}")
        return self.rebuilt(horizon=horizon)

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        raise NotImplementedError

    def compensator(self) -> CompensatorSpec:
        raise NotImplementedError

    def tilted_copy(self) -> Any:
        raise NotImplementedError

    def oracle(self) -> EventOracle:
        oracle_unavailable(getattr(self, "kind", type(self).__name__))


class _StepModel(_ModelBase):
    _law: Optional[StepLaw] = PrivateAttr(default=None)
    _comp: Optional[CompensatorSpec] = PrivateAttr(default=None)

    @property
    def min_horizon(self) -> float:
        return 1.0

    @property
    def step_count(self) -> int:
        return int(math.floor(self.horizon + 1e-9))

    def _base_law(self) -> StepLaw:
        raise NotImplementedError

    def law(self) -> StepLaw:
        if self._law is None:
            law = self._base_law()
            self._law = law.tilted() if getattr(self, "tilted", False) else law
        return self._law

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        return self.law().sample(np.random.default_rng(seq), self.horizon)

    def compensator(self) -> CompensatorSpec:
        if self._comp is None:
            self._comp = CompensatorSpec(atoms=self.law().atoms())
        return self._comp

    def tilted_copy(self) -> Any:
        if not self.is_martingale:
            raise UnsupportedModelException("Only martingale models have a dual")
        self.law().tilted()
        return self.rebuilt(tilted=not getattr(self, "tilted", False), preset_id=None)


class RandomWalkLargeJumps(_StepModel):
    """Jump at integer n of ``x_n`` w.p. ``1 - p_n`` and ``x_n (1 - 1/p_n)`` w.p. ``p_n``"""

    kind: Literal["random_walk"] = "random_walk"
    x: SequenceSpec
    p: SequenceSpec = SequenceSpec(family="geometric")
    tilted: bool = False

    @model_validator(mode="after")
    def _check_probabilities(self) -> RandomWalkLargeJumps:
        if not self.p.is_summable_probability:
            raise InvalidParametersException(f"p family {self.p.family} is not summable")
        p = self.p.values(max(self.step_count, 1))
        if np.any((p < 0) | (p >= 1)):
            raise InvalidParametersException("p_n must lie in [0, 1)")
        return self

    def _base_law(self) -> StepLaw:
        count = self.step_count
        x = self.x.values(count)
        p = self.p.values(count)
        second = x - np.divide(x, p, out=np.zeros_like(x), where=p > 0)
        return StepLaw(np.arange(1, count + 1, dtype=np.float64), x, second, p)

    def oracle(self) -> EventOracle:
        if self.tilted:
            oracle_unavailable("tilted random_walk")
        flags = self.x.series_flags()
        return EventOracle(
            converges=_yes_no(flags.sum_converges),
            qv_finite=_yes_no(flags.squares_summable),
            closure_semimartingale=_yes_no(flags.abs_summable),
            notes="Series tests on x_n: convergence, square and absolute summability",
        )


_DOWN_GAP = float(np.finfo(np.float64).eps)


class DiscreteDensitySteps(_StepModel):
    """Steps 1 w.p. ``(1 - p_n)/2`` and ``-(1 - p_n)/(1 + p_n)`` w.p. ``(1 + p_n)/2``"""

    kind: Literal["discrete_density"] = "discrete_density"
    p: SequenceSpec = SequenceSpec(family="dyadic_ui")
    tilted: bool = False

    def _base_law(self) -> StepLaw:
        count = self.step_count
        p = self.p.values(count)
        if np.any((p < 0) | (p >= 1)):
            raise InvalidParametersException("p_n must lie in [0, 1)")
        # below p = 2^-53 the down step would round to -1; keep 1 + x at the smallest positive gap
        down = np.maximum(-(1 - p) / (1 + p), -1 + _DOWN_GAP)
        return StepLaw(
            np.arange(1, count + 1, dtype=np.float64),
            np.ones(count),
            down,
            (1 + p) / 2,
        )

    def jump_floor(self) -> float:
        """Smallest jump size with positive mass, so jumps are >= -1 + delta with delta = 1 + floor"""
        law = self.law()
        candidates = np.concatenate((law.first[law.p_second < 1], law.second[law.p_second > 0]))
        return float(candidates.min()) if candidates.size else 0.0


class DeterministicSeries(_StepModel):
    """Predictable path ``sum_{n <= t} x_n``"""

    kind: Literal["deterministic_series"] = "deterministic_series"
    x: SequenceSpec

    @property
    def is_martingale(self) -> bool:
        return self.x.scale == 0

    def _base_law(self) -> StepLaw:
        count = self.step_count
        x = self.x.values(count)
        return StepLaw(np.arange(1, count + 1, dtype=np.float64), x, x, np.zeros(count))

    def compensator(self) -> CompensatorSpec:
        if self._comp is None:
            law = self.law()
            atoms = tuple(Atom(time=float(t), sizes=(float(x),), masses=(1.0,)) for t, x in zip(law.times, law.first))
            self._comp = CompensatorSpec(atoms=atoms)
        return self._comp

    def tilted_copy(self) -> Any:
        if not self.is_martingale:
            raise UnsupportedModelException("Only martingale models have a dual")
        return self.rebuilt(preset_id=None)

    def oracle(self) -> EventOracle:
        flags = self.x.series_flags()
        return EventOracle(
            converges=_yes_no(flags.sum_converges),
            qv_finite=_yes_no(flags.squares_summable),
            closure_semimartingale=_yes_no(flags.abs_summable),
            ui="yes" if self.is_martingale else None,
            notes="Deterministic finite-variation path: closure semimartingale iff total variation is finite",
        )


class CoxOneJump(_ModelBase):
    """Single jump at the first time the cumulative rate passes a standard exponential draw"""

    kind: Literal["cox"] = "cox"
    intensity: RateFunction = RateFunction(name="inverse_square")
    mark: RateFunction = RateFunction(name="linear")
    mark_sign: Literal[1, -1] = 1
    compensated: bool = True
    reflected: bool = False
    weight_power: int = 0

    @property
    def is_martingale(self) -> bool:
        return self.compensated

    @property
    def density(self) -> RateDensity:
        return RateDensity(
            intensity=self.intensity,
            mark=self.mark,
            mark_sign=self.mark_sign,
            reflected=self.reflected,
            weight_power=self.weight_power,
        )

    def path_for_arrival(self, rho: float) -> CadlagPath:
        density = self.density
        times: list[float] = []
        sizes: list[float] = []
        if rho <= self.horizon:
            times.append(rho)
            sizes.append(float(density.size(rho)))

        drift = ()
        if self.compensated:
            drift = (CompensatorDrift(-1.0, density, TestFunction(tag="identity"), self.horizon, rho),)

        return CadlagPath(0.0, np.asarray(times), np.asarray(sizes), self.horizon, drift=drift)

    def sample_with(self, theta: float) -> SampledPath:
        rho = self.density.arrival_time(theta)
        return SampledPath(self.path_for_arrival(rho), {"theta": theta, "rho": rho})

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        return self.sample_with(float(np.random.default_rng(seq).exponential()))

    def compensator(self) -> CompensatorSpec:
        return CompensatorSpec(rate_density=self.density)

    def survival_probability(self) -> float:
        """P(no jump ever) = exp(-total rate)"""
        return math.exp(-self.density.cumulative_rate(math.inf))

    def tilted_copy(self) -> CoxOneJump:
        if not self.compensated:
            raise UnsupportedModelException("Uncompensated Cox paths are not martingales")
        tilt = self.density.tilt()
        return self.rebuilt(reflected=tilt.reflected, weight_power=tilt.weight_power, preset_id=None)


class GridDiffusion(_ModelBase):
    """Brownian motion with variance rate ``sigma2`` sampled on a grid, plus constant drift"""

    kind: Literal["grid_diffusion"] = "grid_diffusion"
    sigma2: float = Field(default=1.0, gt=0)
    drift: float = 0.0
    step: float = Field(default=0.01, gt=0)
    start: float = Field(default=0.0, ge=0)

    @property
    def is_martingale(self) -> bool:
        return self.drift == 0

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        rng = np.random.default_rng(seq)
        return SampledPath(_diffusion_path(rng, self.sigma2, self.step, self.start, self.horizon, self.drift))

    def compensator(self) -> CompensatorSpec:
        return CompensatorSpec()

    def tilted_copy(self) -> GridDiffusion:
        if self.drift != 0:
            raise UnsupportedModelException("Only driftless diffusions have a dual here")
        return self.rebuilt(preset_id=None)

    def oracle(self) -> EventOracle:
        return EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            ui="no" if self.drift == 0 else None,
            exp_nonzero_limit="no",
            notes="Brownian motion oscillates; its exponential tends to zero",
        )


def _diffusion_path(
    rng: np.random.Generator,
    sigma2: float,
    step: float,
    start: float,
    horizon: float,
    drift: float = 0.0,
) -> CadlagPath:
    count = max(1, int(math.ceil((horizon - start) / step - 1e-9)))
    increments = rng.normal(0.0, math.sqrt(sigma2 * step), count)
    samples = np.concatenate(([0.0], np.cumsum(increments)))
    part = ContinuousPart(sigma2=sigma2, start=start, step=step, samples=samples)
    drift_terms = (ConstantDrift(start, horizon, drift),) if drift else ()
    return CadlagPath(0.0, np.empty(0), np.empty(0), horizon, drift=drift_terms, continuous=part)


@functools.lru_cache(maxsize=1)
def heavy_tail_mean() -> float:
    """E[Y], verified finite while E[(1 + Y) log(1 + Y)] is not"""
    mark = HeavyTailMark(mass=1.0)
    mean = mark.integrate(TestFunction(tag="identity"))
    entropy = mark.integrate(TestFunction(tag="entropy"))
    if not math.isfinite(mean) or math.isfinite(entropy):
        raise InvalidParametersException(
            f"Heavy-tailed mark failed its moment checks: E[Y]={mean}, entropy={entropy}"
        )
    return mean


class HeavyTailStep(_ModelBase):
    """Jump at time 1 of Y w.p. ``1/(1 + 2E[Y])`` and -1/2 otherwise, optionally followed by Brownian motion"""

    kind: Literal["heavy_tail_step"] = "heavy_tail_step"
    with_diffusion: bool = True
    sigma2: float = Field(default=1.0, gt=0)
    step: float = Field(default=0.01, gt=0)
    tilted: bool = False

    @model_validator(mode="after")
    def _check_horizon(self) -> HeavyTailStep:
        if self.horizon < 1:
            raise InvalidParametersException("The heavy-tailed step happens at t=1, horizon must reach it")
        heavy_tail_mean()
        return self

    @property
    def min_horizon(self) -> float:
        return 1.0

    @property
    def jump_probability(self) -> float:
        return 1 / (1 + 2 * heavy_tail_mean())

    def compensator(self) -> CompensatorSpec:
        q = self.jump_probability
        atom = Atom(time=1.0, sizes=(-0.5,), masses=(1 - q,), heavy_tail=HeavyTailMark(mass=q))
        comp = CompensatorSpec(atoms=(atom,))
        return comp.tilt() if self.tilted else comp

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        if self.tilted:
            raise UnsupportedModelException("No sampler for the tilted heavy-tailed step")

        rng = np.random.default_rng(seq)
        hit = bool(rng.random() < self.jump_probability)
        size = float(HeavyTailMark(mass=1.0).sample(rng, 1)[0]) if hit else -0.5
        path = CadlagPath(0.0, np.array([1.0]), np.array([size]), self.horizon)

        if self.with_diffusion and self.horizon > 1:
            motion = _diffusion_path(rng, self.sigma2, self.step, 1.0, self.horizon)
            path = linear_combination((1.0, path), (1.0, motion))

        return SampledPath(path, {"heavy_jump": float(hit), "jump_size": size})

    def tilted_copy(self) -> HeavyTailStep:
        return self.rebuilt(tilted=not self.tilted, preset_id=None)


class Composite(_ModelBase):
    """Sum of independent components sampled on child substreams"""

    kind: Literal["composite"] = "composite"
    components: list[ModelSpec] = Field(min_length=1)

    @model_validator(mode="before")
    @classmethod
    def _share_horizon(cls, data: Any) -> Any:
        if isinstance(data, dict) and "horizon" in data:
            components = []
            for component in data.get("components", []):
                if isinstance(component, dict):
                    component = {**component, "horizon": data["horizon"]}
                elif isinstance(component, BaseModel):
                    component = {**component.model_dump(), "horizon": data["horizon"]}
                components.append(component)
            data = {**data, "components": components}
        return data

    @model_validator(mode="after")
    def _check_components(self) -> Composite:
        continuous = sum(
            isinstance(c, GridDiffusion) or (isinstance(c, HeavyTailStep) and c.with_diffusion)
            for c in self.components
        )
        if continuous > 1:
            raise InvalidParametersException("Composite supports a single continuous component")
        if sum(isinstance(c, CoxOneJump) for c in self.components) > 1:
            raise InvalidParametersException("Composite supports a single density component")
        return self

    @property
    def is_martingale(self) -> bool:
        return all(c.is_martingale for c in self.components)

    @property
    def min_horizon(self) -> float:
        return max(c.min_horizon for c in self.components)

    def sample(self, seq: np.random.SeedSequence) -> SampledPath:
        children = seq.spawn(len(self.components))
        samples = [component.sample(child) for component, child in zip(self.components, children)]
        latents = {f"{i}.{key}": value for i, s in enumerate(samples) for key, value in s.latents.items()}
        return SampledPath(linear_combination(*((1.0, s.path) for s in samples)), latents)

    def compensator(self) -> CompensatorSpec:
        atoms: list[Atom] = []
        density: Optional[RateDensity] = None
        for component in self.components:
            comp = component.compensator()
            atoms.extend(comp.atoms)
            if comp.rate_density is not None:
                density = comp.rate_density

        atoms.sort(key=lambda atom: atom.time)
        times = [atom.time for atom in atoms]
        if len(set(times)) != len(times):
            raise InvalidParametersException("Composite components share atom times")
        return CompensatorSpec(atoms=tuple(atoms), rate_density=density)

    def tilted_copy(self) -> Composite:
        return Composite(
            horizon=self.horizon,
            components=[component.tilted_copy() for component in self.components],
        )


ModelSpec = Annotated[
    Union[
        RandomWalkLargeJumps,
        DiscreteDensitySteps,
        DeterministicSeries,
        CoxOneJump,
        GridDiffusion,
        HeavyTailStep,
        Composite,
    ],
    Field(discriminator="kind"),
]

Composite.model_rebuild()

_MODEL_ADAPTER: TypeAdapter[Any] = TypeAdapter(ModelSpec)


def load_model(raw: dict[str, Any]) -> Any:
    """Validate a model from ``{kind, params{...}, horizon, preset_id?}`` or the flattened form

    Raises
    ------
    InvalidParametersException
        When validation fails
    """
    data = dict(raw)
    params = data.pop("params", None)
    if isinstance(params, dict):
        data = {**params, **data}

    try:
        return _MODEL_ADAPTER.validate_python(data)
    except ValidationError as e:
        raise InvalidParametersException(f"Invalid model: {e}") from e


def dump_model(model: Any) -> dict[str, Any]:
    return model.model_dump(mode="json")


def sample_path(model: Any, seed: int, index: int = 0, stream: int = 0) -> CadlagPath:
    """One path of ``model`` from the substream ``(seed, stream, index)``"""
    return model.sample(path_seed(seed, index, stream)).path


def compensator(model: Any) -> CompensatorSpec:
    return model.compensator()


@dataclass(frozen=True)
class Preset:
    build: Callable[[float], Any]
    oracle: EventOracle
    default_horizon: float
    min_horizon: float = 0.0
    aliases: tuple[str, ...] = ()


def _walk(x: SequenceSpec, p: Optional[SequenceSpec] = None) -> Callable[[float], Any]:
    return lambda horizon: RandomWalkLargeJumps(x=x, p=p or SequenceSpec(family="geometric"), horizon=horizon)


def _cox(**kwargs: Any) -> Callable[[float], Any]:
    return lambda horizon: CoxOneJump(horizon=horizon, **kwargs)


_COX_SURVIVAL = math.exp(-1.0)

_PRESETS: dict[str, Preset] = {
    "ex-6.2-1": Preset(
        _walk(SequenceSpec(family="alternating_sqrt", first_zero=True)),
        EventOracle(
            converges="yes",
            qv_finite="no",
            closure_semimartingale="no",
            exp_nonzero_limit="no",
            notes="x_n = (-1)^n / sqrt(n): the walk converges, its quadratic variation does not, E(X) tends to 0",
        ),
        default_horizon=1000,
        min_horizon=1,
    ),
    "ex-6.2-2": Preset(
        _walk(SequenceSpec(family="constant")),
        EventOracle(converges="no", qv_finite="no", closure_semimartingale="no", notes="x_n = 1: X tends to infinity"),
        default_horizon=200,
        min_horizon=1,
    ),
    "ex-6.2-3": Preset(
        _walk(SequenceSpec(family="oscillating_harmonic")),
        EventOracle(
            converges="no",
            qv_finite="yes",
            closure_semimartingale="no",
            notes="|x_n| = 1/n with partial sums swinging between growing levels",
        ),
        default_horizon=2000,
        min_horizon=1,
    ),
    "ex-6.2-4": Preset(
        _walk(SequenceSpec(family="exp_alternating_sqrt")),
        EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            exp_nonzero_limit="yes",
            notes="x_n = exp((-1)^n / sqrt(n)) - 1: E(X) has a nonzero limit while X tends to infinity",
        ),
        default_horizon=1000,
        min_horizon=1,
    ),
    "ex-6.2-5": Preset(
        _walk(SequenceSpec(family="neg_harmonic")),
        EventOracle(
            converges="no",
            qv_finite="yes",
            closure_semimartingale="no",
            notes="x_n = -1/n: finite quadratic variation, X tends to minus infinity",
        ),
        default_horizon=1000,
        min_horizon=1,
    ),
    "ex-6.2-6": Preset(
        _walk(SequenceSpec(family="alternating_harmonic")),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="no",
            notes="x_n = (-1)^n / n: converges with finite quadratic variation, not a semimartingale on the closure",
        ),
        default_horizon=1000,
        min_horizon=1,
    ),
    "ex-6.5": Preset(
        _walk(SequenceSpec(family="constant", scale=-0.5), SequenceSpec(family="dyadic_ui")),
        EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            ui="no",
            notes=(
                "x_n = -1/2 with dyadic p_n: X tends to minus infinity although "
                "c-exponential moments of Y stay bounded for c < 1"
            ),
        ),
        default_horizon=64,
        min_horizon=1,
    ),
    "ex-6.4": Preset(
        _cox(),
        EventOracle(
            converges="mixed",
            qv_finite="yes",
            closure_semimartingale="no",
            ui="yes",
            converge_probability=1 - _COX_SURVIVAL,
            limit_expectation=1.0,
            notes=(
                "Cox jump with rate (1+s)^-2 and mark s: never jumps with "
                "probability 1/e and then drifts to minus infinity"
            ),
        ),
        default_horizon=50,
    ),
    "ex-6.8": Preset(
        _cox(),
        EventOracle(
            converges="mixed",
            qv_finite="yes",
            closure_semimartingale="no",
            ui="yes",
            converge_probability=1 - _COX_SURVIVAL,
            limit_expectation=1.0,
            notes="Same Cox jump: c-exponential moments of log(1+x) * (mu - nu) are bounded for c < 1 only",
        ),
        default_horizon=50,
    ),
    "ex-6.6": Preset(
        lambda horizon: Composite(
            horizon=horizon,
            components=[
                GridDiffusion(horizon=horizon),
                CoxOneJump(horizon=horizon, mark=RateFunction(name="shifted_square")),
            ],
        ),
        EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            notes="Brownian motion plus a Cox jump with mark 1/rate, so the compensating drift is -t before the jump",
        ),
        default_horizon=20,
    ),
    "ex-6.7": Preset(
        _cox(mark_sign=-1, compensated=False),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="yes",
            notes="Uncompensated single negative jump: a semimartingale on the closure",
        ),
        default_horizon=50,
    ),
    "ex-6.3-1": Preset(
        lambda horizon: DiscreteDensitySteps(horizon=horizon),
        EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            ui="no",
            notes="Steps 1 and -(1-p)/(1+p): bounded B^a criteria for a > 0 yet E(M) is not uniformly integrable",
        ),
        default_horizon=32,
        min_horizon=1,
    ),
    "ex-6.3-2": Preset(
        _cox(reflected=True, weight_power=1),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="yes",
            ui="no",
            limit_expectation=1 - _COX_SURVIVAL,
            notes="Dual of the Cox jump: jumps almost surely, E(M) loses mass 1/e in the limit",
        ),
        default_horizon=50,
    ),
    "ex-5.9": Preset(
        lambda horizon: HeavyTailStep(horizon=horizon),
        EventOracle(
            converges="no",
            qv_finite="no",
            closure_semimartingale="no",
            ui="no",
            notes="Heavy-tailed jump at 1 then Brownian motion: entropy compensator infinite at 1, E(M) tends to 0",
        ),
        default_horizon=4,
        min_horizon=1,
        aliases=("ex-5.16",),
    ),
    "ex-5.9-stopped": Preset(
        lambda horizon: HeavyTailStep(horizon=horizon, with_diffusion=False),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="yes",
            ui="yes",
            limit_expectation=1.0,
            notes=(
                "Heavy-tailed jump only: uniformly integrable while the "
                "A^a criterion has infinite Z-weighted mean for a < 1"
            ),
        ),
        default_horizon=2,
        min_horizon=1,
        aliases=("ex-5.16-part-2",),
    ),
    "remark-4.3": Preset(
        lambda horizon: DeterministicSeries(x=SequenceSpec(family="alternating_harmonic"), horizon=horizon),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="no",
            notes=(
                "Alternating harmonic series: converges while its total "
                "variation is infinite; x_1 = -1 absorbs E(X) at 1"
            ),
        ),
        default_horizon=1000,
        min_horizon=1,
    ),
    "ui-summable": Preset(
        _walk(SequenceSpec(family="geometric")),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="yes",
            ui="yes",
            exp_nonzero_limit="yes",
            limit_expectation=1.0,
            notes="x_n = p_n = 2^-n: bounded exponential, uniformly integrable",
        ),
        default_horizon=64,
        min_horizon=1,
    ),
    "zero": Preset(
        lambda horizon: DeterministicSeries(x=SequenceSpec(family="constant", scale=0.0), horizon=horizon),
        EventOracle(
            converges="yes",
            qv_finite="yes",
            closure_semimartingale="yes",
            ui="yes",
            exp_nonzero_limit="yes",
            limit_expectation=1.0,
            notes="M = 0",
        ),
        default_horizon=10,
        min_horizon=1,
    ),
}

_ALIASES = {alias: key for key, value in _PRESETS.items() for alias in value.aliases}


def preset_ids() -> list[str]:
    return sorted(_PRESETS)


def _preset_entry(preset_id: str) -> tuple[str, Preset]:
    key = _ALIASES.get(preset_id, preset_id)
    if key not in _PRESETS:
        raise UnknownPresetException(f"Unknown preset: {preset_id}")
    return key, _PRESETS[key]


def preset(preset_id: str, horizon: Optional[float] = None) -> Any:
    """Fully parameterised model registered under ``preset_id``

    Raises
    ------
    UnknownPresetException
        When the id is not registered
    InvalidParametersException
        When ``horizon`` is below the preset's minimum
    """
    key, entry = _preset_entry(preset_id)
    horizon = entry.default_horizon if horizon is None else horizon
    if horizon < entry.min_horizon:
        raise InvalidParametersException(f"Preset {key} needs horizon >= {entry.min_horizon}, got {horizon}")
    return entry.build(horizon).rebuilt(preset_id=key)


def preset_min_horizon(preset_id: str) -> float:
    return _preset_entry(preset_id)[1].min_horizon


def analytic_oracle(model: Any) -> EventOracle:
    """Closed-form asymptotic answers for ``model``

    Raises
    ------
    OracleUnavailableException
        For custom models without a series test
    """
    if model.preset_id is not None:
        return _preset_entry(model.preset_id)[1].oracle
    return model.oracle()


@dataclass(frozen=True)
class ProductLaw:
    """Exact law of ``log E(M)_T`` for finitely many independent atoms"""

    log_values: FloatArray
    probabilities: FloatArray
    discarded: float

    def mean(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.dot(self.probabilities, np.exp(self.log_values)))

    def truncated_mean(self, level: float) -> float:
        keep = self.log_values <= math.log(level)
        return float(np.dot(self.probabilities[keep], np.exp(self.log_values[keep])))

    def probability_at_most(self, level: float) -> float:
        return float(self.probabilities[self.log_values <= math.log(level)].sum())

    def probability_at_least(self, level: float) -> float:
        return float(self.probabilities[self.log_values >= math.log(level)].sum())


def product_law(model: Any, horizon: float, prune: float = 1e-14, max_branches: int = 200_000) -> ProductLaw:
    """Enumerate ``log E(M)_T`` over the atoms up to ``horizon``, merging equal values

    Branches below ``prune`` in probability and beyond ``max_branches`` are
    dropped and their mass reported as ``discarded``.

    Raises
    ------
    UnsupportedModelException
        For models with a density part, a heavy-tailed atom, a continuous part
        or jumps below -1
    """
    if not isinstance(model, _StepModel):
        raise UnsupportedModelException(f"No product law for model kind {getattr(model, 'kind', model)}")

    law = model.law()
    keep = law.times <= horizon
    logs = np.zeros(1)
    probs = np.ones(1)
    discarded = 0.0

    for a, b, p in zip(law.first[keep], law.second[keep], law.p_second[keep]):
        sizes = np.array([a, b])
        masses = np.array([1 - p, p])
        live = masses > 0
        sizes, masses = sizes[live], masses[live]
        if np.any(sizes < -1):
            raise UnsupportedModelException("Jumps below -1 have no log law")

        with np.errstate(divide="ignore"):
            steps = np.log1p(sizes)
        logs = (logs[:, None] + steps[None, :]).ravel()
        probs = (probs[:, None] * masses[None, :]).ravel()

        finite = np.isfinite(logs)
        rounded = np.where(finite, np.round(logs, 12), logs)
        logs, inverse = np.unique(rounded, return_inverse=True)
        probs = np.bincount(inverse.ravel(), weights=probs, minlength=logs.size)

        small = probs < prune
        discarded += float(probs[small].sum())
        logs, probs = logs[~small], probs[~small]

        if logs.size > max_branches:
            order = np.argsort(probs)[::-1]
            discarded += float(probs[order[max_branches:]].sum())
            top = np.sort(order[:max_branches])
            logs, probs = logs[top], probs[top]

    return ProductLaw(logs, probs, discarded)


def check_nonnegative_integrands(sizes: FloatArray) -> None:
    """``log(1+x) - x/(1+x)`` and ``(1+x) log(1+x) - x`` are nonnegative on the sampled jumps

    Raises
    ------
    DomainException
        When a jump is at or below -1 or an integrand is negative beyond rounding
    """
    ratio = TestFunction(tag="log_ratio")(sizes)
    entropy = TestFunction(tag="entropy")(sizes)
    if np.any(ratio < -1e-12) or np.any(entropy < -1e-12):
        raise DomainException("Criterion integrand went negative")
