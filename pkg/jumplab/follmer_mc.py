from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .criteria import CriterionSpec, before_absorption, criterion_process
from .exceptions import InvalidParametersException, UnsupportedModelException
from .functionals import Atom, CompensatorSpec, TestFunction, quadratic_variation
from .hooks.base import BaseHook
from .jumplab_types import ExperimentContext, FloatArray
from .models import BOOTSTRAP_STREAM, DUAL_STREAM, PATH_STREAM, path_seed, product_law
from .path_core import CadlagPath, first_crossing, linear_combination, sup_abs
from .stochexp import LOG_FLOOR, log_exponential, reciprocal_log
from .stopping import DeterministicTime, FirstCrossing, stopping_time
from .sync_ensemble import EnsembleRunner

# two-sided 1% coefficient of the two-sample Kolmogorov-Smirnov bound
_KS_COEFFICIENT = 1.628


class TiltRow(BaseModel):
    time: float
    p_sizes: tuple[float, ...]
    p_masses: tuple[float, ...]
    q_sizes: tuple[float, ...]
    q_masses: tuple[float, ...]
    q_total: float


class DualModelPair(BaseModel):
    """P-side model of M and the Q-side model of N under the (1 + x)-tilted jump laws"""

    p_model: Any
    q_model: Any
    tilt_certificate: list[TiltRow] = Field(default_factory=list)
    density_tilt: Optional[str] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def max_mass_defect(self) -> float:
        return max((abs(row.q_total - 1) for row in self.tilt_certificate), default=0.0)


def _atom_total(atom: Atom) -> float:
    total = float(sum(atom.masses))
    if atom.heavy_tail is not None:
        total += atom.heavy_tail.integrate(TestFunction(tag="one"))
    return total


def tilt_model(p_model: Any) -> DualModelPair:
    """Dual pair whose Q-side atoms carry ``(phi(x), (1 + x) mass)``

    Parameters
    ----------
    p_model : ModelSpec
        Martingale model with jumps above -1

    Raises
    ------
    UnsupportedModelException
        When the model is not a martingale or has mass at or below -1

    Returns
    -------
    tilt_model : DualModelPair
        With a per-atom certificate of the tilt
    """
    if not p_model.is_martingale:
        raise UnsupportedModelException(f"Model {p_model.kind} is not a martingale")

    q_model = p_model.tilted_copy()
    p_comp: CompensatorSpec = p_model.compensator()
    q_comp: CompensatorSpec = q_model.compensator()

    certificate = [
        TiltRow(
            time=p_atom.time,
            p_sizes=p_atom.sizes,
            p_masses=p_atom.masses,
            q_sizes=q_atom.sizes,
            q_masses=q_atom.masses,
            q_total=_atom_total(q_atom),
        )
        for p_atom, q_atom in zip(p_comp.atoms, q_comp.atoms)
    ]

    density_tilt = None
    if p_comp.rate_density is not None and q_comp.rate_density is not None:
        p_density, q_density = p_comp.rate_density, q_comp.rate_density
        density_tilt = (
            f"reflected {p_density.reflected} -> {q_density.reflected}, "
            f"weight power {p_density.weight_power} -> {q_density.weight_power}"
        )

    return DualModelPair(p_model=p_model, q_model=q_model, tilt_certificate=certificate, density_tilt=density_tilt)


_BOUND = r"(-?[0-9.eE+-]+)"
_STATISTIC = re.compile(rf"^(one|tanh|exp_neg_abs|indicator:X(<=|>=){_BOUND}|box:{_BOUND},{_BOUND})$")


class PathStatistic(BaseModel):
    """Bounded function ``G`` of the martingale value at the stopping time"""

    kind: Literal["one", "below", "above", "box", "tanh", "exp_neg_abs"]
    lower: float = -math.inf
    upper: float = math.inf

    model_config = ConfigDict(extra="forbid", frozen=True)

    def __call__(self, x: float) -> float:
        match self.kind:
            case "one":
                return 1.0
            case "below":
                return float(x <= self.upper)
            case "above":
                return float(x >= self.lower)
            case "box":
                return float(self.lower <= x <= self.upper)
            case "tanh":
                return math.tanh(x)
            case "exp_neg_abs":
                return math.exp(-abs(x))


def parse_statistic(text: str) -> PathStatistic:
    """Parse ``one``, ``indicator:X<=c``, ``indicator:X>=c``, ``box:a,b``, ``tanh`` or ``exp_neg_abs``"""
    match = _STATISTIC.match(text.strip())
    if match is None:
        raise InvalidParametersException(f"Unknown statistic: {text}")

    head, op, bound, lower, upper = match.groups()
    if head in ("one", "tanh", "exp_neg_abs"):
        return PathStatistic(kind=head)
    if op == "<=":
        return PathStatistic(kind="below", upper=float(bound))
    if op == ">=":
        return PathStatistic(kind="above", lower=float(bound))
    return PathStatistic(kind="box", lower=float(lower), upper=float(upper))


def _targets(M: CadlagPath, log_z: CadlagPath, N: CadlagPath) -> dict[str, CadlagPath]:
    return {"X": M, "logZ": log_z, "N": N, "QV": quadratic_variation(M)}


def _check_rule(rule: DeterministicTime | FirstCrossing) -> None:
    if isinstance(rule, FirstCrossing) and rule.target not in ("X", "Z", "N", "QV"):
        raise InvalidParametersException(f"Crossing target {rule.target} is not expressible on both sides")


@dataclass(frozen=True)
class _PSide:
    model: Any
    rule: DeterministicTime | FirstCrossing
    statistic: PathStatistic
    seed: int

    def __call__(self, index: int) -> float:
        M = self.model.sample(path_seed(self.seed, index, PATH_STREAM)).path
        pre, tau = before_absorption(M)
        log_z = log_exponential(pre)
        sigma = stopping_time(self.rule, _targets(pre, log_z, reciprocal_log(pre)), pre.horizon)
        if sigma >= tau:
            return 0.0
        return float(np.exp(log_z.values(sigma)[0])) * self.statistic(float(pre.values(sigma)[0]))


@dataclass(frozen=True)
class _QSide:
    model: Any
    rule: DeterministicTime | FirstCrossing
    statistic: PathStatistic
    seed: int

    def __call__(self, index: int) -> float:
        N = self.model.sample(path_seed(self.seed, index, DUAL_STREAM)).path
        M = reciprocal_log(N)
        log_n = log_exponential(N)
        log_z = linear_combination((-1.0, log_n))
        sigma = stopping_time(self.rule, _targets(M, log_z, N), N.horizon)
        if float(log_n.values(sigma)[0]) < LOG_FLOOR:
            return 0.0
        return self.statistic(float(M.values(sigma)[0]))


class DualityResult(BaseModel):
    rule: str
    statistic: str
    n_paths: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    passed: bool


def _mean_se(values: FloatArray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()) if values.size else 0.0, 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def duality_check(
    pair: DualModelPair,
    sigma: DeterministicTime | FirstCrossing,
    G: PathStatistic,
    n_paths: int,
    seed: int,
    *,
    k: float = 4.0,
    runner: Optional[EnsembleRunner] = None,
    hooks: Optional[list[BaseHook]] = None,
) -> DualityResult:
    """Paired estimates of ``E_P[Z_sigma G]`` and ``E_Q[G 1{Z_sigma < inf}]``

    The sides use disjoint substreams. Explosion on the Q side is ``E(N)``
    falling below ``exp(-745)``.

    Parameters
    ----------
    pair : DualModelPair
        Output of ``tilt_model``
    sigma : DeterministicTime | FirstCrossing
        Stopping rule on X, Z, N or QV
    G : PathStatistic
        Bounded function of ``M_sigma``
    n_paths : int
        Paths per side
    seed : int
        Root seed
    k : float = 4.0
        Pass when ``|lhs - rhs| <= k`` combined standard errors

    Raises
    ------
    InvalidParametersException
        When ``sigma`` crosses a target only one side can compute
    UnsupportedModelException
        When the Q side has no sampler
    """
    _check_rule(sigma)
    runner = runner or EnsembleRunner()
    context = ExperimentContext(
        model_kind=pair.p_model.kind,
        preset_id=pair.p_model.preset_id,
        operation_name="follmer-check",
        summary=f"{sigma.label()} {G.kind}",
    )

    lhs_values = runner.map(_PSide(pair.p_model, sigma, G, seed), n_paths, context=context, hooks=hooks)
    rhs_values = runner.map(_QSide(pair.q_model, sigma, G, seed), n_paths, context=context, hooks=hooks)
    lhs, lhs_se = _mean_se(np.asarray(lhs_values))
    rhs, rhs_se = _mean_se(np.asarray(rhs_values))
    combined = math.hypot(lhs_se, rhs_se)

    return DualityResult(
        rule=sigma.label(),
        statistic=G.kind,
        n_paths=n_paths,
        lhs=lhs,
        lhs_se=lhs_se,
        rhs=rhs,
        rhs_se=rhs_se,
        passed=abs(lhs - rhs) <= k * combined + 1e-12,
    )


@dataclass(frozen=True)
class _LogZAt:
    """``log E(M)`` at each horizon on the P side, ``-log E(N)`` on the Q side"""

    model: Any
    horizons: tuple[float, ...]
    seed: int
    dual: bool

    def __call__(self, index: int) -> FloatArray:
        stream = DUAL_STREAM if self.dual else PATH_STREAM
        path = self.model.sample(path_seed(self.seed, index, stream)).path
        if self.dual:
            return -log_exponential(path).values(self.horizons)

        pre, tau = before_absorption(path)
        ts = np.asarray(self.horizons)
        out = np.full(ts.size, -np.inf)
        alive = ts < tau
        out[alive] = log_exponential(pre).values(ts[alive])
        return out


class UiProbeRow(BaseModel):
    horizon: float
    p_mean: float
    p_se: float
    p_truncated: float
    p_truncated_se: float
    q_no_explosion: Optional[float]
    q_se: Optional[float]
    exact: Optional[float]


class UiProbe(BaseModel):
    level: float
    rows: list[UiProbeRow]
    trend: Literal["flat", "decaying", "undetermined"]
    notes: list[str] = Field(default_factory=list)


def ui_probe(
    pair: DualModelPair,
    horizons: list[float],
    n_paths: int,
    seed: int,
    *,
    level: float = 1e3,
    runner: Optional[EnsembleRunner] = None,
    hooks: Optional[list[BaseHook]] = None,
) -> UiProbe:
    """Track ``E_P[Z_T]``, ``E_P[Z_T; Z_T <= K]`` and ``Q(Z_T <= K)`` over horizons

    At finite T the martingale gives ``E_P[Z_T] = 1``; loss of mass in the limit
    shows up in the truncated mean and in ``Q(Z_T <= K)``, which agree by
    duality. ``exact`` is the Q-side product law where the model has one.
    """
    if not horizons or any(b <= a for a, b in zip(horizons[:-1], horizons[1:])):
        raise InvalidParametersException("horizons must be nonempty and increasing")

    runner = runner or EnsembleRunner()
    top = horizons[-1]
    p_model = pair.p_model if pair.p_model.horizon >= top else pair.p_model.with_horizon(top)
    q_model = pair.q_model if pair.q_model.horizon >= top else pair.q_model.with_horizon(top)
    context = ExperimentContext(model_kind=p_model.kind, preset_id=p_model.preset_id, operation_name="ui-probe")
    notes: list[str] = []

    log_k = math.log(level)
    p_task = _LogZAt(p_model, tuple(horizons), seed, False)
    p_logs = np.vstack(runner.map(p_task, n_paths, context=context, hooks=hooks))
    with np.errstate(over="ignore"):
        p_values = np.exp(p_logs)
    p_truncated = np.where(p_logs <= log_k, p_values, 0.0)

    q_below: Optional[FloatArray] = None
    try:
        q_task = _LogZAt(q_model, tuple(horizons), seed, True)
        q_logs = np.vstack(runner.map(q_task, n_paths, context=context, hooks=hooks))
        q_below = (q_logs <= log_k).astype(np.float64)
    except UnsupportedModelException as e:
        notes.append(f"Q side unavailable: {e}")

    rows = []
    for j, T in enumerate(horizons):
        p_mean, p_se = _mean_se(p_values[:, j])
        t_mean, t_se = _mean_se(p_truncated[:, j])
        q_mean, q_se = (None, None) if q_below is None else _mean_se(q_below[:, j])

        exact: Optional[float] = None
        try:
            exact = product_law(q_model, T).probability_at_least(1 / level)
        except UnsupportedModelException:
            pass

        rows.append(
            UiProbeRow(
                horizon=T,
                p_mean=p_mean,
                p_se=p_se,
                p_truncated=t_mean,
                p_truncated_se=t_se,
                q_no_explosion=q_mean,
                q_se=q_se,
                exact=exact,
            )
        )

    first, last = rows[0], rows[-1]
    spread = 4 * math.hypot(first.p_truncated_se, last.p_truncated_se)
    trend: Literal["flat", "decaying", "undetermined"]
    if last.p_truncated < first.p_truncated - spread and last.p_truncated < 1 - 4 * last.p_truncated_se:
        trend = "decaying"
    elif abs(last.p_truncated - 1) <= max(4 * last.p_truncated_se, 1e-3):
        trend = "flat"
    else:
        trend = "undetermined"

    return UiProbe(level=level, rows=rows, trend=trend, notes=notes)


class ReciprocalConsistency(BaseModel):
    horizon: float
    statistic: float
    pvalue: float
    critical: float
    p_count: int
    q_count: int
    passed: bool


def reciprocal_consistency(
    pair: DualModelPair,
    horizon: float,
    n_paths: int,
    seed: int,
    *,
    level: float = 1e3,
    runner: Optional[EnsembleRunner] = None,
) -> ReciprocalConsistency:
    """Two-sample KS test of Q-side ``1/E(N)_T`` against Z-weighted resampled P-side ``Z_T``

    Both samples are restricted to ``Z_T <= level``.
    """
    runner = runner or EnsembleRunner()
    p_logs = np.concatenate(runner.map(_LogZAt(pair.p_model, (horizon,), seed, False), n_paths))
    q_logs = np.concatenate(runner.map(_LogZAt(pair.q_model, (horizon,), seed, True), n_paths))

    log_k = math.log(level)
    p_z = np.exp(p_logs[p_logs <= log_k])
    q_z = np.exp(q_logs[q_logs <= log_k])
    if p_z.size == 0 or q_z.size == 0 or p_z.sum() <= 0:
        raise InvalidParametersException("No paths on the non-explosion slice")

    rng = np.random.default_rng(path_seed(seed, 1, BOOTSTRAP_STREAM))
    resampled = rng.choice(p_z, size=p_z.size, p=p_z / p_z.sum())

    result = stats.ks_2samp(resampled, q_z)
    n, m = resampled.size, q_z.size
    critical = _KS_COEFFICIENT * math.sqrt((n + m) / (n * m))
    statistic = float(result.statistic)

    return ReciprocalConsistency(
        horizon=horizon,
        statistic=statistic,
        pvalue=float(result.pvalue),
        critical=critical,
        p_count=n,
        q_count=m,
        passed=statistic <= critical,
    )


class LocalizationDiagnostic(BaseModel):
    """Crossing-time localization: ``E[sup_{t <= tau_n} |X_t|]`` and ``P(tau_n >= T)`` per level"""

    target: str
    z_weighted: bool
    levels: list[float]
    sup_mean: list[float]
    sup_se: list[float]
    coverage: list[float]
    nonfinite: int = 0


@dataclass(frozen=True)
class _LocalizationTask:
    model: Any
    target: str
    levels: tuple[float, ...]
    seed: int
    z_weighted: bool
    criterion: Optional[CriterionSpec]

    def _target_path(self, M: CadlagPath) -> CadlagPath:
        match self.target:
            case "X":
                return M
            case "N":
                return reciprocal_log(M)
            case "QV":
                return quadratic_variation(M)
            case "criterion":
                if self.criterion is None:
                    raise InvalidParametersException("criterion target needs a CriterionSpec")
                comp = self.model.compensator() if self.criterion.needs_compensator else None
                return criterion_process(self.criterion, M, comp)
            case _:
                raise InvalidParametersException(f"Unknown localization target: {self.target}")

    def __call__(self, index: int) -> tuple[FloatArray, FloatArray]:
        M = self.model.sample(path_seed(self.seed, index, PATH_STREAM)).path
        pre, tau = before_absorption(M) if self.z_weighted or self.target != "X" else (M, math.inf)
        path = self._target_path(pre)
        log_z = log_exponential(pre) if self.z_weighted else None

        sups = np.empty(len(self.levels))
        covered = np.empty(len(self.levels))
        for j, level in enumerate(self.levels):
            hit = first_crossing(path, level, "abs")
            end = path.last_time() if hit is None else hit
            covered[j] = float(hit is None or hit >= path.horizon)
            sups[j] = sup_abs(path, end)
            if log_z is not None:
                stop = min(end, pre.horizon)
                with np.errstate(over="ignore"):
                    sups[j] *= 0.0 if stop >= tau else float(np.exp(log_z.values(stop)[0]))
        return sups, covered


def extended_local_diag(
    model: Any,
    target: str,
    levels: list[float],
    n_paths: int,
    seed: int,
    *,
    z_weighted: bool = False,
    criterion: Optional[CriterionSpec] = None,
    runner: Optional[EnsembleRunner] = None,
    hooks: Optional[list[BaseHook]] = None,
) -> LocalizationDiagnostic:
    """Localize ``target`` at its crossing times of ``levels``

    Parameters
    ----------
    target : str
        ``X``, ``N``, ``QV`` or ``criterion`` (with ``criterion`` given)
    levels : list[float]
        Strictly increasing crossing levels
    z_weighted : bool = False
        Weight by ``E(M)`` at the localizing time, the Q-side variant

    Raises
    ------
    InvalidParametersException
        When levels are not strictly increasing or the target is unknown
    """
    if not levels or any(b <= a for a, b in zip(levels[:-1], levels[1:])):
        raise InvalidParametersException("levels must be strictly increasing")

    runner = runner or EnsembleRunner()
    context = ExperimentContext(model_kind=model.kind, preset_id=model.preset_id, operation_name="extended-local")
    task = _LocalizationTask(model, target, tuple(levels), seed, z_weighted, criterion)
    results = runner.map(task, n_paths, context=context, hooks=hooks)

    sups = np.vstack([sup for sup, _ in results])
    covered = np.vstack([cov for _, cov in results])
    finite = np.isfinite(sups)
    nonfinite = int((~finite).sum())

    sup_mean, sup_se = [], []
    for j in range(len(levels)):
        column = sups[:, j]
        if not np.all(finite[:, j]):
            sup_mean.append(math.inf)
            sup_se.append(math.inf)
            continue
        mean, se = _mean_se(column)
        sup_mean.append(mean)
        sup_se.append(se)

    return LocalizationDiagnostic(
        target=target if criterion is None else f"{target}:{criterion.label()}",
        z_weighted=z_weighted,
        levels=list(levels),
        sup_mean=sup_mean,
        sup_se=sup_se,
        coverage=[float(c) for c in covered.mean(axis=0)],
        nonfinite=nonfinite,
    )
