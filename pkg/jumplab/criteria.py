from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import (
    CompensatorDivergesException,
    DomainException,
    InvalidParametersException,
    NonFiniteSampleException,
)
from .functionals import (
    CompensatorSpec,
    TestFunction,
    compensator_path,
    jump_integral,
    quadratic_variation,
)
from .hooks.base import BaseHook
from .jumplab_types import ExperimentContext, FloatArray
from .models import BOOTSTRAP_STREAM, PATH_STREAM, path_seed
from .path_core import CadlagPath, linear_combination, zero_path
from .stochexp import ABSORPTION_TOLERANCE, log_exponential, log_transform, reciprocal_log, stoch_exp
from .stopping import StoppingFamily
from .sync_ensemble import EnsembleRunner

CriterionTag = Literal[
    "N",
    "L",
    "A_a",
    "B_a",
    "LM_A",
    "LM_B",
    "kazamaki_mu",
    "kazamaki_nu",
    "novikov_delta",
    "expm_nu",
    "further_c",
    "further_e",
    "further_g",
    "log_mg",
]

# tags whose process reads the compensator
_NEEDS_COMPENSATOR = frozenset({"L", "B_a", "LM_B", "kazamaki_nu", "expm_nu", "further_c", "further_g", "log_mg"})

# exp overflows past this
_EXP_LIMIT = 709.0


class CriterionSpec(BaseModel):
    """Criterion process tag with its parameters

    ``a`` is the family parameter of A_a and B_a, ``delta`` the jump floor of
    novikov_delta and ``c`` the multiplier of log_mg.
    """

    tag: CriterionTag
    a: float = 0.0
    delta: float = Field(default=0.5, gt=0, le=1)
    c: float = 0.5

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def needs_compensator(self) -> bool:
        return self.tag in _NEEDS_COMPENSATOR

    def label(self) -> str:
        match self.tag:
            case "A_a" | "B_a":
                return f"{self.tag}(a={self.a:g})"
            case "novikov_delta":
                return f"{self.tag}(delta={self.delta:g})"
            case "log_mg":
                return f"{self.tag}(c={self.c:g})"
            case _:
                return self.tag


def _continuous_qv(M: CadlagPath) -> CadlagPath:
    """``[M^c, M^c]`` as a path"""
    return CadlagPath(0.0, np.empty(0), np.empty(0), M.horizon, drift=quadratic_variation(M).drift)


def _mu(M: CadlagPath, tag: str, exponent: float = 0.0) -> CadlagPath:
    return jump_integral(M, TestFunction(tag=tag, exponent=exponent))  # type: ignore[arg-type]


def _nu(comp: CompensatorSpec, M: CadlagPath, tag: str, coef: float = 1.0) -> CadlagPath:
    return compensator_path(comp, TestFunction(tag=tag), M, coef=coef)  # type: ignore[arg-type]


def process_N(M: CadlagPath) -> CadlagPath:
    """``N = -M + [M^c, M^c] + x^2/(1+x) * mu``, jumps ``phi`` of the jumps of M

    Raises
    ------
    DomainException
        When a jump of M is at or below -1
    """
    return reciprocal_log(M.centered())


def process_L(M: CadlagPath, comp: CompensatorSpec) -> CadlagPath:
    """``L = -M + [M^c, M^c] + (x - log(1+x)) * mu + ((1+x) log(1+x) - x) * nu``

    Raises
    ------
    CompensatorDivergesException
        When the entropy compensator is infinite before the horizon
    """
    return linear_combination(
        (-1.0, M.centered()),
        (1.0, _continuous_qv(M)),
        (1.0, _mu(M, "xm_log")),
        (1.0, _nu(comp, M, "entropy")),
    )


def process_Aa(a: float, M: CadlagPath) -> CadlagPath:
    """``A^a = aM + (1/2 - a)[M^c, M^c] + (log(1+x) - (a x^2 + x)/(1+x)) * mu``

    Raises
    ------
    DomainException
        When a jump of M is at or below -1
    """
    return linear_combination(
        (a, M.centered()),
        (0.5 - a, _continuous_qv(M)),
        (1.0, _mu(M, "log_ratio", a)),
    )


def process_Ba(a: float, M: CadlagPath, comp: CompensatorSpec) -> CadlagPath:
    """``B^a = aM + (1/2 - a)[M^c, M^c] - a (x - log(1+x)) * mu + (1 - a)((1+x) log(1+x) - x) * nu``

    The compensator term is skipped at ``a = 1``.

    Raises
    ------
    CompensatorDivergesException
        When the entropy compensator is infinite before the horizon and a != 1
    """
    terms = [
        (a, M.centered()),
        (0.5 - a, _continuous_qv(M)),
        (-a, _mu(M, "xm_log")),
    ]
    if a != 1:
        terms.append((1.0 - a, _nu(comp, M, "entropy")))
    return linear_combination(*terms)


def process_LM_A(M: CadlagPath) -> CadlagPath:
    """``1/2 [M^c, M^c] + (log(1+x) - x/(1+x)) * mu``, nondecreasing"""
    return linear_combination((0.5, _continuous_qv(M)), (1.0, _mu(M, "log_ratio")))


def process_LM_B(M: CadlagPath, comp: CompensatorSpec) -> CadlagPath:
    """``1/2 [M^c, M^c] + ((1+x) log(1+x) - x) * nu``, nondecreasing"""
    return linear_combination((0.5, _continuous_qv(M)), (1.0, _nu(comp, M, "entropy")))


def criterion_process(spec: CriterionSpec, M: CadlagPath, comp: Optional[CompensatorSpec] = None) -> CadlagPath:
    """Criterion path of ``spec`` for the martingale path ``M``

    Parameters
    ----------
    spec : CriterionSpec
        Which process and its parameters
    M : CadlagPath
        Martingale path with jumps above -1
    comp : Optional[CompensatorSpec] = None
        Compensator of M, required by the tags that integrate against it

    Raises
    ------
    DomainException
        When a jump of M is at or below -1
    CompensatorDivergesException
        When a compensator term is infinite before the horizon
    InvalidParametersException
        When the tag needs a compensator and none is given
    """
    if spec.needs_compensator and comp is None:
        raise InvalidParametersException(f"Criterion {spec.tag} needs the compensator")
    comp = comp or CompensatorSpec()

    match spec.tag:
        case "N":
            return process_N(M)
        case "L":
            return process_L(M, comp)
        case "A_a":
            return process_Aa(spec.a, M)
        case "B_a":
            return process_Ba(spec.a, M, comp)
        case "LM_A":
            return process_LM_A(M)
        case "LM_B":
            return process_LM_B(M, comp)
        case "kazamaki_mu":
            return linear_combination((0.5, M.centered()), (1.0, _mu(M, "log_ratio_neg", 0.5)))
        case "kazamaki_nu":
            return linear_combination((0.5, M.centered()), (0.5, _nu(comp, M, "entropy")))
        case "novikov_delta":
            delta = spec.delta
            return linear_combination(
                (1 / (1 + delta), M.centered()),
                (-(1 - delta) / (2 + 2 * delta), _continuous_qv(M)),
            )
        case "expm_nu":
            return _nu(comp, M, "expm")
        case "further_c":
            return linear_combination((1.0, _continuous_qv(M)), (1.0, _nu(comp, M, "truncated_abs")))
        case "further_e":
            return linear_combination((1.0, _continuous_qv(M)), (1.0, _mu(M, "ratio_square")))
        case "further_g":
            return linear_combination((1.0, _continuous_qv(M)), (1.0, _nu(comp, M, "entropy")))
        case "log_mg":
            return linear_combination((spec.c, log_transform(M, comp).Y))


def offset_process(spec: CriterionSpec, M: CadlagPath, comp: Optional[CompensatorSpec] = None) -> CadlagPath:
    """``U = (1 - a) N`` for A_a and ``(1 - a) L`` for B_a, so that the criterion minus U is ``log E(M)``"""
    match spec.tag:
        case "A_a":
            return linear_combination((1 - spec.a, process_N(M)))
        case "B_a":
            if comp is None:
                raise InvalidParametersException("B_a offset needs the compensator")
            if spec.a == 1:
                return zero_path(M.horizon)
            return linear_combination((1 - spec.a, process_L(M, comp)))
        case _:
            raise InvalidParametersException(f"No offset process for criterion {spec.tag}")


def identity_check(a: float, M: CadlagPath, comp: CompensatorSpec) -> tuple[float, float]:
    """Largest deviations of ``A^a - (log Z + (1-a) N)`` and ``B^a - (log Z + (1-a) L)``

    Both sides are read at every critical time, as values and as left limits.

    Raises
    ------
    DomainException
        When a jump of M is at or below -1
    CompensatorDivergesException
        When the entropy compensator diverges before the horizon
    """
    log_z = log_exponential(M)
    ts = M.critical_times()

    def deviation(lhs: CadlagPath, rhs: CadlagPath) -> float:
        values = np.abs(lhs.values(ts) - rhs.values(ts))
        lefts = np.abs(lhs.left_limits(ts) - rhs.left_limits(ts))
        return float(max(values.max(), lefts.max()))

    A = process_Aa(a, M)
    dev_a = deviation(A, linear_combination((1.0, log_z), (1 - a, process_N(M))))

    B = process_Ba(a, M, comp)
    rhs_b = log_z if a == 1 else linear_combination((1.0, log_z), (1 - a, process_L(M, comp)))
    dev_b = deviation(B, rhs_b)

    return dev_a, dev_b


def novikov_delta_holds(sizes: FloatArray, delta: float) -> bool:
    """``log(1+x) - (x^2/(1+delta) + x)/(1+x) <= 0`` on jumps at or above ``-1 + delta``

    The jump term of A^a with ``a = 1/(1+delta)`` is then nonpositive, so the
    novikov_delta exponent dominates A^a. Its derivative is
    ``-x (1 - delta + x) / ((1 + delta)(1 + x)^2)``, which vanishes at zero
    and keeps the sign of ``-x`` above ``-1 + delta``.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    sizes = sizes[(sizes >= -1 + delta) & (sizes > -1)]
    if sizes.size == 0:
        return True
    values = TestFunction(tag="log_ratio", exponent=1 / (1 + delta))(sizes)
    return bool(np.all(values <= 1e-12))


def is_nondecreasing(path: CadlagPath, tolerance: float = 1e-12) -> bool:
    ts = path.critical_times()
    values = path.values(ts)
    lefts = path.left_limits(ts)
    seen = np.empty(2 * ts.size)
    seen[0::2], seen[1::2] = lefts, values
    return bool(np.all(np.diff(seen) >= -tolerance))


def before_absorption(M: CadlagPath) -> tuple[CadlagPath, float]:
    """``M`` without its jump to ``-1`` and stopped there, with the absorption time of ``E(M)``

    Raises
    ------
    DomainException
        When a jump is below -1
    """
    one_plus = 1 + M.jump_sizes
    absorbing = np.abs(one_plus) < ABSORPTION_TOLERANCE
    if np.any((one_plus < 0) & ~absorbing):
        raise DomainException("Criteria need jumps >= -1")

    if not np.any(absorbing):
        return M, math.inf

    index = int(np.flatnonzero(absorbing)[0])
    tau = float(M.jump_times[index])
    pre = replace(
        M,
        jump_times=M.jump_times[:index],
        jump_sizes=M.jump_sizes[:index],
        drift=tuple(term.stopped(tau) for term in M.drift),
        continuous=None if M.continuous is None else M.continuous.stopped(tau),
    )
    return pre, tau


Statistic = Literal["exp", "identity"]
Weight = Literal["none", "z"]
Offset = Literal["none", "remark"]


@dataclass(frozen=True)
class CriterionRecord:
    """Per-path values at each stopping rule, zero where ``sigma >= tau_0``"""

    values: FloatArray
    nonfinite: int
    diverged: bool = False


@dataclass(frozen=True)
class _CriterionTask:
    model: Any
    spec: CriterionSpec
    family: StoppingFamily
    seed: int
    statistic: Statistic
    weight: Weight
    offset: Offset

    def __call__(self, index: int) -> CriterionRecord:
        M = self.model.sample(path_seed(self.seed, index, PATH_STREAM)).path
        comp = self.model.compensator() if self.spec.needs_compensator or self.offset != "none" else None
        n_rules = len(self.family.rules)

        pre, tau = before_absorption(M)
        try:
            process = criterion_process(self.spec, pre, comp)
            if self.offset == "remark":
                process = linear_combination((1.0, process), (-1.0, offset_process(self.spec, pre, comp)))
        except CompensatorDivergesException:
            return CriterionRecord(np.full(n_rules, np.inf), nonfinite=n_rules, diverged=True)

        log_z = log_exponential(pre)
        targets = {"X": pre, "logZ": log_z, "N": process_N(pre), "QV": quadratic_variation(pre), "criterion": process}
        horizon = min(pre.horizon, pre.last_time())
        sigmas = self.family.evaluate(targets, horizon)

        alive = sigmas < tau
        exponents = np.zeros(n_rules)
        if np.any(alive):
            exponents[alive] = process.values(sigmas[alive])

        if self.statistic == "identity":
            values = np.where(alive, exponents, 0.0)
        else:
            with np.errstate(over="ignore"):
                values = np.where(alive, np.exp(np.minimum(exponents, 1e4)), 0.0)

        if self.weight == "z":
            weights = np.zeros(n_rules)
            if np.any(alive):
                weights[alive] = np.exp(np.minimum(log_z.values(sigmas[alive]), 1e4))
            with np.errstate(invalid="ignore"):
                values = np.where(alive, values * weights, 0.0)

        nonfinite = int(np.sum(~np.isfinite(values)))
        if self.statistic == "exp":
            nonfinite = max(nonfinite, int(np.sum(alive & (exponents > _EXP_LIMIT))))
        return CriterionRecord(values, nonfinite)


class RuleEstimate(BaseModel):
    rule: str
    mean: float
    se: float
    bootstrap_se: float
    nonfinite: int


class CriterionVerdict(BaseModel):
    """Monte Carlo verdict over a finite stopping family; ``sup_estimate`` is a lower bound"""

    criterion: str
    statistic: Statistic
    weight: Weight
    offset: Offset
    n_paths: int
    sup_estimate: float
    argmax_rule: str
    per_rule: list[RuleEstimate]
    bounded_flag: bool
    verdict: Literal["bounded", "unstable", "diverged"]
    nonfinite_count: int
    notes: list[str] = Field(default_factory=list)


def _bootstrap_se(values: FloatArray, seed: int, resamples: int) -> FloatArray:
    n = values.shape[0]
    if n < 2:
        return np.zeros(values.shape[1])

    rng = np.random.default_rng(path_seed(seed, 0, BOOTSTRAP_STREAM))
    means = np.empty((resamples, values.shape[1]))
    for k in range(resamples):
        means[k] = values[rng.integers(0, n, n)].mean(axis=0)
    return means.std(axis=0, ddof=1)


def _sup(per_rule: list[RuleEstimate], rules: list[str]) -> float:
    return max(est.mean for est in per_rule if est.rule in rules)


def evaluate_condition(
    model: Any,
    spec: CriterionSpec,
    family: StoppingFamily,
    n_paths: int,
    seed: int,
    *,
    statistic: Statistic = "exp",
    weight: Weight = "none",
    offset: Offset = "none",
    bootstrap: int = 200,
    runner: Optional[EnsembleRunner] = None,
    hooks: Optional[list[BaseHook]] = None,
    strict: bool = False,
) -> CriterionVerdict:
    """Estimate ``E_P[exp(criterion_sigma) 1{sigma < tau_0}]`` for every rule in ``family``

    Parameters
    ----------
    model : ModelSpec
        Martingale model with jumps >= -1
    spec : CriterionSpec
        Criterion process
    family : StoppingFamily
        Finite stand-in for the bounded stopping times
    n_paths : int
        Ensemble size
    seed : int
        Root seed. Paths use the same substreams as ``simulate``
    statistic : Literal["exp", "identity"] = "exp"
        ``identity`` averages the criterion itself instead of its exponential
    weight : Literal["none", "z"] = "none"
        ``z`` multiplies by ``E(M)_sigma``
    offset : Literal["none", "remark"] = "none"
        ``remark`` subtracts ``(1-a) N`` or ``(1-a) L`` from A_a or B_a
    bootstrap : int = 200
        Path-level bootstrap resamples
    runner : Optional[EnsembleRunner] = None
        Parallel runner, one worker by default
    strict : bool = False
        Raise on the first non-finite sample instead of counting it

    Raises
    ------
    NonFiniteSampleException
        In strict mode, when an exponent overflows

    Returns
    -------
    evaluate_condition : CriterionVerdict
        ``diverged`` when any sample overflowed or a compensator diverged,
        ``unstable`` when the supremum does not look settled, ``bounded`` otherwise
    """
    runner = runner or EnsembleRunner()
    task = _CriterionTask(model, spec, family, seed, statistic, weight, offset)
    context = ExperimentContext(
        model_kind=model.kind,
        preset_id=model.preset_id,
        operation_name="nk-check",
        summary=spec.label(),
    )
    records = runner.map(task, n_paths, context=context, hooks=hooks)

    labels = family.labels()
    values = np.vstack([record.values for record in records])
    nonfinite_by_rule = np.sum(~np.isfinite(values), axis=0)
    nonfinite = sum(record.nonfinite for record in records)
    diverged = any(record.diverged for record in records)

    if strict and nonfinite:
        raise NonFiniteSampleException(f"{nonfinite} non-finite samples for {spec.label()}")

    notes: list[str] = []
    if diverged:
        notes.append("compensator term diverges before the horizon on some paths")

    finite_values = np.where(np.isfinite(values), values, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        means = values.mean(axis=0)
        se = finite_values.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros(len(labels))
    boot = _bootstrap_se(finite_values, seed, bootstrap)

    per_rule = [
        RuleEstimate(
            rule=label,
            mean=float(means[k]),
            se=float(se[k]),
            bootstrap_se=float(boot[k]),
            nonfinite=int(nonfinite_by_rule[k]),
        )
        for k, label in enumerate(labels)
    ]

    best = int(np.argmax(means))
    sup_estimate = float(means[best])
    coarse = family.coarsened().labels()
    coarse_sup = _sup(per_rule, coarse)

    column = finite_values[:, best]
    total = float(np.abs(column).sum())
    dominated = total > 0 and float(np.abs(column).max()) > 0.5 * total

    bounded_flag = (
        nonfinite == 0
        and not diverged
        and math.isfinite(sup_estimate)
        and float(boot[best]) <= 0.25 * max(abs(sup_estimate), 1e-12)
        and coarse_sup >= 0.5 * sup_estimate
        and not dominated
    )
    if dominated:
        notes.append("one path carries more than half of the supremum")

    verdict: Literal["bounded", "unstable", "diverged"]
    if nonfinite or diverged:
        verdict = "diverged"
    elif bounded_flag:
        verdict = "bounded"
    else:
        verdict = "unstable"

    return CriterionVerdict(
        criterion=spec.label(),
        statistic=statistic,
        weight=weight,
        offset=offset,
        n_paths=n_paths,
        sup_estimate=sup_estimate,
        argmax_rule=labels[best],
        per_rule=per_rule,
        bounded_flag=bounded_flag,
        verdict=verdict,
        nonfinite_count=nonfinite,
        notes=notes,
    )


def exponential_mean(
    model: Any,
    horizon: float,
    n_paths: int,
    seed: int,
    runner: Optional[EnsembleRunner] = None,
) -> tuple[float, float]:
    """Ensemble mean and standard error of ``E(M)_T``"""
    runner = runner or EnsembleRunner()
    values = np.asarray(runner.map(_ExponentialAt(model, horizon, seed), n_paths))
    se = float(values.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(values.mean()), se


@dataclass(frozen=True)
class _ExponentialAt:
    model: Any
    horizon: float
    seed: int

    def __call__(self, index: int) -> float:
        M = self.model.sample(path_seed(self.seed, index, PATH_STREAM)).path
        return float(stoch_exp(M, signed=True).exponential.values(min(self.horizon, M.horizon))[0])
