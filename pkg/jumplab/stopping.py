from __future__ import annotations

import math
import re
from collections.abc import Mapping
from typing import Annotated, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import InvalidParametersException
from .jumplab_types import Direction, FloatArray
from .path_core import CadlagPath, first_crossing


class DeterministicTime(BaseModel):
    kind: Literal["time"] = "time"
    t: float = Field(ge=0)

    model_config = ConfigDict(extra="forbid", frozen=True)

    def label(self) -> str:
        return f"t={self.t:g}"


class FirstCrossing(BaseModel):
    kind: Literal["crossing"] = "crossing"
    # X, Z, N, QV or criterion; Z is read through log Z
    target: str = "X"
    level: float
    direction: Direction = "abs"

    model_config = ConfigDict(extra="forbid", frozen=True)

    def label(self) -> str:
        match self.direction:
            case "abs":
                return f"cross:|{self.target}|>={self.level:g}"
            case "above":
                return f"cross:{self.target}>={self.level:g}"
            case "below":
                return f"cross:{self.target}<={self.level:g}"


StoppingRule = Annotated[DeterministicTime | FirstCrossing, Field(discriminator="kind")]


def stopping_time(rule: DeterministicTime | FirstCrossing, targets: Mapping[str, CadlagPath], horizon: float) -> float:
    """Time at which the rule fires, or the horizon when it never does"""
    if isinstance(rule, DeterministicTime):
        return min(rule.t, horizon)

    if rule.target == "Z":
        if rule.direction == "below" or rule.level <= 0:
            raise InvalidParametersException("Crossings of Z are upward through a positive level")
        path = targets["logZ"]
        level, direction = math.log(rule.level), "above"
    else:
        if rule.target not in targets:
            raise InvalidParametersException(f"Unknown crossing target: {rule.target}")
        path = targets[rule.target]
        level, direction = rule.level, rule.direction

    hit = first_crossing(path, level, direction)  # type: ignore[arg-type]
    return horizon if hit is None else min(hit, horizon)


class StoppingFamily(BaseModel):
    """Finite set of bounded stopping rules standing in for all bounded stopping times"""

    rules: list[StoppingRule] = Field(min_length=1)

    model_config = ConfigDict(extra="forbid")

    def labels(self) -> list[str]:
        return [rule.label() for rule in self.rules]

    def evaluate(self, targets: Mapping[str, CadlagPath], horizon: float) -> FloatArray:
        return np.array([stopping_time(rule, targets, horizon) for rule in self.rules])

    def coarsened(self) -> StoppingFamily:
        """Every other rule, used to judge stability of a supremum"""
        return StoppingFamily(rules=self.rules[::2])


_CROSSING = re.compile(r"^cross:(\|?)([A-Za-z_]+)(\|?)\s*(>=|<=)\s*(-?[0-9.eE+-]+)$")


def parse_rule(text: str) -> DeterministicTime | FirstCrossing:
    """Parse ``t=4``, ``cross:Z>=2``, ``cross:|X|>=3`` or ``cross:X<=-1``"""
    text = text.strip()

    if text.startswith("t="):
        try:
            return DeterministicTime(t=float(text[2:]))
        except ValueError as e:
            raise InvalidParametersException(f"Bad stopping rule: {text}") from e

    match = _CROSSING.match(text)
    if match is None:
        raise InvalidParametersException(f"Bad stopping rule: {text}")

    left_bar, target, right_bar, op, level = match.groups()
    if bool(left_bar) != bool(right_bar) or (left_bar and op != ">="):
        raise InvalidParametersException(f"Bad stopping rule: {text}")

    direction: Direction = "abs" if left_bar else ("above" if op == ">=" else "below")
    return FirstCrossing(target=target, level=float(level), direction=direction)


def parse_family(texts: list[str]) -> StoppingFamily:
    return StoppingFamily(rules=[parse_rule(text) for text in texts])


def default_family(
    horizon: float,
    criterion_levels: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0),
    z_levels: Optional[tuple[float, ...]] = None,
) -> StoppingFamily:
    """Geometric deterministic times, crossings of Z at powers of two and of the criterion itself"""
    times = [DeterministicTime(t=horizon * 2.0**-k) for k in range(6)]
    z_levels = z_levels or tuple(2.0**k for k in range(1, 6))
    z_rules = [FirstCrossing(target="Z", level=level, direction="above") for level in z_levels]
    criterion_rules = [
        FirstCrossing(target="criterion", level=level, direction="above") for level in criterion_levels
    ]
    return StoppingFamily(rules=[*times, *z_rules, *criterion_rules])
