from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import InvalidParametersException
from .path_core import CadlagPath, ConstantDrift, ContinuousPart


class DriftSegment(BaseModel):
    start: float = Field(ge=0)
    end: float = Field(ge=0)
    rate: float

    model_config = ConfigDict(extra="forbid")


class PathRecord(BaseModel):
    """Serialisable form of a path

    Drift is stored as constant-rate segments. Nonlinear drift is written as the
    piecewise-linear interpolant on the path's critical times. The continuous
    martingale part keeps only its quadratic variation rate.
    """

    initial: float = 0.0
    horizon: float = Field(gt=0)
    jumps: list[tuple[float, float]] = Field(default_factory=list)
    drift: list[DriftSegment] = Field(default_factory=list)
    diffusion_qv_rate: float = Field(default=0.0, ge=0)
    explosion_time: Optional[float] = None
    absorption_time: Optional[float] = None

    model_config = ConfigDict(extra="forbid")

    @classmethod
    def from_path(cls, path: CadlagPath) -> PathRecord:
        return cls(
            initial=path.initial,
            horizon=path.horizon,
            jumps=[(float(t), float(s)) for t, s in zip(path.jump_times, path.jump_sizes)],
            drift=_drift_segments(path),
            diffusion_qv_rate=path.diffusion_qv_rate,
            explosion_time=path.explosion_time,
            absorption_time=path.absorption_time,
        )

    def to_path(self) -> CadlagPath:
        continuous = None
        if self.diffusion_qv_rate > 0:
            continuous = ContinuousPart(sigma2=self.diffusion_qv_rate)

        return CadlagPath(
            initial=self.initial,
            jump_times=np.array([t for t, _ in self.jumps], dtype=np.float64),
            jump_sizes=np.array([s for _, s in self.jumps], dtype=np.float64),
            horizon=self.horizon,
            drift=tuple(ConstantDrift(seg.start, seg.end, seg.rate) for seg in self.drift),
            continuous=continuous,
            explosion_time=self.explosion_time,
            absorption_time=self.absorption_time,
        )


def _drift_segments(path: CadlagPath) -> list[DriftSegment]:
    if all(isinstance(term, ConstantDrift) for term in path.drift):
        return [DriftSegment(start=s, end=e, rate=r) for s, e, r in path.drift_segments if e > s and r != 0]

    ts = path.critical_times()
    total = np.zeros_like(ts)
    for term in path.drift:
        total = total + term.integral(ts)

    rates = np.diff(total) / np.diff(ts)
    return [
        DriftSegment(start=float(s), end=float(e), rate=float(r))
        for s, e, r in zip(ts[:-1], ts[1:], rates)
        if r != 0
    ]


def write_records(paths: Iterable[CadlagPath], target: Path) -> int:
    """Write newline-delimited path records, returning the count"""
    count = 0
    with target.open("w") as f:
        for path in paths:
            f.write(PathRecord.from_path(path).model_dump_json())
            f.write("\n")
            count += 1
    return count


def read_records(source: Path) -> Iterator[CadlagPath]:
    """Paths from a newline-delimited file or a JSON list of records

    Raises
    ------
    InvalidParametersException
        When a record fails validation
    """
    text = source.read_text()
    stripped = text.lstrip()
    if stripped.startswith("["):
        rows = json.loads(stripped)
    else:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]

    for number, row in enumerate(rows, start=1):
        try:
            yield PathRecord.model_validate(row).to_path()
        except ValidationError as e:
            raise InvalidParametersException(f"Bad path record {number} in {source}: {e}") from e
