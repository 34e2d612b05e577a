from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal, Optional, TypeVar

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
TimeLike = float | FloatArray

Direction = Literal["above", "below", "abs"]
Ternary = Literal["yes", "no", "mixed"]
ResultType = Literal["success", "error"]
ExecutorKind = Literal["thread", "process"]

ResultT = TypeVar("ResultT")

JsonDict = dict[str, Any]


@dataclass
class ExperimentContext:
    model_kind: Optional[str] = None
    preset_id: Optional[str] = None
    operation_name: Optional[str] = None  # simulate | nk-check | follmer-check etc...
    summary: Optional[str] = None  # sample ex-6.2-1 | bounded B_a at a=2
