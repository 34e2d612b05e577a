from __future__ import annotations

import asyncio
from collections.abc import Callable
from typing import Optional

from .async_ensemble import AsyncEnsembleRunner
from .config import LabSettings
from .hooks.base import BaseHook
from .jumplab_types import ExecutorKind, ExperimentContext, ResultT


class EnsembleRunner:
    def __init__(
        self,
        threads: int = 1,
        executor: ExecutorKind = "thread",
        chunk_size: Optional[int] = None,
        hooks: Optional[list[BaseHook]] = None,
    ) -> None:
        """Sync ensemble runner

        Parameters
        ----------
        threads : int = 1
            Number of workers
        executor : Literal["thread", "process"] = "thread"
            Worker pool kind
        chunk_size : Optional[int] = None
            Paths per task
        hooks: Optional[list[BaseHook]] = None
            List of hooks to run around every ensemble. See jumplab.hooks.opentelemetry for examples
        """
        self._async_runner = AsyncEnsembleRunner(threads, executor, chunk_size, hooks)

    @classmethod
    def from_settings(cls, settings: LabSettings, hooks: Optional[list[BaseHook]] = None) -> EnsembleRunner:
        return cls(settings.threads, settings.executor, hooks=hooks)

    @property
    def threads(self) -> int:
        return self._async_runner.threads

    def map(
        self,
        fn: Callable[[int], ResultT],
        n_paths: int,
        *,
        timeout: Optional[float] = None,
        context: Optional[ExperimentContext] = None,
        hooks: Optional[list[BaseHook]] = None,
    ) -> list[ResultT]:
        """Evaluate ``fn(i)`` for ``i`` in ``range(n_paths)``, in index order

        See AsyncEnsembleRunner.map
        """
        return asyncio.run(
            self._async_runner.map(fn, n_paths, timeout=timeout, context=context, hooks=hooks)
        )
