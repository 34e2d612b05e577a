from __future__ import annotations

import asyncio
import math
from collections.abc import Callable
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Optional, cast

from rcheck import r

from .exceptions import EnsembleTimeoutException, InvalidParametersException
from .hooks.base import BaseHook
from .jumplab_types import ExecutorKind, ExperimentContext, ResultT, ResultType


def _run_chunk(fn: Callable[[int], ResultT], start: int, stop: int) -> list[ResultT]:
    return [fn(index) for index in range(start, stop)]


def _chunk_bounds(n_paths: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(start, min(start + chunk_size, n_paths)) for start in range(0, n_paths, chunk_size)]


class AsyncEnsembleRunner:
    def __init__(
        self,
        threads: int = 1,
        executor: ExecutorKind = "thread",
        chunk_size: Optional[int] = None,
        hooks: Optional[list[BaseHook]] = None,
    ) -> None:
        """Async ensemble runner

        Parameters
        ----------
        threads : int = 1
            Number of workers
        executor : Literal["thread", "process"] = "thread"
            Worker pool kind. Functions sent to a process pool must be picklable
        chunk_size : Optional[int] = None
            Paths per task. Defaults to spreading the run over four tasks per worker
        hooks: Optional[list[BaseHook]] = None
            List of hooks to run around every ensemble. See jumplab.hooks.opentelemetry for examples
        """
        if threads < 1:
            raise InvalidParametersException(f"threads must be >= 1, got {threads}")

        executor = cast(ExecutorKind, r.check_str("executor", executor))
        if executor not in ("thread", "process"):
            raise InvalidParametersException(f"Unknown executor: {executor}")

        if chunk_size is not None and chunk_size < 1:
            raise InvalidParametersException(f"chunk_size must be >= 1, got {chunk_size}")

        self.threads = threads
        self.executor: ExecutorKind = executor
        self.chunk_size = chunk_size
        self.default_hooks = hooks

    async def map(
        self,
        fn: Callable[[int], ResultT],
        n_paths: int,
        *,
        timeout: Optional[float] = None,
        context: Optional[ExperimentContext] = None,
        hooks: Optional[list[BaseHook]] = None,
    ) -> list[ResultT]:
        """Evaluate ``fn(i)`` for every path index ``i`` in ``range(n_paths)``

        Results come back in index order whatever the worker count, so
        functions that derive their randomness from the index give the same
        ensemble on one worker or many.

        Parameters
        ----------
        fn : Callable[[int], T]
            Per-path function
        n_paths : int
            Ensemble size
        timeout : Optional[float] = None
            Amount of time in seconds to wait for the ensemble. Default to no timeout
        context : Optional[ExperimentContext] = None
            Run metadata for telemetry purposes
        hooks: Optional[list[BaseHook]] = None
            Extra hooks for this run, after the runner defaults

        Raises
        ------
        EnsembleTimeoutException
            When the ensemble does not finish within ``timeout``

        Returns
        -------
        map : list[T]
            ``[fn(0), ..., fn(n_paths - 1)]``
        """
        if n_paths < 0:
            raise InvalidParametersException(f"n_paths must be >= 0, got {n_paths}")

        hooks = self._get_hooks(hooks)
        bounds = _chunk_bounds(n_paths, self._chunk_size(n_paths))
        _apply_pre_hooks(hooks, n_paths, context)

        loop = asyncio.get_running_loop()
        with self._pool() as pool:
            try:
                async with asyncio.timeout(timeout):
                    chunks = await asyncio.gather(
                        *(loop.run_in_executor(pool, _run_chunk, fn, start, stop) for start, stop in bounds)
                    )
            except TimeoutError as e:
                _apply_exception_hooks(hooks, e)
                pool.shutdown(wait=False, cancel_futures=True)
                raise EnsembleTimeoutException(f"Ensemble of {n_paths} paths exceeded {timeout}s") from e
            except Exception as e:
                _apply_exception_hooks(hooks, e)
                raise

        results = [item for chunk in chunks for item in chunk]
        _apply_post_hooks(hooks, "success", len(results), len(bounds))
        return results

    def _chunk_size(self, n_paths: int) -> int:
        if self.chunk_size is not None:
            return self.chunk_size
        return max(1, math.ceil(n_paths / (4 * self.threads)))

    def _pool(self) -> Executor:
        match self.executor:
            case "thread":
                return ThreadPoolExecutor(max_workers=self.threads)
            case "process":
                return ProcessPoolExecutor(max_workers=self.threads)

    def _get_hooks(self, hooks: Optional[list[BaseHook]]) -> list[BaseHook]:
        match self.default_hooks, hooks:
            case None, None:
                return []
            case None, _:
                return cast(list[BaseHook], hooks)
            case _, None:
                return cast(list[BaseHook], self.default_hooks)
            case _, _:
                return cast(list[BaseHook], self.default_hooks) + cast(list[BaseHook], hooks)

        raise ValueError("UNREACHABLE: Invalid hooks supplied")


def _apply_pre_hooks(
    hooks: Optional[list[BaseHook]],
    n_paths: int,
    context: Optional[ExperimentContext],
) -> None:
    if hooks is None:
        return

    for hook in hooks:
        hook.pre_run(n_paths, context)


def _apply_post_hooks(
    hooks: Optional[list[BaseHook]],
    result_type: ResultType,
    paths_completed: int,
    chunk_count: int = 1,
) -> None:
    if hooks is None:
        return

    for hook in hooks:
        hook.post_run(result_type, paths_completed, chunk_count)


def _apply_exception_hooks(
    hooks: Optional[list[BaseHook]],
    exception: Exception,
) -> None:
    if hooks is None:
        return

    for hook in hooks:
        hook.on_exception(exception)
