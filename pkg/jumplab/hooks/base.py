from typing import Optional

from jumplab.jumplab_types import ExperimentContext, ResultType


class BaseHook:
    def pre_run(
        self,
        n_paths: int,
        context: Optional[ExperimentContext] = None,
    ) -> None: ...

    def post_run(
        self,
        result_type: ResultType,
        paths_completed: int,
        chunk_count: int = 1,
    ) -> None: ...

    def on_exception(self, exception: Exception) -> None: ...
