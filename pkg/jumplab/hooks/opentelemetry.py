from datetime import datetime
from typing import TYPE_CHECKING, Any, Optional

from typing_extensions import override

from jumplab.jumplab_types import ExperimentContext, ResultType

from .base import BaseHook

if TYPE_CHECKING:
    from opentelemetry.trace import Span


def _get_attributes(
    n_paths: int,
    context: Optional[ExperimentContext] = None,
) -> dict[str, Any]:
    attributes: dict[str, Any] = {"jumplab.ensemble.paths_requested": n_paths}

    if context is None:
        return attributes

    if context.model_kind is not None:
        attributes["jumplab.model.kind"] = context.model_kind

    if context.preset_id is not None:
        attributes["jumplab.model.preset"] = context.preset_id

    if context.operation_name is not None:
        attributes["jumplab.operation.name"] = context.operation_name

    if context.summary is not None:
        attributes["jumplab.operation.summary"] = context.summary

    return attributes


def _get_result_attributes(
    result_type: ResultType,
    paths_completed: int,
    chunk_count: int = 1,
) -> dict[str, Any]:
    return {
        "jumplab.ensemble.result": result_type,
        "jumplab.ensemble.paths_completed": paths_completed,
        "jumplab.ensemble.chunk_count": chunk_count,
    }


class RunTimingHook(BaseHook):
    def __init__(self) -> None:
        from opentelemetry.metrics import get_meter_provider

        self.meter = get_meter_provider().get_meter("jumplab")
        self.histogram = self.meter.create_histogram(
            name="ensemble_run_duration",
            description="Duration of ensemble runs",
            unit="s",
        )
        self.start_time: datetime | None = None
        self.attributes: dict[str, Any] = {}

    @override
    def pre_run(
        self,
        n_paths: int,
        context: Optional[ExperimentContext] = None,
    ) -> None:
        self.start_time = datetime.now()
        self.attributes = _get_attributes(n_paths, context)

    @override
    def post_run(
        self,
        result_type: ResultType,
        paths_completed: int,
        chunk_count: int = 1,
    ) -> None:
        assert self.start_time is not None, "start_time should not be None"

        self.attributes.update(_get_result_attributes(result_type, paths_completed, chunk_count))
        self.histogram.record(
            (datetime.now() - self.start_time).total_seconds(),
            self.attributes,
        )


class PathsCounterHook(BaseHook):
    def __init__(self) -> None:
        from opentelemetry.metrics import get_meter_provider

        self.meter = get_meter_provider().get_meter("jumplab")
        self.counter = self.meter.create_counter(
            name="ensemble_paths_total",
            description="Total number of simulated paths",
        )
        self.attributes: dict[str, Any] = {}

    @override
    def pre_run(
        self,
        n_paths: int,
        context: Optional[ExperimentContext] = None,
    ) -> None:
        self.attributes = _get_attributes(n_paths, context)

    @override
    def post_run(
        self,
        result_type: ResultType,
        paths_completed: int,
        chunk_count: int = 1,
    ) -> None:
        self.attributes.update(_get_result_attributes(result_type, paths_completed, chunk_count))
        self.counter.add(paths_completed, self.attributes)


class RunFailureHook(BaseHook):
    def __init__(self) -> None:
        from opentelemetry.metrics import get_meter_provider

        self.meter = get_meter_provider().get_meter("jumplab")
        self.counter = self.meter.create_counter(
            name="ensemble_runs_failure",
            description="Total number of failed ensemble runs",
        )
        self.attributes: dict[str, Any] = {}

    @override
    def pre_run(
        self,
        n_paths: int,
        context: Optional[ExperimentContext] = None,
    ) -> None:
        self.attributes = _get_attributes(n_paths, context)

    @override
    def post_run(
        self,
        result_type: ResultType,
        paths_completed: int,
        chunk_count: int = 1,
    ) -> None:
        if result_type != "error":
            return

        self.attributes.update(_get_result_attributes(result_type, paths_completed, chunk_count))
        self.counter.add(1, self.attributes)

    @override
    def on_exception(self, exception: Exception) -> None:
        self.counter.add(1, {**self.attributes, "error.type": type(exception).__name__})


class SpanHook(BaseHook):
    def __init__(self) -> None:
        from opentelemetry import trace

        self.span: Span | None = None
        self.tracer = trace.get_tracer("jumplab.ensemble")

    @override
    def pre_run(
        self,
        n_paths: int,
        context: Optional[ExperimentContext] = None,
    ) -> None:
        name = "ensemble"
        if context is not None and context.operation_name is not None:
            name = f"ensemble {context.operation_name}"

        self.span = self.tracer.start_span(name)
        self._set_span_attributes(_get_attributes(n_paths, context))

    @override
    def post_run(
        self,
        result_type: ResultType,
        paths_completed: int,
        chunk_count: int = 1,
    ) -> None:
        assert self.span is not None, "span should not be None"

        self._set_span_attributes(_get_result_attributes(result_type, paths_completed, chunk_count))
        self.span.end()

    @override
    def on_exception(self, exception: Exception) -> None:
        assert self.span is not None, "span should not be None"

        self.span.set_attribute("error.type", type(exception).__name__)
        self.span.record_exception(exception)
        self.span.end()

    def _set_span_attributes(self, attributes: dict[str, Any]) -> None:
        assert self.span is not None, "span should not be None"

        for key, value in attributes.items():
            self.span.set_attribute(key, value)


def record_warning(message: str, **attributes: Any) -> None:
    """Attach a warning event to the current span, if any"""
    from opentelemetry import trace

    span = trace.get_current_span()
    span.add_event("jumplab.warning", {"message": message, **attributes})
