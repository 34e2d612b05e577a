import json
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

from opentelemetry import trace
from opentelemetry.sdk.trace import ReadableSpan, TracerProvider
from opentelemetry.sdk.trace.export import SimpleSpanProcessor
from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter

trace_provider = TracerProvider()
trace.set_tracer_provider(trace_provider)


def dict_is_subset(test_dict: dict[str, Any], subset_dict: dict[str, Any]) -> bool:
    for key, value in subset_dict.items():
        if key not in test_dict:
            print("Key not found", key, value)
            return False

        test_value = test_dict[key]
        if isinstance(value, dict) and isinstance(test_value, dict):
            if not dict_is_subset(test_value, value):
                print("Dict not subset", key)
                return False
        elif test_value != value:
            print("Value not equal", key, test_value, value)
            return False

    return True


@contextmanager
def collect_spans() -> Iterator[list[ReadableSpan]]:
    span_exporter = InMemorySpanExporter()
    trace_provider.add_span_processor(SimpleSpanProcessor(span_exporter))

    spans: list[ReadableSpan] = []
    yield spans

    spans.extend(span_exporter.get_finished_spans())
    span_exporter.shutdown()


@contextmanager
def assert_span(expected_span: dict[str, Any]) -> Iterator[None]:
    with collect_spans() as spans:
        yield

    assert len(spans) == 1
    print(spans[0].to_json())
    assert dict_is_subset(json.loads(spans[0].to_json()), expected_span)
