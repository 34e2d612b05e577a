import time

import pytest

from jumplab import AsyncEnsembleRunner, EnsembleRunner, InvalidParametersException, LabSettings
from jumplab.exceptions import EnsembleTimeoutException

pytest_plugins = ("pytest_asyncio",)


def double(index: int) -> int:
    return 2 * index


def slow(index: int) -> int:
    time.sleep(0.2)
    return index


class TestAsyncEnsembleRunner:
    @pytest.mark.asyncio
    @pytest.mark.parametrize("threads, chunk_size", [(1, None), (3, None), (4, 1), (2, 100)])
    async def test_index_order(self, threads: int, chunk_size: int | None) -> None:
        runner = AsyncEnsembleRunner(threads=threads, chunk_size=chunk_size)
        assert await runner.map(double, 11) == [2 * i for i in range(11)]

    @pytest.mark.asyncio
    async def test_empty(self) -> None:
        assert await AsyncEnsembleRunner().map(double, 0) == []

    @pytest.mark.asyncio
    async def test_timeout(self) -> None:
        with pytest.raises(EnsembleTimeoutException):
            await AsyncEnsembleRunner(chunk_size=1).map(slow, 4, timeout=0.05)

    @pytest.mark.asyncio
    async def test_negative_paths(self) -> None:
        with pytest.raises(InvalidParametersException):
            await AsyncEnsembleRunner().map(double, -1)

    @pytest.mark.parametrize(
        "kwargs",
        [{"threads": 0}, {"executor": "fiber"}, {"chunk_size": 0}],
    )
    def test_invalid_arguments(self, kwargs: dict[str, object]) -> None:
        with pytest.raises(InvalidParametersException):
            AsyncEnsembleRunner(**kwargs)  # type: ignore[arg-type]


class TestEnsembleRunner:
    def test_map(self) -> None:
        runner = EnsembleRunner(threads=2)
        assert runner.threads == 2
        assert runner.map(double, 5) == [0, 2, 4, 6, 8]

    def test_process_pool(self) -> None:
        assert EnsembleRunner(threads=2, executor="process").map(double, 6) == [0, 2, 4, 6, 8, 10]

    def test_from_settings(self) -> None:
        runner = EnsembleRunner.from_settings(LabSettings(threads=3))
        assert runner.threads == 3
