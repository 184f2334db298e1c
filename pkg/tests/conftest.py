from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seaas.engine import SecurityEngine
from seaas.resources import full_device


class FakeClock:
    """Millisecond clock the tests can move by hand."""

    def __init__(self, start_ms: int = 1_000_000):
        self.now_ms = start_ms

    def __call__(self) -> int:
        return self.now_ms

    def advance(self, ms: int) -> None:
        self.now_ms += ms


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def engine(clock) -> SecurityEngine:
    e = SecurityEngine.fresh(clock=clock)
    e.register_device(full_device("dev1"))
    yield e
    e.close()


@pytest.fixture
def disk_engine(tmp_path, clock):
    e = SecurityEngine.fresh(data_dir=tmp_path / "data", clock=clock)
    e.register_device(full_device("dev1"))
    yield e
    e.close()
