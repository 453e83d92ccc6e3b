"""Monotonic nanosecond clocks: real (wall) and virtual (simulated).

All timing in the harness goes through this interface so scenario runs can be
replayed deterministically: the virtual clock advances instantly to whatever
time is slept to, which makes simulated latencies exact and runs reproducible
bit for bit.
"""

from __future__ import annotations

import time
from typing import Protocol, runtime_checkable


@runtime_checkable
class Clock(Protocol):
    def now(self) -> int: ...

    def sleep_until(self, t_ns: int) -> None: ...


class RealClock:
    """System monotonic clock; sleep_until blocks the calling thread."""

    def now(self) -> int:
        return time.monotonic_ns()

    def sleep_until(self, t_ns: int) -> None:
        delta = t_ns - self.now()
        if delta > 0:
            time.sleep(delta / 1e9)


class VirtualClock:
    """Simulated clock: time moves only when slept, never backwards."""

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)

    def now(self) -> int:
        return self._now

    def sleep_until(self, t_ns: int) -> None:
        if t_ns > self._now:
            self._now = int(t_ns)

    def advance(self, delta_ns: int) -> int:
        self.sleep_until(self._now + int(delta_ns))
        return self._now


def make_clock(kind: str) -> Clock:
    if kind == "real":
        return RealClock()
    if kind == "virtual":
        return VirtualClock()
    raise ValueError(f"unknown clock kind {kind!r}")
