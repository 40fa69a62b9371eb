"""Stepwise continuation of eta, beta and the removal threshold."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass


@dataclass(frozen=True)
class ContinuationSchedule:
    """Piecewise-constant ramp.

    Iterations are 1-based. The value stays at ``initial`` for the first
    ``start + interval`` iterations and then grows by ``increment`` every
    ``interval`` iterations, never exceeding ``cap``.
    """

    initial: float
    increment: float = 0.0
    interval: int = 1
    cap: float | None = None
    start: int = 0

    def __post_init__(self):
        if self.increment < 0:
            raise ValueError("continuation increment must be >= 0")
        if self.interval < 1:
            raise ValueError("continuation interval must be >= 1")
        if self.start < 0:
            raise ValueError("continuation start must be >= 0")
        if self.cap is not None and self.cap < self.initial:
            raise ValueError("continuation cap is below the initial value")

    @property
    def final(self) -> float:
        if self.increment == 0:
            return self.initial
        return self.cap if self.cap is not None else float("inf")

    def value(self, k: int) -> float:
        steps = max(0, (k - 1 - self.start) // self.interval)
        v = self.initial + steps * self.increment
        if self.cap is not None:
            v = min(v, self.cap)
        return float(v)

    def completed_at(self) -> int:
        """First iteration at which the cap is reached (1 for constant schedules)."""
        if self.increment == 0 or self.cap is None or self.cap == self.initial:
            return 1
        steps = -(-(self.cap - self.initial - 1e-12) // self.increment)
        if not math.isfinite(steps):  # increment too small for the cap to be reached
            return sys.maxsize
        return int(self.start + steps * self.interval + 1)

    @classmethod
    def constant(cls, value: float) -> "ContinuationSchedule":
        return cls(initial=value)


@dataclass(frozen=True)
class ThresholdSchedule(ContinuationSchedule):
    def __post_init__(self):
        super().__post_init__()
        cap = self.final if self.cap is None else self.cap
        if not 0.0 <= self.initial <= cap < 1.0:
            raise ValueError("removal threshold schedule must satisfy 0 <= initial <= cap < 1")
