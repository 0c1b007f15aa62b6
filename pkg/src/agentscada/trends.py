"""Bounded in-memory history of samples per item."""

from __future__ import annotations

from collections import deque

from .plcsim import Quality


class TrendSeries:
    """FIFO of (timestamp, value, quality); oldest evicted at capacity.

    Timestamps are strictly increasing: a stale sample is dropped and
    counted, never inserted.
    """

    def __init__(self, address: str, capacity: int = 3600) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.address = address
        self.capacity = capacity
        self.dropped_stale = 0
        self._samples: deque[tuple[int, object, Quality]] = deque(maxlen=capacity)

    def append(self, timestamp: int, value, quality: Quality) -> bool:
        """Append one sample; False (and a counter bump) if not newer than the last."""
        if self._samples and timestamp <= self._samples[-1][0]:
            self.dropped_stale += 1
            return False
        self._samples.append((timestamp, value, quality))
        return True

    def window(self, t1: int, t2: int) -> list[tuple[int, object, Quality]]:
        """Samples with t1 <= timestamp <= t2, oldest first."""
        return [s for s in self._samples if t1 <= s[0] <= t2]

    def latest(self):
        return self._samples[-1] if self._samples else None

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)
