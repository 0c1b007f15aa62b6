"""Limit alarms with hysteresis and quality supervision.

A HIGH event opens when the value rises strictly above the high limit and
clears only once it falls strictly below (high limit - hysteresis);
symmetric for LOW. Limit rules evaluate only GOOD samples: while quality
is not GOOD a BAD_QUALITY event is open instead and the limit alarms hold
their state. At most one event per (address, kind) is open at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .plcsim import Quality


class AlarmKind(str, Enum):
    HIGH = "HIGH"
    LOW = "LOW"
    BAD_QUALITY = "BAD_QUALITY"


@dataclass(frozen=True)
class AlarmRule:
    address: str
    low_limit: Optional[float] = None
    high_limit: Optional[float] = None
    hysteresis: float = 0.0  # EU units

    def __post_init__(self) -> None:
        if self.low_limit is None and self.high_limit is None:
            raise ValueError(f"rule for {self.address}: need low_limit and/or high_limit")
        if self.hysteresis < 0:
            raise ValueError(f"rule for {self.address}: hysteresis must be >= 0")


@dataclass
class AlarmEvent:
    address: str
    kind: AlarmKind
    onset_ms: int
    onset_value: Optional[float] = None
    cleared_ms: Optional[int] = None
    acknowledged: bool = False

    @property
    def open(self) -> bool:
        return self.cleared_ms is None

    def to_payload(self) -> dict:
        return {
            "address": self.address,
            "kind": self.kind.value,
            "onset_ms": self.onset_ms,
            "onset_value": self.onset_value,
            "cleared_ms": self.cleared_ms,
            "acknowledged": self.acknowledged,
        }


AlarmState = dict[tuple[str, AlarmKind], AlarmEvent]

Sample = tuple[str, object, Quality, int]  # address, value, quality, timestamp ms


def evaluate_alarms(
    rules: list[AlarmRule],
    samples: Iterable[Sample],
    open_events: AlarmState,
) -> tuple[AlarmState, list[AlarmEvent], list[AlarmEvent]]:
    """Feed samples through the hysteresis automaton.

    Mutates and returns open_events plus the events raised and cleared by
    this batch. Samples for addresses without a rule are ignored.
    """
    by_address: dict[str, AlarmRule] = {rule.address: rule for rule in rules}
    raised: list[AlarmEvent] = []
    cleared: list[AlarmEvent] = []

    def clear(key: tuple[str, AlarmKind], ts: int) -> None:
        event = open_events.pop(key, None)
        if event is not None:
            event.cleared_ms = ts
            cleared.append(event)

    def raise_event(address: str, kind: AlarmKind, ts: int, value: Optional[float]) -> None:
        key = (address, kind)
        if key not in open_events:
            event = AlarmEvent(address=address, kind=kind, onset_ms=ts, onset_value=value)
            open_events[key] = event
            raised.append(event)

    for address, value, quality, ts in samples:
        rule = by_address.get(address)
        if rule is None:
            continue
        if quality is not Quality.GOOD:
            raise_event(address, AlarmKind.BAD_QUALITY, ts, None)
            continue  # limit alarms hold until the next GOOD sample
        clear((address, AlarmKind.BAD_QUALITY), ts)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            continue
        v = float(value)
        if rule.high_limit is not None:
            if (address, AlarmKind.HIGH) in open_events:
                if v < rule.high_limit - rule.hysteresis:
                    clear((address, AlarmKind.HIGH), ts)
            elif v > rule.high_limit:
                raise_event(address, AlarmKind.HIGH, ts, v)
        if rule.low_limit is not None:
            if (address, AlarmKind.LOW) in open_events:
                if v > rule.low_limit + rule.hysteresis:
                    clear((address, AlarmKind.LOW), ts)
            elif v < rule.low_limit:
                raise_event(address, AlarmKind.LOW, ts, v)
    return open_events, raised, cleared
