"""Deterministic simulated PLC stations with an addressable item space.

A device holds a flat list of items (Siemens-style addresses kept as
opaque strings). FLOAT64 items may be dynamic: each tick they move toward
a setpoint with a first-order lag plus bounded seeded noise, clamped to
their engineering-unit range. Identical (config, seed, write history,
tick schedule) reproduces every item state bit-for-bit, including
timestamps, because the device runs on its own simulated clock.
"""

from __future__ import annotations

import math
import sys
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Scalar = Union[float, int, bool]


class PlcSimError(Exception):
    pass


class UnknownAddress(PlcSimError):
    pass


class NotWritable(PlcSimError):
    pass


class OutOfRange(PlcSimError):
    pass


class TypeMismatch(PlcSimError):
    pass


class DeviceOffline(PlcSimError):
    pass


class SchemaViolation(PlcSimError):
    """Config document rejected; the message carries the path to the offending field."""


class DataType(str, Enum):
    FLOAT64 = "FLOAT64"
    INT32 = "INT32"
    BOOL = "BOOL"


class Quality(str, Enum):
    GOOD = "GOOD"
    BAD = "BAD"
    UNCERTAIN = "UNCERTAIN"


class Lcg64:
    """64-bit linear congruential generator, x' = (a*x + c) mod 2**64.

    Constants are fixed (a = 6364136223846793005, c = 1442695040888963407)
    so seeded noise reproduces across platforms and languages. Uniform
    doubles take the top 53 bits of the state.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    _MASK = (1 << 64) - 1

    def __init__(self, seed: int) -> None:
        self.state = seed & self._MASK

    def next_u64(self) -> int:
        self.state = (self.state * self.MULTIPLIER + self.INCREMENT) & self._MASK
        return self.state

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_pm(self, delta: float) -> float:
        """Uniform double in [-delta, +delta]."""
        return (2.0 * self.uniform() - 1.0) * delta


@dataclass(frozen=True)
class ItemDefinition:
    """Static description of one addressable tag."""

    address: str
    data_type: DataType
    eu_low: float
    eu_high: float
    unit: str = ""
    writable: bool = False
    name: str = ""
    # dynamics (FLOAT64 only): first-order lag toward a setpoint
    dynamic: bool = False
    setpoint_address: Optional[str] = None
    setpoint: Optional[float] = None
    tau_ms: float = 5000.0
    noise_pct: float = 0.25
    initial: Optional[Scalar] = None


@dataclass
class ItemState:
    """Current value of one item with OPC-style quality and timestamp.

    The timestamp is set at the last value change; quality flips alone do
    not touch it.
    """

    value: Scalar
    quality: Quality
    timestamp: int


class DeviceModel:
    """One simulated PLC station owned by a single execution context."""

    def __init__(
        self,
        device_id: str,
        items: list[ItemDefinition],
        tick_interval_ms: int = 100,
        rng_seed: int = 1,
        epoch_ms: int = 0,
    ) -> None:
        if not items:
            raise SchemaViolation("item: at least one item required")
        self.device_id = device_id
        self.items: dict[str, ItemDefinition] = {}
        for item in items:
            if item.address in self.items:
                raise SchemaViolation(f"item[{item.address}].address: duplicate")
            self.items[item.address] = item
        self.tick_interval_ms = tick_interval_ms
        self.rng_seed = rng_seed
        self.now_ms = epoch_ms
        self.offline = False
        # requests from agent threads and the tick loop are serialized here
        self._lock = threading.RLock()
        self._rng = Lcg64(rng_seed)
        self._states: dict[str, ItemState] = {}
        for item in items:
            self._states[item.address] = ItemState(
                value=self._default_value(item), quality=Quality.GOOD, timestamp=epoch_ms
            )
        self._check_setpoint_refs()

    @staticmethod
    def _default_value(item: ItemDefinition) -> Scalar:
        if item.initial is not None:
            return item.initial
        if item.data_type is DataType.BOOL:
            return False
        if item.data_type is DataType.INT32:
            return int(item.eu_low)
        return float(item.eu_low)

    def _check_setpoint_refs(self) -> None:
        for item in self.items.values():
            if not item.dynamic:
                continue
            if item.data_type is not DataType.FLOAT64:
                raise SchemaViolation(f"item[{item.address}].dynamic: only FLOAT64 items may be dynamic")
            if item.setpoint_address is None and item.setpoint is None:
                raise SchemaViolation(
                    f"item[{item.address}]: dynamic item needs setpoint_address or setpoint"
                )
            if item.setpoint_address is not None:
                ref = self.items.get(item.setpoint_address)
                if ref is None:
                    raise SchemaViolation(
                        f"item[{item.address}].setpoint_address: no such item {item.setpoint_address!r}"
                    )
                if ref.data_type is not DataType.FLOAT64:
                    raise SchemaViolation(
                        f"item[{item.address}].setpoint_address: setpoint item must be FLOAT64"
                    )

    # -- simulation ------------------------------------------------------

    def tick(self, dt: int) -> dict[str, ItemState]:
        """Advance the simulated clock by dt milliseconds.

        Each dynamic item moves toward its setpoint by (1 - e^(-dt/tau)) of
        the remaining gap plus seeded noise, then clamps to its EU range.
        Returns copies of the states that changed; timestamps update only
        for changed items. A tick while offline is a no-op.
        """
        if dt <= 0:
            raise ValueError("dt must be > 0")
        with self._lock:
            if self.offline:
                return {}
            self.now_ms += dt
            changed: dict[str, ItemState] = {}
            for item in self.items.values():
                if not item.dynamic:
                    continue
                state = self._states[item.address]
                if item.setpoint_address is not None:
                    target = float(self._states[item.setpoint_address].value)
                else:
                    target = float(item.setpoint)  # type: ignore[arg-type]
                value = float(state.value)
                alpha = 1.0 - math.exp(-dt / item.tau_ms)
                delta = item.noise_pct / 100.0 * (item.eu_high - item.eu_low)
                noise = self._rng.uniform_pm(delta)
                new_value = value + (target - value) * alpha + noise
                new_value = min(max(new_value, item.eu_low), item.eu_high)
                if new_value != value:
                    state.value = new_value
                    state.timestamp = self.now_ms
                    changed[item.address] = replace(state)
            return changed

    # -- item access -----------------------------------------------------

    def read_item(self, address: str) -> ItemState:
        """Snapshot of the current state; never blocks on tick."""
        with self._lock:
            state = self._states.get(address)
            if state is None:
                raise UnknownAddress(address)
            return replace(state)

    def write_item(self, address: str, value: Scalar) -> None:
        """Replace an item's value, subject to writability, type, and range checks."""
        with self._lock:
            item = self.items.get(address)
            if item is None:
                raise UnknownAddress(address)
            if self.offline:
                raise DeviceOffline(self.device_id)
            if not item.writable:
                raise NotWritable(address)
            value = self._coerce(item, value)
            state = self._states[address]
            if value != state.value:
                state.value = value
                state.timestamp = self.now_ms
            state.quality = Quality.GOOD

    @staticmethod
    def _coerce(item: ItemDefinition, value: Scalar) -> Scalar:
        if item.data_type is DataType.BOOL:
            if not isinstance(value, bool):
                raise TypeMismatch(f"{item.address}: expected BOOL, got {type(value).__name__}")
            return value
        if isinstance(value, bool):
            raise TypeMismatch(f"{item.address}: expected {item.data_type.value}, got bool")
        if item.data_type is DataType.INT32:
            if not isinstance(value, int):
                raise TypeMismatch(f"{item.address}: expected INT32, got {type(value).__name__}")
        elif not isinstance(value, (int, float)):
            raise TypeMismatch(f"{item.address}: expected FLOAT64, got {type(value).__name__}")
        if not (item.eu_low <= value <= item.eu_high):
            raise OutOfRange(f"{item.address}: {value} outside [{item.eu_low}, {item.eu_high}]")
        return float(value) if item.data_type is DataType.FLOAT64 else value

    def set_clock(self, epoch_ms: int) -> None:
        """Rebase the simulated clock, e.g. to wall time at platform boot."""
        with self._lock:
            self.now_ms = epoch_ms
            for state in self._states.values():
                state.timestamp = epoch_ms

    def set_offline(self, offline: bool) -> None:
        """Toggle the station offline (all items BAD) or back online (GOOD)."""
        with self._lock:
            self.offline = offline
            quality = Quality.BAD if offline else Quality.GOOD
            for state in self._states.values():
                state.quality = quality

    def snapshot(self) -> dict[str, ItemState]:
        """Copies of every item state, in definition order."""
        with self._lock:
            return {address: replace(state) for address, state in self._states.items()}


class DeviceRunner:
    """Background tick loop owning one device; dt is the fixed tick interval."""

    def __init__(self, device: DeviceModel) -> None:
        self.device = device
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name=f"device-{device.device_id}", daemon=True
        )

    def start(self) -> "DeviceRunner":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def _run(self) -> None:
        interval = self.device.tick_interval_ms / 1000.0
        while not self._stop.wait(interval):
            self.device.tick(self.device.tick_interval_ms)


# -- configuration -------------------------------------------------------

_ITEM_KEYS = {
    "address", "name", "data_type", "eu_low", "eu_high", "unit", "writable",
    "dynamic", "setpoint_address", "setpoint", "tau_ms", "noise_pct", "initial",
}


def _require(table: dict, key: str, kinds: tuple, path: str) -> Any:
    if key not in table:
        raise SchemaViolation(f"{path}.{key}: required field missing")
    value = table[key]
    if not isinstance(value, kinds) or isinstance(value, bool) and bool not in kinds:
        names = "/".join(k.__name__ for k in kinds)
        raise SchemaViolation(f"{path}.{key}: expected {names}, got {type(value).__name__}")
    return value


def load_device_config(document: str) -> DeviceModel:
    """Build a DeviceModel from a TOML document with [device], [[item]], [dynamics].

    Raises SchemaViolation naming the offending field path.
    """
    try:
        doc = tomllib.loads(document)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaViolation(f"document: not valid TOML: {exc}") from exc

    device = doc.get("device")
    if not isinstance(device, dict):
        raise SchemaViolation("device: section missing")
    device_id = _require(device, "id", (str,), "device")
    if not device_id:
        raise SchemaViolation("device.id: must be non-empty")
    tick_interval = device.get("tick_interval_ms", 100)
    if not isinstance(tick_interval, int) or tick_interval <= 0:
        raise SchemaViolation("device.tick_interval_ms: must be a positive integer")
    rng_seed = device.get("rng_seed", 1)
    if not isinstance(rng_seed, int) or isinstance(rng_seed, bool):
        raise SchemaViolation("device.rng_seed: must be an integer")
    epoch_ms = device.get("epoch_ms", 0)
    if not isinstance(epoch_ms, int) or isinstance(epoch_ms, bool):
        raise SchemaViolation("device.epoch_ms: must be an integer")

    defaults = doc.get("dynamics", {})
    if not isinstance(defaults, dict):
        raise SchemaViolation("dynamics: must be a table")
    default_tau = defaults.get("tau_ms", 5000.0)
    default_noise = defaults.get("noise_pct", 0.25)

    raw_items = doc.get("item")
    if not isinstance(raw_items, list) or not raw_items:
        raise SchemaViolation("item: at least one [[item]] table required")

    items: list[ItemDefinition] = []
    for i, raw in enumerate(raw_items):
        path = f"item[{i}]"
        if not isinstance(raw, dict):
            raise SchemaViolation(f"{path}: must be a table")
        unknown = set(raw) - _ITEM_KEYS
        if unknown:
            raise SchemaViolation(f"{path}.{sorted(unknown)[0]}: unknown field")
        address = _require(raw, "address", (str,), path)
        if not address:
            raise SchemaViolation(f"{path}.address: must be non-empty")
        type_name = _require(raw, "data_type", (str,), path)
        try:
            data_type = DataType(type_name)
        except ValueError:
            raise SchemaViolation(f"{path}.data_type: unknown type {type_name!r}") from None
        if data_type is DataType.BOOL:
            eu_low, eu_high = 0.0, 1.0
        else:
            eu_low = float(_require(raw, "eu_low", (int, float), path))
            eu_high = float(_require(raw, "eu_high", (int, float), path))
        if eu_low >= eu_high:
            raise SchemaViolation(f"{path}.eu_low: must be < eu_high")
        tau_ms = float(raw.get("tau_ms", default_tau))
        if tau_ms <= 0:
            raise SchemaViolation(f"{path}.tau_ms: must be > 0")
        noise_pct = float(raw.get("noise_pct", default_noise))
        if noise_pct < 0:
            raise SchemaViolation(f"{path}.noise_pct: must be >= 0")
        item = ItemDefinition(
            address=address,
            data_type=data_type,
            eu_low=eu_low,
            eu_high=eu_high,
            unit=str(raw.get("unit", "")),
            writable=bool(raw.get("writable", False)),
            name=str(raw.get("name", "")),
            dynamic=bool(raw.get("dynamic", False)),
            setpoint_address=raw.get("setpoint_address"),
            setpoint=float(raw["setpoint"]) if "setpoint" in raw else None,
            tau_ms=tau_ms,
            noise_pct=noise_pct,
            initial=raw.get("initial"),
        )
        if item.initial is not None:
            try:
                DeviceModel._coerce(replace(item, writable=True), item.initial)
            except PlcSimError as exc:
                raise SchemaViolation(f"{path}.initial: {exc}") from None
        items.append(item)

    try:
        return DeviceModel(
            device_id=device_id,
            items=items,
            tick_interval_ms=tick_interval,
            rng_seed=rng_seed,
            epoch_ms=epoch_ms,
        )
    except SchemaViolation:
        raise
