"""OPC-DA-style client access to simulated devices.

Groups of items with an update rate and percent deadband, synchronous
read/write, and polled data-change events. "Asynchronous" updates are a
client-side poll at the group's update rate: at each boundary, an item is
reported iff its value moved strictly more than deadband percent of the
EU range since it was last reported, or its quality changed. The poll
clock is injectable so traces replay deterministically in tests.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .plcsim import DataType, DeviceModel, ItemState, Quality, UnknownAddress

__all__ = [
    "OpcError", "ServerNotFound", "ConnectFailed", "DuplicateGroupName", "UnknownGroup",
    "OpcGroup", "DataChangeEvent", "DeviceDirectory", "OpcConnection", "connect",
]


class OpcError(Exception):
    pass


class ServerNotFound(OpcError):
    pass


class ConnectFailed(OpcError):
    pass


class DuplicateGroupName(OpcError):
    pass


class UnknownGroup(OpcError):
    pass


@dataclass
class OpcGroup:
    """Named collection of item references polled at one update rate."""

    name: str
    active: bool = True
    update_rate: int = 400
    percent_deadband: float = 0.0
    items: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.update_rate <= 0:
            raise ValueError("update_rate must be > 0")
        if not 0.0 <= self.percent_deadband <= 100.0:
            raise ValueError("percent_deadband must be in [0, 100]")
        if len(set(self.items)) != len(self.items):
            raise ValueError("item addresses must be unique within a group")


@dataclass
class DataChangeEvent:
    """Items that passed the deadband test (or changed quality) in one poll."""

    group_name: str
    changes: list[tuple[str, ItemState]]
    sequence_number: int


class DeviceDirectory:
    """Maps OPC server names to simulated devices.

    A device registers under its own id plus optional aliases (the
    platform registers "OPC.SimaticNET.<id>" to mirror vendor-style server
    names). Re-registering a name replaces the device, which is how a
    restarted station comes back under the same server name.
    """

    def __init__(self) -> None:
        self._devices: dict[str, DeviceModel] = {}
        self._connected: set[tuple[str, str]] = set()  # (client prefix, device id)
        self._lock = threading.Lock()

    def register(self, device: DeviceModel, aliases: tuple[str, ...] = ()) -> None:
        with self._lock:
            self._devices[device.device_id] = device
            self._devices[f"OPC.SimaticNET.{device.device_id}"] = device
            for alias in aliases:
                self._devices[alias] = device

    def lookup(self, server_name: str) -> DeviceModel:
        with self._lock:
            device = self._devices.get(server_name)
        if device is None:
            raise ServerNotFound(server_name)
        return device

    def device_ids(self) -> list[str]:
        with self._lock:
            return sorted({d.device_id for d in self._devices.values()})

    def _claim(self, prefix: str, device_id: str) -> None:
        with self._lock:
            key = (prefix, device_id)
            if key in self._connected:
                raise ConnectFailed(f"client {prefix!r} already connected to {device_id!r}")
            self._connected.add(key)

    def _release(self, prefix: str, device_id: str) -> None:
        with self._lock:
            self._connected.discard((prefix, device_id))


@dataclass
class _GroupState:
    group: OpcGroup
    last_reported: dict[str, ItemState] = field(default_factory=dict)
    sequence: int = 0
    next_due: Optional[float] = None  # clock ms; None until first poll/activation


def _now_ms() -> float:
    return time.monotonic() * 1000.0


class OpcConnection:
    """One client's connection to one device; owned by a single agent context.

    Group bookkeeping (last-reported cache, sequence numbers, poll
    schedule) lives client-side, so groups survive device restarts behind
    the same server name and sequence numbers continue without gaps.
    """

    def __init__(
        self,
        host: str,
        server_name: str,
        client_group_prefix: str,
        directory: DeviceDirectory,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        self.host = host
        self.server_name = server_name
        self.client_group_prefix = client_group_prefix
        self._directory = directory
        self._clock = clock or _now_ms
        self._groups: dict[str, _GroupState] = {}
        device = directory.lookup(server_name)  # fail fast if the device is absent
        self._device_id = device.device_id
        directory._claim(client_group_prefix, self._device_id)
        self._closed = False

    def close(self) -> None:
        """Release the (client, device) connection slot."""
        if not self._closed:
            self._closed = True
            self._directory._release(self.client_group_prefix, self._device_id)

    @property
    def device(self) -> DeviceModel:
        return self._directory.lookup(self.server_name)

    @property
    def groups(self) -> list[OpcGroup]:
        return [gs.group for gs in self._groups.values()]

    def add_group(self, group: OpcGroup) -> None:
        """Register a group; if active, the first poll reports a full snapshot."""
        if group.name in self._groups:
            raise DuplicateGroupName(group.name)
        device = self.device
        for address in group.items:
            if address not in device.items:
                raise UnknownAddress(address)
        state = _GroupState(group=group)
        if group.active:
            state.next_due = self._clock()
        self._groups[group.name] = state

    def set_group_active(self, group_name: str, active: bool) -> None:
        state = self._group(group_name)
        was_active = state.group.active
        state.group.active = active
        if active and not was_active:
            state.next_due = self._clock()

    def _group(self, group_name: str) -> _GroupState:
        state = self._groups.get(group_name)
        if state is None:
            raise UnknownGroup(group_name)
        return state

    def sync_read_item(self, group_name: str, address: str) -> ItemState:
        """Fresh read from the device, bypassing the deadband cache.

        An offline device serves quality BAD with the last-known value
        rather than raising.
        """
        state = self._group(group_name)
        if address not in state.group.items:
            raise UnknownAddress(address)
        return self.device.read_item(address)

    def sync_write_item(self, group_name: str, address: str, value) -> None:
        """Write through to the device; device-side errors propagate."""
        state = self._group(group_name)
        if address not in state.group.items:
            raise UnknownAddress(address)
        self.device.write_item(address, value)

    def poll_group(self, group_name: str) -> Optional[DataChangeEvent]:
        """Report items that moved past the deadband since last reported.

        Returns None when called before the next update-rate boundary or
        when nothing passed the filter. The deadband test is strict: a
        change of exactly deadband percent of the EU range is NOT reported.
        The last-reported cache advances only for reported items.
        """
        state = self._group(group_name)
        if not state.group.active:
            return None
        now = self._clock()
        if state.next_due is None or now < state.next_due:
            return None
        state.next_due += state.group.update_rate
        if state.next_due <= now:  # fell behind; realign without bursting
            state.next_due = now + state.group.update_rate

        device = self.device
        changes: list[tuple[str, ItemState]] = []
        for address in state.group.items:
            current = device.read_item(address)
            if self._passes_deadband(device, address, current, state):
                changes.append((address, current))
        if not changes:
            return None
        for address, current in changes:
            state.last_reported[address] = current
        state.sequence += 1
        return DataChangeEvent(
            group_name=group_name, changes=changes, sequence_number=state.sequence
        )

    def _passes_deadband(
        self, device: DeviceModel, address: str, current: ItemState, state: _GroupState
    ) -> bool:
        last = state.last_reported.get(address)
        if last is None:
            return True  # first report is the full snapshot
        if current.quality is not last.quality:
            return True
        item = device.items[address]
        if item.data_type is DataType.BOOL:
            return current.value != last.value
        threshold = state.group.percent_deadband / 100.0 * (item.eu_high - item.eu_low)
        return abs(float(current.value) - float(last.value)) > threshold


def connect(
    host: str,
    server_name: str,
    prefix: str,
    directory: DeviceDirectory,
    clock: Optional[Callable[[], float]] = None,
) -> OpcConnection:
    """Open a connection to the device registered under server_name.

    Raises ServerNotFound when the name is not in the directory.
    """
    return OpcConnection(host, server_name, prefix, directory, clock=clock)
