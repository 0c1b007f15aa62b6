"""OPC client-layer tests: groups, snapshots, deadband oracle, offline, restart."""

import pytest

from agentscada.fixtures import read_fixture
from agentscada.opc import (
    ConnectFailed,
    DataChangeEvent,
    DeviceDirectory,
    DuplicateGroupName,
    OpcGroup,
    ServerNotFound,
    UnknownGroup,
    connect,
)
from agentscada.plcsim import (
    DataType,
    DeviceOffline,
    NotWritable,
    Quality,
    UnknownAddress,
    load_device_config,
)

SPEED = "s7:[@LOCALSERVER]db1,w0"
TENSION = "s7:[@LOCALSERVER]db1,w2"
SPEED_SP = "s7:[@LOCALSERVER]db1,w10"


class ManualClock:
    def __init__(self):
        self.now = 0.0

    def advance(self, ms):
        self.now += ms

    def __call__(self):
        return self.now


@pytest.fixture
def directory():
    d = DeviceDirectory()
    d.register(load_device_config(read_fixture("winder")))
    return d


@pytest.fixture
def clock():
    return ManualClock()


def winder_conn(directory, clock, prefix="JOPC1"):
    return connect("localhost", "OPC.SimaticNET.winder", prefix, directory, clock=clock)


class TestConnect:
    def test_connect_resolves_device(self, directory, clock):
        conn = winder_conn(directory, clock)
        assert conn.device.device_id == "winder"

    def test_unknown_server(self, directory, clock):
        with pytest.raises(ServerNotFound):
            connect("localhost", "OPC.SimaticNET.boiler", "JOPC1", directory, clock=clock)

    def test_one_connection_per_client_device_pair(self, directory, clock):
        conn = winder_conn(directory, clock)
        with pytest.raises(ConnectFailed):
            winder_conn(directory, clock)
        conn.close()
        winder_conn(directory, clock)  # slot released


class TestGroups:
    def test_group_invariants(self):
        with pytest.raises(ValueError):
            OpcGroup("g", update_rate=0)
        with pytest.raises(ValueError):
            OpcGroup("g", percent_deadband=150.0)
        with pytest.raises(ValueError):
            OpcGroup("g", items=["a", "a"])

    def test_snapshot_within_one_update_rate(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("group1", True, 400, 0.0, items=[SPEED, TENSION]))
        clock.advance(400)
        event = conn.poll_group("group1")
        assert isinstance(event, DataChangeEvent)
        assert {a for a, _ in event.changes} == {SPEED, TENSION}
        assert event.sequence_number == 1

    def test_duplicate_group_name(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("group1", items=[SPEED]))
        with pytest.raises(DuplicateGroupName):
            conn.add_group(OpcGroup("group1", items=[TENSION]))

    def test_unknown_member_address(self, directory, clock):
        conn = winder_conn(directory, clock)
        with pytest.raises(UnknownAddress):
            conn.add_group(OpcGroup("g", items=["db9,w9"]))

    def test_inactive_group_emits_nothing_until_activated(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", active=False, items=[SPEED]))
        clock.advance(4000)
        assert conn.poll_group("g") is None
        conn.set_group_active("g", True)
        clock.advance(400)
        assert conn.poll_group("g") is not None

    def test_unknown_group(self, directory, clock):
        conn = winder_conn(directory, clock)
        with pytest.raises(UnknownGroup):
            conn.poll_group("ghost")


class TestSyncReadWrite:
    def test_read_speed_good(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", items=[SPEED]))
        state = conn.sync_read_item("g", SPEED)
        assert state.quality is Quality.GOOD

    def test_read_after_write(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", items=[SPEED_SP]))
        conn.sync_write_item("g", SPEED_SP, 800.0)
        assert conn.sync_read_item("g", SPEED_SP).value == 800.0

    def test_offline_read_returns_bad_with_last_value(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", items=[SPEED]))
        last = conn.sync_read_item("g", SPEED).value
        conn.device.set_offline(True)
        state = conn.sync_read_item("g", SPEED)
        assert state.quality is Quality.BAD
        assert state.value == last

    def test_offline_write_errors_and_leaves_state(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", items=[SPEED_SP]))
        before = conn.sync_read_item("g", SPEED_SP).value
        conn.device.set_offline(True)
        with pytest.raises(DeviceOffline):
            conn.sync_write_item("g", SPEED_SP, 1200.0)
        assert conn.sync_read_item("g", SPEED_SP).value == before

    def test_write_not_writable(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", items=[TENSION]))
        with pytest.raises(NotWritable):
            conn.sync_write_item("g", TENSION, 100.0)


def brute_force_reports(trace, item_defs, percent_deadband):
    """Independent deadband filter: replays the recorded per-poll snapshots."""
    last = {}
    reports = []
    for snapshot in trace:
        changes = []
        for address, state in snapshot.items():
            item = item_defs[address]
            prev = last.get(address)
            if prev is None or state.quality is not prev.quality:
                hit = True
            elif item.data_type is DataType.BOOL:
                hit = state.value != prev.value
            else:
                threshold = percent_deadband / 100.0 * (item.eu_high - item.eu_low)
                hit = abs(float(state.value) - float(prev.value)) > threshold
            if hit:
                changes.append((address, state))
        if changes:
            for address, state in changes:
                last[address] = state
            reports.append(changes)
        else:
            reports.append(None)
    return reports


def record_trace(directory, clock, percent_deadband, samples, update_rate=400):
    """Drive device + poll loop; return (recorded snapshots, poll outputs)."""
    conn = winder_conn(directory, clock, prefix=f"T{percent_deadband}")
    addresses = [SPEED, TENSION, SPEED_SP]
    conn.add_group(OpcGroup("trace", True, update_rate, percent_deadband, items=addresses))
    device = conn.device
    trace, polls = [], []
    for i in range(samples):
        for _ in range(4):
            device.tick(100)
        if i == 250:
            device.set_offline(True)   # quality transition mid-trace
        if i == 260:
            device.set_offline(False)
        if i % 97 == 0:
            device.write_item(SPEED_SP, 400.0 + (i % 5) * 300.0)
        clock.advance(update_rate)
        trace.append({a: device.read_item(a) for a in addresses})
        polls.append(conn.poll_group("trace"))
    conn.close()
    return trace, polls


def assert_reports_equal(polls, expected):
    assert len(polls) == len(expected)
    for got, want in zip(polls, expected):
        if want is None:
            assert got is None
        else:
            assert got is not None
            assert [a for a, _ in got.changes] == [a for a, _ in want]
            for (ga, gs), (wa, ws) in zip(got.changes, want):
                assert gs.value == ws.value
                assert gs.quality is ws.quality
                assert gs.timestamp == ws.timestamp


class TestDeadbandOracle:
    @pytest.mark.parametrize("deadband", [0.0, 1.0, 5.0])
    def test_poll_reports_equal_brute_force(self, deadband):
        directory = DeviceDirectory()
        directory.register(load_device_config(read_fixture("winder")))
        clock = ManualClock()
        trace, polls = record_trace(directory, clock, deadband, samples=300)
        item_defs = directory.lookup("winder").items
        assert_reports_equal(polls, brute_force_reports(trace, item_defs, deadband))

    def test_zero_deadband_reports_any_epsilon(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 0.0, items=[SPEED_SP]))
        clock.advance(400)
        conn.poll_group("g")  # snapshot
        conn.device.write_item(SPEED_SP, 800.0 + 1e-9)
        clock.advance(400)
        event = conn.poll_group("g")
        assert event is not None and event.changes[0][0] == SPEED_SP

    def test_exact_boundary_change_not_reported(self, directory, clock):
        # EU range 0-2000, deadband 1.0% -> threshold 20.0; a change of
        # exactly 20.0 must NOT report (strict >).
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 1.0, items=[SPEED_SP]))
        conn.device.write_item(SPEED_SP, 100.0)
        clock.advance(400)
        assert conn.poll_group("g") is not None  # snapshot at 100.0
        conn.device.write_item(SPEED_SP, 120.0)
        clock.advance(400)
        assert conn.poll_group("g") is None
        conn.device.write_item(SPEED_SP, 120.0 + 0.0001)
        clock.advance(400)
        assert conn.poll_group("g") is not None

    def test_oscillation_within_deadband_never_reports(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 5.0, items=[SPEED_SP]))
        clock.advance(400)
        conn.poll_group("g")
        for i in range(20):
            conn.device.write_item(SPEED_SP, 800.0 + (10.0 if i % 2 else -10.0))
            clock.advance(400)
            assert conn.poll_group("g") is None


class TestEventDiscipline:
    def test_rate_bound_one_event_per_window(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 0.0, items=[SPEED]))
        clock.advance(400)
        assert conn.poll_group("g") is not None
        conn.device.tick(100)
        assert conn.poll_group("g") is None  # same window
        clock.advance(399)
        assert conn.poll_group("g") is None
        clock.advance(1)
        conn.device.tick(100)
        assert conn.poll_group("g") is not None

    def test_sequence_numbers_gapless(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 0.0, items=[SPEED]))
        seqs = []
        for _ in range(50):
            conn.device.tick(400)
            clock.advance(400)
            event = conn.poll_group("g")
            if event:
                seqs.append(event.sequence_number)
        assert seqs == list(range(1, len(seqs) + 1))

    def test_sequence_continues_across_device_restart(self, directory, clock):
        conn = winder_conn(directory, clock)
        conn.add_group(OpcGroup("g", True, 400, 0.0, items=[SPEED]))
        clock.advance(400)
        first = conn.poll_group("g")
        # "restart": a fresh device instance appears under the same server name
        directory.register(load_device_config(read_fixture("winder")))
        conn.device.tick(400)
        clock.advance(400)
        second = conn.poll_group("g")
        assert first.sequence_number == 1
        assert second is not None and second.sequence_number == 2
