"""Container/agent runtime tests: spawn, send, kill, FIFO, tickers, heartbeats."""

import threading
import time

import pytest

from agentscada import runtime
from agentscada.acl import AclMessage, AgentId, Performative
from agentscada.runtime import (
    Agent,
    CyclicBehaviour,
    DeliveryStatus,
    DuplicateAgentName,
    DuplicateContainerId,
    MainUnreachable,
    Mailbox,
    Platform,
    TickerBehaviour,
    UnknownAgent,
    UnknownAgentKind,
    join_container,
    register_agent_kind,
    start_main_container,
)
from agentscada.transport import AddressInUse


class ProbeAgent(Agent):
    """Collects everything it receives; optional setup delay and work time."""

    def __init__(self, args: dict) -> None:
        super().__init__()
        self.received: list[AclMessage] = []
        self.setup_delay_s = float(args.get("setup_delay_s", 0))
        self.work_s = float(args.get("work_s", 0))
        self.guard = 0
        self.max_guard = 0
        self.tick_count = 0
        self.ready = threading.Event()

    def setup(self) -> None:
        if self.setup_delay_s:
            time.sleep(self.setup_delay_s)
        self.add_behaviour(CyclicBehaviour(self._on_message))
        self.ready.set()

    def _enter(self) -> None:
        self.guard += 1
        self.max_guard = max(self.max_guard, self.guard)

    def _exit(self) -> None:
        self.guard -= 1

    def _on_message(self, msg: AclMessage) -> None:
        self._enter()
        if self.work_s:
            time.sleep(self.work_s)
        self.received.append(msg)
        self._exit()


class TickingProbe(ProbeAgent):
    def __init__(self, args: dict) -> None:
        super().__init__(args)
        self.period_ms = int(args.get("period_ms", 50))

    def setup(self) -> None:
        super().setup()
        self.add_behaviour(TickerBehaviour(self.period_ms, self._on_tick))

    def _on_tick(self) -> None:
        self._enter()
        self.tick_count += 1
        if self.work_s:
            time.sleep(self.work_s / 2)
        self._exit()


register_agent_kind("probe", ProbeAgent)
register_agent_kind("ticking-probe", TickingProbe)


@pytest.fixture
def main():
    container = start_main_container("SCADA", ("127.0.0.1", 0))
    yield container
    container.platform.stop()


def probe_msg(sender: Agent, receivers, content=None) -> AclMessage:
    return sender.make_message(Performative.INFORM, receivers, content or {"n": 1})


class TestMainContainer:
    def test_boot_resolves_df(self, main):
        assert main.platform_name == "SCADA"
        assert main.resolve("df@SCADA")
        assert main.resolve(AgentId("df", "SCADA"))

    def test_second_main_same_port_address_in_use(self, main):
        with pytest.raises(AddressInUse):
            start_main_container("SCADA2", ("127.0.0.1", main.listen_address[1]))

    def test_spawn_and_deliver(self, main):
        main.spawn_agent("H1", "probe", {})
        main.spawn_agent("H2", "probe", {})
        h1, h2 = main._residents["H1"], main._residents["H2"]
        h1.ready.wait(2)
        statuses = h1.send(probe_msg(h1, [h2.aid]))
        assert statuses == {"H2@SCADA": DeliveryStatus.DELIVERED}
        deadline = time.monotonic() + 2
        while len(h2.received) < 1 and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(h2.received) == 1

    def test_unknown_receiver(self, main):
        main.spawn_agent("H1", "probe", {})
        h1 = main._residents["H1"]
        h1.ready.wait(2)
        statuses = h1.send(probe_msg(h1, [AgentId("ghost", "SCADA")]))
        assert statuses == {"ghost@SCADA": DeliveryStatus.UNKNOWN_AGENT}

    def test_duplicate_agent_name(self, main):
        main.spawn_agent("H1", "probe", {})
        with pytest.raises(DuplicateAgentName):
            main.spawn_agent("H1", "probe", {})

    def test_unknown_agent_kind(self, main):
        with pytest.raises(UnknownAgentKind):
            main.spawn_agent("X", "no-such-kind", {})

    def test_fifo_per_sender_receiver(self, main):
        main.spawn_agent("H1", "probe", {})
        main.spawn_agent("R1", "probe", {})
        h1, r1 = main._residents["H1"], main._residents["R1"]
        for i in range(1000):
            h1.send(probe_msg(h1, [r1.aid], {"seq": i}))
        deadline = time.monotonic() + 5
        while len(r1.received) < 1000 and time.monotonic() < deadline:
            time.sleep(0.01)
        assert [m.content["seq"] for m in r1.received] == list(range(1000))

    def test_spawn_then_send_race_never_drops(self, main):
        main.spawn_agent("sender", "probe", {})
        sender = main._residents["sender"]
        sender.ready.wait(2)
        for i in range(1000):
            name = f"racer{i}"
            main.spawn_agent(name, "probe", {})
            target = main._residents[name]
            statuses = sender.send(probe_msg(sender, [target.aid]))
            assert statuses[f"{name}@SCADA"] is DeliveryStatus.DELIVERED
            assert target.ready.wait(2)
            deadline = time.monotonic() + 2
            while not target.received and time.monotonic() < deadline:
                time.sleep(0.001)
            assert len(target.received) == 1
            main.kill_agent(target.aid)

    def test_kill_then_send_unknown_agent(self, main):
        main.spawn_agent("H1", "probe", {})
        main.spawn_agent("H2", "probe", {})
        h1 = main._residents["H1"]
        h2_aid = main._residents["H2"].aid
        main.kill_agent(h2_aid)
        statuses = h1.send(probe_msg(h1, [h2_aid]))
        assert statuses["H2@SCADA"] is DeliveryStatus.UNKNOWN_AGENT

    def test_kill_unknown_agent(self, main):
        with pytest.raises(UnknownAgent):
            main.kill_agent("nobody@SCADA")

    def test_ps_roster(self, main):
        main.spawn_agent("H1", "probe", {})
        roster = main.agents()
        names = {entry["local_name"]: entry for entry in roster}
        assert "df" in names and "H1" in names
        assert names["H1"]["kind"] == "probe"
        assert names["H1"]["container"] == "main"
        assert names["H1"]["state"] == "running"


class TestSerialExecutionAndTickers:
    def test_behaviours_never_reenter(self, main):
        main.spawn_agent("busy", "ticking-probe", {"work_s": 0.002, "period_ms": 5})
        busy = main._residents["busy"]
        main.spawn_agent("s1", "probe", {})
        main.spawn_agent("s2", "probe", {})
        s1, s2 = main._residents["s1"], main._residents["s2"]
        busy.ready.wait(2)

        def flood(sender):
            for i in range(200):
                sender.send(probe_msg(sender, [busy.aid], {"i": i}))

        threads = [threading.Thread(target=flood, args=(s,)) for s in (s1, s2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        deadline = time.monotonic() + 10
        while len(busy.received) < 400 and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(busy.received) == 400
        assert busy.tick_count > 0
        assert busy.max_guard == 1  # no two behaviours of one agent ran concurrently

    def test_ticker_liveness(self, main):
        period_ms = 100
        main.spawn_agent("ticky", "ticking-probe", {"period_ms": period_ms})
        agent = main._residents["ticky"]
        agent.ready.wait(2)
        start_count = agent.tick_count
        started = time.monotonic()
        time.sleep(2.0)
        fired = agent.tick_count - start_count
        elapsed_ms = (time.monotonic() - started) * 1000
        assert fired >= int(elapsed_ms / period_ms) - 1


class TestMailbox:
    def test_overflow_drops_newest_and_counts(self):
        box = Mailbox(capacity=3)
        assert all(box.put(i) for i in range(3))
        assert not box.put(99)
        assert box.dropped == 1
        assert [box.get(0.01) for _ in range(3)] == [0, 1, 2]

    def test_urgent_bypasses_capacity(self):
        box = Mailbox(capacity=1)
        box.put(1)
        box.put_urgent("stop")
        assert box.get(0.01) == "stop"


class TestMultiContainer:
    def test_join_spawn_and_cross_container_messaging(self, main):
        main.spawn_agent("H1", "probe", {})
        h1 = main._residents["H1"]
        second = join_container(main.listen_address, "c2")
        try:
            second.spawn_agent("R2", "probe", {})
            r2 = second._residents["R2"]
            r2.ready.wait(2)
            # remote -> main
            statuses = r2.send(probe_msg(r2, [h1.aid], {"hello": "from R2"}))
            assert statuses["H1@SCADA"] is DeliveryStatus.DELIVERED
            deadline = time.monotonic() + 2
            while not h1.received and time.monotonic() < deadline:
                time.sleep(0.01)
            assert h1.received[0].content == {"hello": "from R2"}
            # main -> remote
            statuses = h1.send(probe_msg(h1, [r2.aid], {"hello": "from H1"}))
            assert statuses["R2@SCADA"] is DeliveryStatus.DELIVERED
            deadline = time.monotonic() + 2
            while not r2.received and time.monotonic() < deadline:
                time.sleep(0.01)
            assert r2.received[0].content == {"hello": "from H1"}
            # roster sees both
            names = {e["local_name"] for e in main.agents()}
            assert {"H1", "R2"} <= names
        finally:
            second.platform.stop()

    def test_cross_container_fifo(self, main):
        main.spawn_agent("H1", "probe", {})
        h1 = main._residents["H1"]
        second = join_container(main.listen_address, "c2")
        try:
            second.spawn_agent("R1", "probe", {})
            r1 = second._residents["R1"]
            for i in range(300):
                h1.send(probe_msg(h1, [r1.aid], {"seq": i}))
            deadline = time.monotonic() + 10
            while len(r1.received) < 300 and time.monotonic() < deadline:
                time.sleep(0.01)
            assert [m.content["seq"] for m in r1.received] == list(range(300))
        finally:
            second.platform.stop()

    def test_duplicate_container_id(self, main):
        second = join_container(main.listen_address, "c2")
        try:
            with pytest.raises(DuplicateContainerId):
                join_container(main.listen_address, "c2")
        finally:
            second.platform.stop()

    def test_duplicate_agent_name_across_containers(self, main):
        main.spawn_agent("H1", "probe", {})
        second = join_container(main.listen_address, "c2")
        try:
            with pytest.raises(DuplicateAgentName):
                second.spawn_agent("H1", "probe", {})
        finally:
            second.platform.stop()

    def test_main_unreachable(self):
        with pytest.raises(MainUnreachable):
            join_container(("127.0.0.1", 1), "c9")

    def test_dead_container_dropped_after_missed_heartbeats(self, main, monkeypatch):
        monkeypatch.setattr(runtime, "HEARTBEAT_INTERVAL_MS", 200)
        second = join_container(main.listen_address, "c2")
        second.spawn_agent("R2", "probe", {})
        try:
            assert any(e["local_name"] == "R2" for e in main.agents())
            # simulate a crash: heartbeats stop, no deregistration runs
            second._stopping.set()
            limit_s = 0.2 * runtime.HEARTBEAT_MISS_LIMIT
            deadline = time.monotonic() + limit_s + 2.0
            while time.monotonic() < deadline:
                if not any(e["local_name"] == "R2" for e in main.agents()):
                    break
                time.sleep(0.05)
            assert not any(e["local_name"] == "R2" for e in main.agents())
        finally:
            second.platform.stop()


class TestSetupRace:
    def test_message_sent_during_setup_is_processed_after(self, main):
        main.spawn_agent("slow", "probe", {"setup_delay_s": 0.3})
        main.spawn_agent("fast", "probe", {})
        slow, fast = main._residents["slow"], main._residents["fast"]
        statuses = fast.send(probe_msg(fast, [slow.aid]))
        assert statuses["slow@SCADA"] is DeliveryStatus.DELIVERED
        assert not slow.ready.is_set()  # still in setup, nothing processed yet
        assert slow.ready.wait(2)
        deadline = time.monotonic() + 2
        while not slow.received and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(slow.received) == 1


class TestAgentClock:
    def test_timestamps_non_decreasing(self, main):
        main.spawn_agent("H1", "probe", {})
        h1 = main._residents["H1"]
        stamps = [h1.now_ms() for _ in range(200)]
        assert stamps == sorted(stamps)
