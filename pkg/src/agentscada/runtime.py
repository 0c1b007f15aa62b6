"""Agent containers, behaviours, and message routing.

One platform has exactly one main container; further containers join it
over TCP and host agents remotely. Each agent runs on its own thread with
a bounded mailbox: its behaviours never execute concurrently with each
other, while distinct agents run fully in parallel. The main container
owns the authoritative name registry (local names are unique platform
wide) and the route table; joined containers report liveness through
heartbeats and are dropped, together with their agents, after three
missed beats.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .acl import AclMessage, AgentId, Performative
from .opc import DeviceDirectory
from .transport import (
    AddressInUse,
    FrameClient,
    FrameServer,
    PeerUnreachable,
    TransportError,
)

logger = logging.getLogger(__name__)

HEARTBEAT_INTERVAL_MS = 2000
HEARTBEAT_MISS_LIMIT = 3
DEFAULT_MAILBOX_CAPACITY = 10_000

MGMT_ONTOLOGY = "platform-mgmt"

__all__ = [
    "AddressInUse", "MainUnreachable", "DuplicateContainerId", "DuplicateAgentName",
    "UnknownAgentKind", "UnknownAgent", "DeliveryStatus", "TickerBehaviour",
    "CyclicBehaviour", "Agent", "Container", "Platform", "register_agent_kind",
    "start_main_container", "join_container",
    "HEARTBEAT_INTERVAL_MS", "HEARTBEAT_MISS_LIMIT",
]


class PlatformError(Exception):
    pass


class MainUnreachable(PlatformError):
    pass


class DuplicateContainerId(PlatformError):
    pass


class DuplicateAgentName(PlatformError):
    pass


class UnknownAgentKind(PlatformError):
    pass


class UnknownAgent(PlatformError):
    pass


class DeliveryStatus(str, Enum):
    DELIVERED = "DELIVERED"
    UNKNOWN_AGENT = "UNKNOWN_AGENT"
    UNREACHABLE = "UNREACHABLE"


# -- behaviours ------------------------------------------------------------

class TickerBehaviour:
    """Fires at most once per period, scheduled on the agent's own thread."""

    def __init__(self, period_ms: int, on_tick: Callable[[], None]) -> None:
        if period_ms <= 0:
            raise ValueError("period_ms must be > 0")
        self.period_ms = period_ms
        self.on_tick = on_tick
        self.next_due: Optional[float] = None  # monotonic ms, set on first pass

    def _fire_if_due(self, now_ms: float) -> None:
        if self.next_due is None:
            self.next_due = now_ms + self.period_ms
            return
        if now_ms < self.next_due:
            return
        self.next_due += self.period_ms
        if self.next_due <= now_ms:  # behind schedule; realign, never burst
            self.next_due = now_ms + self.period_ms
        self.on_tick()


class CyclicBehaviour:
    """Runs once per delivered message."""

    def __init__(self, on_message: Callable[[AclMessage], None]) -> None:
        self.on_message = on_message


class _Stop:
    pass


_STOP = _Stop()


class Mailbox:
    """Bounded FIFO; overflow drops the newest message and counts it."""

    def __init__(self, capacity: int = DEFAULT_MAILBOX_CAPACITY) -> None:
        self.capacity = capacity
        self.dropped = 0
        self._items: deque = deque()
        self._cond = threading.Condition()

    def put(self, item) -> bool:
        with self._cond:
            if len(self._items) >= self.capacity:
                self.dropped += 1
                return False
            self._items.append(item)
            self._cond.notify()
            return True

    def put_urgent(self, item) -> None:
        """Head insert that ignores capacity; used for the stop sentinel."""
        with self._cond:
            self._items.appendleft(item)
            self._cond.notify()

    def push_back_front(self, items: list) -> None:
        """Re-insert buffered messages at the front, preserving their order."""
        with self._cond:
            for item in reversed(items):
                self._items.appendleft(item)
            self._cond.notify()

    def get(self, timeout: float) -> Optional[object]:
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            if not self._items:
                return None
            return self._items.popleft()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


def _monotonic_ms() -> float:
    return time.monotonic() * 1000.0


# -- agents ----------------------------------------------------------------

class Agent:
    """Base class for platform agents.

    Subclasses override setup() to register behaviours; messages begin
    queueing the moment the agent is spawned and are processed once
    setup() returns. All behaviours run on the agent's single thread.
    """

    def __init__(self) -> None:
        self.aid: AgentId = None  # type: ignore[assignment]
        self.container: "Container" = None  # type: ignore[assignment]
        self.kind = ""
        self._mailbox = Mailbox()
        self._tickers: list[TickerBehaviour] = []
        self._cyclics: list[CyclicBehaviour] = []
        self._alive = False
        self._setup_done = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._last_ts = 0
        self._reply_counter = itertools.count(1)

    # -- lifecycle ---------------------------------------------------------

    def setup(self) -> None:
        """Override: register behaviours, announce services."""

    def teardown(self) -> None:
        """Override: release connections and other resources."""

    def _bind(self, container: "Container", aid: AgentId, kind: str) -> None:
        self.container = container
        self.aid = aid
        self.kind = kind

    def _start(self) -> None:
        self._alive = True
        self._thread = threading.Thread(target=self._run, name=f"agent-{self.aid}", daemon=True)
        self._thread.start()

    def _stop(self, join: bool = True) -> None:
        self._alive = False
        self._mailbox.put_urgent(_STOP)
        if join and self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=5)

    def _run(self) -> None:
        try:
            self.setup()
        except Exception:
            logger.exception("FAILURE: setup of %s failed, terminating agent", self.aid)
            self._alive = False
            self._setup_done.set()
            self.container._agent_failed(self)
            return
        self._setup_done.set()
        try:
            while self._alive:
                timeout_ms = 50.0
                now = _monotonic_ms()
                for ticker in self._tickers:
                    if ticker.next_due is not None:
                        timeout_ms = min(timeout_ms, max(ticker.next_due - now, 0.0))
                item = self._mailbox.get(timeout=timeout_ms / 1000.0)
                if isinstance(item, _Stop):
                    break
                if item is not None:
                    for behaviour in list(self._cyclics):
                        behaviour.on_message(item)  # type: ignore[arg-type]
                now = _monotonic_ms()
                for ticker in list(self._tickers):
                    ticker._fire_if_due(now)
        except Exception:
            logger.exception("agent %s crashed", self.aid)
        finally:
            try:
                self.teardown()
            except Exception:
                logger.exception("teardown of %s failed", self.aid)

    # -- behaviours ----------------------------------------------------------

    def add_behaviour(self, behaviour) -> None:
        if isinstance(behaviour, TickerBehaviour):
            self._tickers.append(behaviour)
        elif isinstance(behaviour, CyclicBehaviour):
            self._cyclics.append(behaviour)
        else:
            raise TypeError(f"not a behaviour: {behaviour!r}")

    # -- messaging -----------------------------------------------------------

    def now_ms(self) -> int:
        """Wall-clock ms, non-decreasing across this agent's messages."""
        now = int(time.time() * 1000)
        self._last_ts = max(self._last_ts, now)
        return self._last_ts

    def next_reply_id(self) -> str:
        return f"{self.aid.local_name}-rw{next(self._reply_counter)}"

    def make_message(
        self,
        performative: Performative,
        receivers: list[AgentId],
        content: dict,
        *,
        ontology: str = "",
        conversation_id: str = "",
        reply_with: Optional[str] = None,
        in_reply_to: Optional[str] = None,
    ) -> AclMessage:
        return AclMessage(
            performative=performative,
            sender=self.aid,
            receivers=receivers,
            content=content,
            ontology=ontology,
            conversation_id=conversation_id,
            reply_with=reply_with,
            in_reply_to=in_reply_to,
            timestamp=self.now_ms(),
        )

    def send(self, msg: AclMessage) -> dict[str, DeliveryStatus]:
        """Asynchronous send; per-receiver delivery statuses."""
        return self.container.send(msg)

    def reply_to(
        self, original: AclMessage, performative: Performative, content: dict
    ) -> dict[str, DeliveryStatus]:
        return self.send(
            self.make_message(
                performative,
                [original.sender],
                content,
                ontology=original.ontology,
                conversation_id=original.conversation_id,
                in_reply_to=original.reply_with,
            )
        )

    def request_reply(self, msg: AclMessage, timeout_s: float = 5.0) -> Optional[AclMessage]:
        """Send a REQUEST and block this agent's thread until the reply.

        Messages arriving meanwhile are buffered and re-queued in order.
        Returns None on timeout. Only usable from the agent's own thread.
        """
        if msg.reply_with is None:
            msg.reply_with = self.next_reply_id()
        self.send(msg)
        deadline = time.monotonic() + timeout_s
        buffered: list = []
        reply: Optional[AclMessage] = None
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            item = self._mailbox.get(timeout=remaining)
            if item is None:
                continue
            if isinstance(item, _Stop):
                buffered.append(item)
                break
            if item.in_reply_to == msg.reply_with:
                reply = item
                break
            buffered.append(item)
        if buffered:
            self._mailbox.push_back_front(buffered)
        return reply


_KIND_REGISTRY: dict[str, Callable[[dict], Agent]] = {}


def register_agent_kind(kind: str, factory: Callable[[dict], Agent]) -> None:
    """Register a factory (args map -> Agent) under a launchable kind name."""
    _KIND_REGISTRY[kind] = factory


# -- platform / containers ---------------------------------------------------

class Platform:
    """Process-local platform environment.

    Holds the containers hosted in this process, the device directory, and
    the delivery tap used by the sniffer. A distributed platform is one
    Platform object per process, all joined to the same main container.
    """

    def __init__(self, name: str = "") -> None:
        self.name = name
        self.devices = DeviceDirectory()
        self.containers: list["Container"] = []
        self.delivered_count = 0
        self._tap: Optional[Callable[[AclMessage, AgentId], None]] = None
        self._tap_lock = threading.Lock()

    @property
    def main_container(self) -> Optional["Container"]:
        for container in self.containers:
            if container.is_main:
                return container
        return None

    def set_delivery_tap(self, tap: Optional[Callable[[AclMessage, AgentId], None]]) -> None:
        with self._tap_lock:
            self._tap = tap

    def _on_delivered(self, msg: AclMessage, receiver: AgentId) -> None:
        with self._tap_lock:
            self.delivered_count += 1
            tap = self._tap
        if tap is not None:
            try:
                tap(msg, receiver)
            except Exception:
                logger.exception("delivery tap failed")

    def stop(self) -> None:
        for container in list(self.containers):
            container.stop()


@dataclass
class _RouteEntry:
    container_id: str
    kind: str
    state: str = "running"


@dataclass
class _ContainerLink:
    container_id: str
    listen_address: tuple[str, int]
    last_seen: float = field(default_factory=time.monotonic)
    client: Optional[FrameClient] = None


class Container:
    """Hosts agents and routes their messages locally and across hosts."""

    def __init__(
        self,
        platform: Platform,
        container_id: str,
        is_main: bool,
        listen: tuple[str, int],
        main_address: Optional[tuple[str, int]] = None,
    ) -> None:
        self.platform = platform
        self.id = container_id
        self.is_main = is_main
        self._residents: dict[str, Agent] = {}
        self._lock = threading.RLock()
        self._stopping = threading.Event()
        self._server = FrameServer(listen[0], listen[1], self._handle_frame)
        self.listen_address = self._server.address

        # main-only state
        self._routes: dict[str, _RouteEntry] = {}
        self._links: dict[str, _ContainerLink] = {}
        self._reaper: Optional[threading.Thread] = None
        self.df_agent = None  # set by start_main_container

        # joined-container state
        self.main_address = main_address
        self._main_client: Optional[FrameClient] = None
        self._heartbeat: Optional[threading.Thread] = None

        platform.containers.append(self)

    # -- naming ----------------------------------------------------------

    @property
    def platform_name(self) -> str:
        return self.platform.name

    def _ctrl_aid(self) -> AgentId:
        return AgentId(f"ctrl.{self.id}", self.platform_name or "_")

    def _mgmt_message(self, content: dict) -> AclMessage:
        return AclMessage(
            performative=Performative.REQUEST,
            sender=self._ctrl_aid(),
            receivers=[AgentId("ctrl.main", self.platform_name or "_")],
            content=content,
            ontology=MGMT_ONTOLOGY,
            timestamp=int(time.time() * 1000),
        )

    # -- agent lifecycle ---------------------------------------------------

    def spawn_agent(self, local_name: str, kind: str, args: Optional[dict] = None) -> AgentId:
        """Create an agent; its mailbox is live before this returns.

        Raises DuplicateAgentName (platform-wide check at the main
        container) or UnknownAgentKind.
        """
        factory = _KIND_REGISTRY.get(kind)
        if factory is None:
            raise UnknownAgentKind(kind)
        self._register_name(local_name, kind)
        agent = factory(dict(args or {}))
        aid = AgentId(local_name, self.platform_name)
        agent._bind(self, aid, kind)
        with self._lock:
            self._residents[local_name] = agent
        agent._start()
        return aid

    def _register_name(self, local_name: str, kind: str) -> None:
        if self.is_main:
            with self._lock:
                if local_name in self._routes:
                    raise DuplicateAgentName(local_name)
                self._routes[local_name] = _RouteEntry(self.id, kind)
        else:
            response = self._request_main(
                {"action": "register-agent", "local_name": local_name,
                 "kind": kind, "container_id": self.id}
            )
            if response.content.get("status") != "ok":
                raise DuplicateAgentName(local_name)

    def kill_agent(self, aid: AgentId | str) -> None:
        """Stop a resident agent; its name and yellow-page entries vanish."""
        local_name = aid.local_name if isinstance(aid, AgentId) else str(aid).split("@")[0]
        with self._lock:
            agent = self._residents.get(local_name)
        if agent is None:
            raise UnknownAgent(local_name)
        agent._stop()
        with self._lock:
            self._residents.pop(local_name, None)
        self._deregister_name(local_name)

    def _agent_failed(self, agent: Agent) -> None:
        """Setup failure: withdraw the agent as if killed."""
        with self._lock:
            self._residents.pop(agent.aid.local_name, None)
        try:
            self._deregister_name(agent.aid.local_name)
        except PlatformError:
            pass

    def _deregister_name(self, local_name: str) -> None:
        if self.is_main:
            with self._lock:
                self._routes.pop(local_name, None)
            self._purge_df(local_name)
        else:
            try:
                self._request_main({"action": "deregister-agent", "local_name": local_name})
            except MainUnreachable:
                logger.warning("could not deregister %s: main unreachable", local_name)

    def _purge_df(self, local_name: str) -> None:
        if self.df_agent is not None:
            self.df_agent.registry.remove_provider(AgentId(local_name, self.platform_name))

    def resolve(self, aid: AgentId | str) -> bool:
        """True when the name routes to a live agent (main answers authoritatively)."""
        local_name = aid.local_name if isinstance(aid, AgentId) else str(aid).split("@")[0]
        with self._lock:
            if local_name in self._residents:
                return True
            if self.is_main:
                return local_name in self._routes
        response = self._request_main({"action": "resolve", "local_name": local_name})
        return response.content.get("found", False)

    def agents(self) -> list[dict]:
        """Platform-wide agent roster (main container only)."""
        if not self.is_main:
            response = self._request_main({"action": "ps"})
            return response.content["agents"]
        with self._lock:
            return [
                {"local_name": name, "kind": entry.kind,
                 "container": entry.container_id, "state": entry.state}
                for name, entry in sorted(self._routes.items())
            ]

    # -- sending -----------------------------------------------------------

    def send(self, msg: AclMessage) -> dict[str, DeliveryStatus]:
        """Deliver to each receiver; per-receiver status, FIFO per sender."""
        with self._lock:
            if msg.sender.local_name not in self._residents:
                raise UnknownAgent(f"sender {msg.sender} is not a live agent of this container")
        return self._route(msg)

    def _route(self, msg: AclMessage) -> dict[str, DeliveryStatus]:
        statuses: dict[str, DeliveryStatus] = {}
        remote: list[AgentId] = []
        for receiver in msg.receivers:
            if receiver.platform_name != self.platform_name:
                statuses[receiver.canonical] = DeliveryStatus.UNKNOWN_AGENT
                continue
            with self._lock:
                agent = self._residents.get(receiver.local_name)
            if agent is not None:
                statuses[receiver.canonical] = self._deliver_local(msg, agent)
            else:
                remote.append(receiver)
        if remote:
            if self.is_main:
                statuses.update(self._forward_from_main(msg, remote))
            else:
                statuses.update(self._forward_via_main(msg, remote))
        return statuses

    def _deliver_local(self, msg: AclMessage, agent: Agent) -> DeliveryStatus:
        agent._mailbox.put(msg)
        self.platform._on_delivered(msg, agent.aid)
        return DeliveryStatus.DELIVERED

    def _forward_from_main(
        self, msg: AclMessage, receivers: list[AgentId], exclude_container: str = ""
    ) -> dict[str, DeliveryStatus]:
        statuses: dict[str, DeliveryStatus] = {}
        by_container: dict[str, list[AgentId]] = {}
        with self._lock:
            for receiver in receivers:
                entry = self._routes.get(receiver.local_name)
                if entry is None or entry.container_id == self.id or entry.container_id == exclude_container:
                    statuses[receiver.canonical] = DeliveryStatus.UNKNOWN_AGENT
                else:
                    by_container.setdefault(entry.container_id, []).append(receiver)
        for container_id, targets in by_container.items():
            link = self._links.get(container_id)
            if link is None:
                for target in targets:
                    statuses[target.canonical] = DeliveryStatus.UNKNOWN_AGENT
                continue
            statuses.update(self._push_to_link(link, msg, targets))
        return statuses

    def _push_to_link(
        self, link: _ContainerLink, msg: AclMessage, targets: list[AgentId]
    ) -> dict[str, DeliveryStatus]:
        wrapper = self._mgmt_message(
            {"action": "deliver", "targets": [t.canonical for t in targets],
             "message": _msg_payload(msg)}
        )
        try:
            if link.client is None:
                link.client = FrameClient(*link.listen_address)
            response = link.client.request(wrapper)
            raw = response.content.get("statuses", {})
            return {t.canonical: DeliveryStatus(raw.get(t.canonical, "UNKNOWN_AGENT")) for t in targets}
        except (PeerUnreachable, TransportError, ValueError):
            return {t.canonical: DeliveryStatus.UNREACHABLE for t in targets}

    def _forward_via_main(
        self, msg: AclMessage, receivers: list[AgentId]
    ) -> dict[str, DeliveryStatus]:
        wrapper = self._mgmt_message(
            {"action": "deliver", "targets": [t.canonical for t in receivers],
             "message": _msg_payload(msg), "origin": self.id}
        )
        try:
            response = self._main_request(wrapper)
            raw = response.content.get("statuses", {})
            return {
                t.canonical: DeliveryStatus(raw.get(t.canonical, "UNKNOWN_AGENT"))
                for t in receivers
            }
        except (MainUnreachable, ValueError):
            return {t.canonical: DeliveryStatus.UNREACHABLE for t in receivers}

    # -- transport handlers ---------------------------------------------------

    def _handle_frame(self, msg: AclMessage) -> AclMessage:
        if msg.ontology != MGMT_ONTOLOGY:
            return self._mgmt_reply({"status": "error", "error": "unexpected ontology"})
        action = msg.content.get("action")
        if action == "deliver":
            return self._handle_deliver(msg)
        if not self.is_main:
            return self._mgmt_reply({"status": "error", "error": f"not main: {action}"})
        if action == "register-container":
            return self._handle_register_container(msg)
        if action == "register-agent":
            return self._handle_register_agent(msg)
        if action == "deregister-agent":
            self._handle_deregister_agent(msg)
            return self._mgmt_reply({"status": "ok"})
        if action == "heartbeat":
            return self._handle_heartbeat(msg)
        if action == "ps":
            return self._mgmt_reply({"status": "ok", "agents": self.agents()})
        if action == "resolve":
            with self._lock:
                found = msg.content.get("local_name") in self._routes
            return self._mgmt_reply({"status": "ok", "found": found})
        return self._mgmt_reply({"status": "error", "error": f"unknown action {action!r}"})

    def _mgmt_reply(self, content: dict) -> AclMessage:
        return AclMessage(
            performative=Performative.INFORM,
            sender=self._ctrl_aid(),
            receivers=[AgentId("ctrl.peer", self.platform_name or "_")],
            content=content,
            ontology=MGMT_ONTOLOGY,
            timestamp=int(time.time() * 1000),
        )

    def _handle_deliver(self, wrapper: AclMessage) -> AclMessage:
        inner = _msg_from_payload(wrapper.content["message"])
        targets = [t for t in wrapper.content.get("targets", [])]
        statuses: dict[str, str] = {}
        residents_hit: list[AgentId] = []
        forward: list[AgentId] = []
        for name in targets:
            local = name.split("@")[0]
            with self._lock:
                agent = self._residents.get(local)
            if agent is not None:
                self._deliver_local(inner, agent)
                statuses[name] = DeliveryStatus.DELIVERED.value
            elif self.is_main:
                forward.append(AgentId(local, self.platform_name))
            else:
                statuses[name] = DeliveryStatus.UNKNOWN_AGENT.value
        if forward:
            relayed = self._forward_from_main(
                inner, forward, exclude_container=wrapper.content.get("origin", "")
            )
            statuses.update({k: v.value for k, v in relayed.items()})
        return self._mgmt_reply({"status": "ok", "statuses": statuses})

    def _handle_register_container(self, msg: AclMessage) -> AclMessage:
        container_id = msg.content["container_id"]
        address = (msg.content["listen_host"], int(msg.content["listen_port"]))
        with self._lock:
            if container_id == self.id or container_id in self._links:
                return self._mgmt_reply({"status": "error", "error": "duplicate-container-id"})
            self._links[container_id] = _ContainerLink(container_id, address)
        logger.info("container %s joined from %s:%s", container_id, *address)
        return self._mgmt_reply({"status": "ok", "platform_name": self.platform_name})

    def _handle_register_agent(self, msg: AclMessage) -> AclMessage:
        local_name = msg.content["local_name"]
        with self._lock:
            if local_name in self._routes:
                return self._mgmt_reply({"status": "error", "error": "duplicate-agent-name"})
            self._routes[local_name] = _RouteEntry(
                msg.content["container_id"], msg.content.get("kind", "")
            )
        return self._mgmt_reply({"status": "ok"})

    def _handle_deregister_agent(self, msg: AclMessage) -> None:
        local_name = msg.content["local_name"]
        with self._lock:
            self._routes.pop(local_name, None)
        self._purge_df(local_name)

    def _handle_heartbeat(self, msg: AclMessage) -> AclMessage:
        container_id = msg.content["container_id"]
        with self._lock:
            link = self._links.get(container_id)
            if link is None:
                return self._mgmt_reply({"status": "error", "error": "unknown-container"})
            link.last_seen = time.monotonic()
        return self._mgmt_reply({"status": "ok"})

    # -- main <-> joined plumbing ----------------------------------------------

    def _main_request(self, msg: AclMessage) -> AclMessage:
        if self._main_client is None:
            raise MainUnreachable("container has no main connection")
        try:
            return self._main_client.request(msg)
        except PeerUnreachable as exc:
            raise MainUnreachable(str(exc)) from exc

    def _request_main(self, content: dict) -> AclMessage:
        return self._main_request(self._mgmt_message(content))

    def _heartbeat_loop(self) -> None:
        # interval read every pass so tests may shrink it
        while not self._stopping.wait(HEARTBEAT_INTERVAL_MS / 1000.0):
            try:
                self._request_main({"action": "heartbeat", "container_id": self.id})
            except MainUnreachable:
                logger.warning("heartbeat: main unreachable from %s", self.id)

    def _reaper_loop(self) -> None:
        while not self._stopping.wait(min(0.5, HEARTBEAT_INTERVAL_MS / 2000.0)):
            limit_s = HEARTBEAT_INTERVAL_MS * HEARTBEAT_MISS_LIMIT / 1000.0
            now = time.monotonic()
            dead: list[str] = []
            with self._lock:
                for container_id, link in self._links.items():
                    if now - link.last_seen > limit_s:
                        dead.append(container_id)
            for container_id in dead:
                self._drop_container(container_id)

    def _drop_container(self, container_id: str) -> None:
        logger.warning("container %s missed %d heartbeats, dropping it",
                       container_id, HEARTBEAT_MISS_LIMIT)
        with self._lock:
            link = self._links.pop(container_id, None)
            orphans = [name for name, entry in self._routes.items()
                       if entry.container_id == container_id]
            for name in orphans:
                self._routes.pop(name, None)
        if link is not None and link.client is not None:
            link.client.close()
        for name in orphans:
            self._purge_df(name)

    # -- shutdown ---------------------------------------------------------------

    def stop(self) -> None:
        self._stopping.set()
        with self._lock:
            residents = list(self._residents.values())
            self._residents.clear()
        for agent in residents:
            agent._stop()
        self._server.stop()
        if self._main_client is not None:
            self._main_client.close()
        with self._lock:
            links = list(self._links.values())
        for link in links:
            if link.client is not None:
                link.client.close()
        if self in self.platform.containers:
            self.platform.containers.remove(self)


def _msg_payload(msg: AclMessage) -> dict:
    payload: dict[str, Any] = {
        "performative": msg.performative.value,
        "sender": msg.sender.canonical,
        "receivers": [r.canonical for r in msg.receivers],
        "content": msg.content,
        "language": msg.language,
        "ontology": msg.ontology,
        "conversation_id": msg.conversation_id,
        "timestamp": msg.timestamp,
    }
    if msg.reply_with is not None:
        payload["reply_with"] = msg.reply_with
    if msg.in_reply_to is not None:
        payload["in_reply_to"] = msg.in_reply_to
    return payload


def _msg_from_payload(payload: dict) -> AclMessage:
    from .acl import _message_from_payload

    return _message_from_payload(payload)


def start_main_container(
    platform_name: str,
    listen: tuple[str, int],
    platform: Optional[Platform] = None,
) -> Container:
    """Boot the platform's main container; the DF agent starts automatically.

    Raises AddressInUse when the listen port is taken.
    """
    from .df import DirectoryFacilitatorAgent

    env = platform or Platform(platform_name)
    env.name = platform_name
    container = Container(env, "main", is_main=True, listen=listen)
    container._reaper = threading.Thread(
        target=container._reaper_loop, name="container-reaper", daemon=True
    )
    container._reaper.start()
    container.spawn_agent("df", "df", {})
    container.df_agent = container._residents["df"]
    return container


def join_container(
    main: tuple[str, int],
    container_id: str,
    platform: Optional[Platform] = None,
    listen: tuple[str, int] = ("127.0.0.1", 0),
) -> Container:
    """Join a running main container from this process.

    Raises MainUnreachable or DuplicateContainerId.
    """
    env = platform or Platform()
    container = Container(env, container_id, is_main=False, listen=listen, main_address=main)
    container._main_client = FrameClient(*main)
    try:
        response = container._request_main(
            {"action": "register-container", "container_id": container_id,
             "listen_host": container.listen_address[0],
             "listen_port": container.listen_address[1]}
        )
    except MainUnreachable:
        container.stop()
        raise
    if response.content.get("status") != "ok":
        container.stop()
        if response.content.get("error") == "duplicate-container-id":
            raise DuplicateContainerId(container_id)
        raise PlatformError(response.content.get("error", "join failed"))
    env.name = response.content["platform_name"]
    container._heartbeat = threading.Thread(
        target=container._heartbeat_loop, name=f"heartbeat-{container_id}", daemon=True
    )
    container._heartbeat.start()
    return container
