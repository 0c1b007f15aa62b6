"""The two SCADA agent roles.

An OPC agent bridges exactly one device: it keeps an OPC connection with
one group, registers itself in the yellow pages, and serves
subscriptions — one REQUEST buys a continuous INFORM stream (first a full
snapshot, then deltas as the group's poll reports changes). An operator
agent discovers publishers through the directory, subscribes once per
target, ingests the streams into latest-value/alarm/trend state, and
forwards write commands; a gateway (see gateway module) exposes that
state over HTTP.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .acl import AclMessage, AgentId, Performative, parse_aid
from . import df as dfmod
from . import opc
from .alarms import AlarmEvent, AlarmKind, AlarmRule, evaluate_alarms
from .opc import ConnectFailed, OpcGroup, ServerNotFound
from .plcsim import PlcSimError, Quality
from .runtime import Agent, CyclicBehaviour, DeliveryStatus, TickerBehaviour, register_agent_kind
from .trends import TrendSeries

logger = logging.getLogger(__name__)

TELEMETRY_ONTOLOGY = "scada-telemetry"
COMMAND_ONTOLOGY = "scada-command"
CONSOLE_ONTOLOGY = "scada-console"

RECONNECT_INTERVAL_MS = 2000
REANNOUNCE_INTERVAL_MS = 30_000
SUBSCRIBE_TIMEOUT_MS = 5000
SEARCH_STALE_MS = 2000
DELIVERY_FAILURE_LIMIT = 3
DEFAULT_TREND_CAPACITY = 3600
DEFAULT_DISCOVERY_TIMEOUT_MS = 10_000
DEFAULT_HYSTERESIS_EU_FRACTION = 0.005  # 0.5% of EU range when a rule names none


class SubscriptionState(str, Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"
    CANCELLED = "CANCELLED"
    FAILED = "FAILED"


@dataclass
class Subscription:
    subscriber: AgentId
    publisher: AgentId
    conversation_id: str
    group_name: str
    item_filter: Optional[list[str]]
    state: SubscriptionState = SubscriptionState.PENDING
    informs_sent: int = 0
    consecutive_failures: int = 0


@dataclass
class TelemetryPayload:
    device_id: str
    updates: list[tuple[str, Any, Quality, int]]  # address, value, quality, timestamp
    publisher_sequence: int
    kind: str = "delta"  # "snapshot" for the first INFORM of a subscription

    def to_content(self) -> dict:
        return {
            "action": "telemetry",
            "device_id": self.device_id,
            "kind": self.kind,
            "publisher_sequence": self.publisher_sequence,
            "updates": [[a, v, q.value, t] for a, v, q, t in self.updates],
        }

    @classmethod
    def from_content(cls, content: dict) -> "TelemetryPayload":
        return cls(
            device_id=content["device_id"],
            updates=[(a, v, Quality(q), t) for a, v, q, t in content["updates"]],
            publisher_sequence=content["publisher_sequence"],
            kind=content.get("kind", "delta"),
        )


class _PollClock:
    """Advances one update_rate per reading: the agent's ticker is the timebase."""

    def __init__(self, step_ms: int) -> None:
        self.step = float(step_ms)
        self.now = 0.0

    def __call__(self) -> float:
        self.now += self.step
        return self.now


def _catalog_entry(item) -> dict:
    return {
        "address": item.address,
        "name": item.name,
        "data_type": item.data_type.value,
        "eu_low": item.eu_low,
        "eu_high": item.eu_high,
        "unit": item.unit,
        "writable": item.writable,
    }


class OpcAgent(Agent):
    """Bridges one PLC device into the agent world and serves subscriptions."""

    def __init__(self, args: dict) -> None:
        super().__init__()
        self.device_name = args["device"]
        self.service_name = args.get("service_name", self.device_name)
        self.service_type = args.get("service_type", dfmod.DEFAULT_SERVICE_TYPE)
        self.group_name = args.get("group_name", "group1")
        self.update_rate = int(args.get("update_rate", 400))
        self.deadband = float(args.get("deadband", 0.0))
        self.item_addresses: Optional[list[str]] = args.get("items")
        self._conn: Optional[opc.OpcConnection] = None
        self._registered = False
        self.subscriptions: dict[str, Subscription] = {}  # by conversation_id

    def setup(self) -> None:
        self.add_behaviour(CyclicBehaviour(self._on_message))
        self.add_behaviour(TickerBehaviour(self.update_rate, self._poll))
        self.add_behaviour(TickerBehaviour(RECONNECT_INTERVAL_MS, self._bootstrap))
        self.add_behaviour(TickerBehaviour(REANNOUNCE_INTERVAL_MS, self._reannounce))
        self._bootstrap()

    def teardown(self) -> None:
        if self._conn is not None:
            self._conn.close()

    # -- connection / registration ---------------------------------------

    @property
    def connected(self) -> bool:
        return self._conn is not None

    def _bootstrap(self) -> None:
        if self._conn is None:
            try:
                conn = opc.connect(
                    "localhost",
                    self.device_name,
                    f"JOPC-{self.aid.local_name}",
                    self.container.platform.devices,
                    clock=_PollClock(self.update_rate),
                )
                addresses = self.item_addresses or list(conn.device.items)
                conn.add_group(
                    OpcGroup(self.group_name, True, self.update_rate, self.deadband, items=addresses)
                )
                self._conn = conn
                logger.info("%s connected to device %s", self.aid, self.device_name)
            except (ServerNotFound, ConnectFailed) as exc:
                logger.info("%s: device not reachable (%s), retrying every %d ms",
                            self.aid, exc, RECONNECT_INTERVAL_MS)
                return
        if not self._registered:
            sd = self._service_description()
            try:
                dfmod.register_service(self, sd)
            except dfmod.DuplicateRegistration:
                logger.error("FAILURE: %s could not register %s, terminating", self.aid, sd)
                raise
            except dfmod.DfError as exc:
                logger.error("FAILURE: %s directory registration failed (%s), terminating",
                             self.aid, exc)
                raise
            self._registered = True
            logger.info("%s registered service %s/%s", self.aid, sd.service_type, sd.service_name)

    def _service_description(self) -> dfmod.ServiceDescription:
        device = self._conn.device if self._conn else None
        properties = {"device_id": self.device_name}
        if device is not None:
            properties["item_count"] = len(device.items)
        return dfmod.ServiceDescription(
            provider=self.aid,
            service_type=self.service_type,
            service_name=self.service_name,
            properties=properties,
        )

    def _reannounce(self) -> None:
        if self._registered:
            try:
                dfmod.register_service(self, self._service_description())
            except dfmod.DfError:
                logger.warning("%s: periodic re-announce failed", self.aid)

    # -- subscription protocol ----------------------------------------------

    def _on_message(self, msg: AclMessage) -> None:
        if msg.ontology == TELEMETRY_ONTOLOGY:
            if msg.performative is Performative.REQUEST and msg.content.get("action") == "subscribe":
                self._handle_subscribe(msg)
            elif msg.performative is Performative.CANCEL:
                self._handle_cancel(msg)
        elif msg.ontology == COMMAND_ONTOLOGY and msg.performative is Performative.REQUEST:
            if msg.content.get("action") == "write":
                self._handle_write(msg)

    def _handle_subscribe(self, request: AclMessage) -> None:
        if not request.conversation_id:
            self.reply_to(request, Performative.REFUSE, {"reason": "missing-conversation-id"})
            return
        if self._conn is None:
            self.reply_to(request, Performative.REFUSE, {"reason": "device-unavailable"})
            return
        group_items = set(self._group_items())
        item_filter = request.content.get("items")
        if item_filter is not None:
            unknown = [a for a in item_filter if a not in group_items]
            if unknown:
                self.reply_to(
                    request, Performative.REFUSE,
                    {"reason": "unknown-items", "items": unknown},
                )
                return
        for sub in self.subscriptions.values():
            if (sub.subscriber == request.sender and sub.group_name == self.group_name
                    and sub.state is SubscriptionState.ACTIVE):
                self.reply_to(request, Performative.REFUSE, {"reason": "already-subscribed"})
                return
        sub = Subscription(
            subscriber=request.sender,
            publisher=self.aid,
            conversation_id=request.conversation_id,
            group_name=self.group_name,
            item_filter=list(item_filter) if item_filter is not None else None,
            state=SubscriptionState.ACTIVE,
        )
        self.subscriptions[request.conversation_id] = sub
        device = self._conn.device
        self.reply_to(
            request, Performative.AGREE,
            {
                "status": "subscribed",
                "group_name": self.group_name,
                "update_rate_ms": self.update_rate,
                "device_id": device.device_id,
                "catalog": [_catalog_entry(device.items[a]) for a in self._group_items()],
            },
        )
        snapshot = [
            (a, s.value, s.quality, s.timestamp)
            for a, s in ((a, self._conn.sync_read_item(self.group_name, a))
                         for a in self._effective_items(sub))
        ]
        self._send_inform(sub, snapshot, kind="snapshot")
        logger.info("%s: %s subscribed (conversation %s)",
                    self.aid, sub.subscriber, sub.conversation_id)

    def _group_items(self) -> list[str]:
        for group in self._conn.groups:
            if group.name == self.group_name:
                return group.items
        return []

    def _effective_items(self, sub: Subscription) -> list[str]:
        if sub.item_filter is None:
            return self._group_items()
        return [a for a in self._group_items() if a in sub.item_filter]

    def _handle_cancel(self, cancel: AclMessage) -> None:
        sub = self.subscriptions.get(cancel.conversation_id)
        if sub is None or sub.state is not SubscriptionState.ACTIVE:
            self.reply_to(cancel, Performative.REFUSE, {"reason": "unknown-conversation"})
            return
        sub.state = SubscriptionState.CANCELLED
        self.reply_to(cancel, Performative.INFORM, {"status": "cancelled"})

    def _handle_write(self, request: AclMessage) -> None:
        if not self._has_active_subscription(request.sender):
            self.reply_to(request, Performative.REFUSE, {"reason": "no-active-subscription"})
            return
        address = request.content.get("address")
        value = request.content.get("value")
        try:
            self._conn.sync_write_item(self.group_name, address, value)
        except (PlcSimError, opc.OpcError) as exc:
            self.reply_to(
                request, Performative.FAILURE,
                {"error": type(exc).__name__, "detail": str(exc)},
            )
            return
        self.reply_to(request, Performative.INFORM, {"status": "ok", "address": address})

    def _has_active_subscription(self, subscriber: AgentId) -> bool:
        return any(
            sub.subscriber == subscriber and sub.state is SubscriptionState.ACTIVE
            for sub in self.subscriptions.values()
        )

    # -- publishing ------------------------------------------------------------

    def _poll(self) -> None:
        if self._conn is None:
            return
        try:
            event = self._conn.poll_group(self.group_name)
        except (ServerNotFound, opc.UnknownGroup):
            return
        if event is None:
            return
        for sub in list(self.subscriptions.values()):
            if sub.state is not SubscriptionState.ACTIVE:
                continue
            updates = [
                (a, s.value, s.quality, s.timestamp)
                for a, s in event.changes
                if sub.item_filter is None or a in sub.item_filter
            ]
            if updates:
                self._send_inform(sub, updates, kind="delta")

    def _send_inform(self, sub: Subscription, updates, kind: str) -> None:
        payload = TelemetryPayload(
            device_id=self.device_name,
            updates=updates,
            publisher_sequence=sub.informs_sent + 1,
            kind=kind,
        )
        msg = self.make_message(
            Performative.INFORM,
            [sub.subscriber],
            payload.to_content(),
            ontology=TELEMETRY_ONTOLOGY,
            conversation_id=sub.conversation_id,
        )
        statuses = self.send(msg)
        status = statuses.get(sub.subscriber.canonical, DeliveryStatus.UNREACHABLE)
        if status is DeliveryStatus.DELIVERED:
            sub.informs_sent += 1
            sub.consecutive_failures = 0
        elif status is DeliveryStatus.UNKNOWN_AGENT:
            # subscriber died: cancel publisher-side, stop the stream
            sub.state = SubscriptionState.CANCELLED
            logger.info("%s: subscriber %s gone, cancelling %s",
                        self.aid, sub.subscriber, sub.conversation_id)
        else:
            sub.consecutive_failures += 1
            if sub.consecutive_failures >= DELIVERY_FAILURE_LIMIT:
                sub.state = SubscriptionState.FAILED
                logger.warning("%s: delivery to %s failed %d times, subscription FAILED",
                               self.aid, sub.subscriber, sub.consecutive_failures)
                failure = self.make_message(
                    Performative.FAILURE,
                    [sub.subscriber],
                    {"error": "delivery-failed"},
                    ontology=TELEMETRY_ONTOLOGY,
                    conversation_id=sub.conversation_id,
                )
                self.send(failure)


# -- operator ------------------------------------------------------------------

@dataclass
class _Target:
    service_type: str
    service_name: str
    provider: Optional[AgentId] = None
    conversation_id: str = ""
    state: Optional[SubscriptionState] = None  # None = still discovering
    group_name: str = ""
    device_id: str = ""
    update_rate_ms: int = 0
    requests_sent: int = 0
    informs_received: int = 0
    last_sequence: Optional[int] = None
    sequence_gaps: int = 0
    search_started: float = 0.0
    search_sent: float = 0.0
    subscribe_sent: float = 0.0
    warned: bool = False

    @property
    def key(self) -> tuple[str, str]:
        return (self.service_type, self.service_name)


class _Pending:
    def __init__(self) -> None:
        self.event = threading.Event()
        self.result: dict = {}

    def resolve(self, result: dict) -> None:
        self.result = result
        self.event.set()


def _parse_targets(raw, default_type: str) -> list[tuple[str, str]]:
    if isinstance(raw, str):
        parts = [p for p in raw.split("+") if p]
    else:
        parts = list(raw or [])
    targets = []
    for part in parts:
        if isinstance(part, tuple):
            targets.append(part)
        elif "/" in part:
            service_type, service_name = part.split("/", 1)
            targets.append((service_type, service_name))
        else:
            targets.append((default_type, part))
    return targets


def _parse_alarm_specs(raw) -> list[dict]:
    """Accept dicts, AlarmRule objects, or compact "item>high"/"item<low" strings."""
    if raw is None:
        return []
    if isinstance(raw, str):
        raw = [r for r in raw.split(";") if r]
    specs = []
    for entry in raw:
        if isinstance(entry, AlarmRule):
            specs.append({
                "item": entry.address, "low": entry.low_limit,
                "high": entry.high_limit, "hysteresis": entry.hysteresis,
            })
        elif isinstance(entry, dict):
            specs.append({
                "item": entry.get("item") or entry.get("address"),
                "low": entry.get("low"), "high": entry.get("high"),
                "hysteresis": entry.get("hysteresis"),
            })
        elif ">" in entry:
            item, limit = entry.split(">", 1)
            specs.append({"item": item, "low": None, "high": float(limit), "hysteresis": None})
        elif "<" in entry:
            item, limit = entry.split("<", 1)
            specs.append({"item": item, "low": float(limit), "high": None, "hysteresis": None})
        else:
            raise ValueError(f"bad alarm spec {entry!r}")
    return specs


class OperatorAgent(Agent):
    """Discovers publishers, subscribes once each, and supervises the streams."""

    def __init__(self, args: dict) -> None:
        super().__init__()
        default_type = args.get("service_type", dfmod.DEFAULT_SERVICE_TYPE)
        target_list = _parse_targets(args.get("targets") or args.get("target"), default_type)
        self._targets: dict[tuple[str, str], _Target] = {
            (t, n): _Target(service_type=t, service_name=n) for t, n in target_list
        }
        self._alarm_specs = _parse_alarm_specs(args.get("alarms") or args.get("alarm_rules"))
        self.trend_capacity = int(args.get("trend_capacity", DEFAULT_TREND_CAPACITY))
        self.discovery_timeout_ms = int(
            args.get("discovery_timeout_ms", DEFAULT_DISCOVERY_TIMEOUT_MS)
        )
        self._gateway_port = args.get("gateway")
        self._gateway_host = args.get("gateway_host", "127.0.0.1")
        self.gateway = None

        self.latest: dict[str, dict] = {}          # address -> last value record
        self.catalog: dict[str, dict] = {}          # address -> item metadata
        self.trends: dict[str, TrendSeries] = {}
        self.alarm_rules: list[AlarmRule] = []
        self.open_alarms: dict[tuple[str, AlarmKind], AlarmEvent] = {}
        self.alarm_history: list[AlarmEvent] = []
        self._searches: dict[str, tuple[tuple[str, str], float]] = {}
        self._conversations: dict[str, _Target] = {}
        self._console_pending: dict[str, _Pending] = {}
        self._command_to_console: dict[str, str] = {}
        self._console_lock = threading.Lock()
        self._event_sinks: list[Callable[[dict], None]] = []
        self._counter = itertools.count(1)

    # -- lifecycle ---------------------------------------------------------

    def setup(self) -> None:
        self.add_behaviour(CyclicBehaviour(self._on_message))
        self.add_behaviour(TickerBehaviour(dfmod.DF_RETRY_INTERVAL_MS, self._discovery_tick))
        if self._gateway_port is not None:
            from .gateway import Gateway

            self.gateway = Gateway(self, (self._gateway_host, int(self._gateway_port)))
            self.gateway.start()
        self._discovery_tick()

    def teardown(self) -> None:
        if self.gateway is not None:
            self.gateway.stop()

    # -- event fan-out -------------------------------------------------------

    def add_event_sink(self, sink: Callable[[dict], None]) -> None:
        self._event_sinks.append(sink)

    def _emit(self, event: dict) -> None:
        for sink in list(self._event_sinks):
            try:
                sink(event)
            except Exception:
                logger.exception("event sink failed")

    # -- discovery / subscription ----------------------------------------------

    def _discovery_tick(self) -> None:
        now = time.monotonic() * 1000.0
        for target in self._targets.values():
            if target.state is SubscriptionState.ACTIVE:
                continue
            if target.state is SubscriptionState.PENDING:
                if now - target.subscribe_sent > SUBSCRIBE_TIMEOUT_MS:
                    logger.warning("%s: no AGREE from %s, rediscovering",
                                   self.aid, target.provider)
                    self._reset_target(target)
                continue
            if target.search_started == 0.0:
                target.search_started = now
            if target.search_sent and now - target.search_sent < SEARCH_STALE_MS:
                continue
            if (not target.warned
                    and now - target.search_started > self.discovery_timeout_ms):
                logger.warning(
                    "WARNING: %s found no provider for %s/%s within %d ms; retrying",
                    self.aid, target.service_type, target.service_name,
                    self.discovery_timeout_ms,
                )
                target.warned = True
            reply_with = f"{self.aid.local_name}-dfsearch-{next(self._counter)}"
            self._searches[reply_with] = (target.key, now)
            target.search_sent = now
            self.send(
                self.make_message(
                    Performative.REQUEST,
                    [dfmod.df_aid(self)],
                    {
                        "action": "search",
                        "service_type": target.service_type,
                        "service_name": target.service_name,
                    },
                    ontology=dfmod.DF_ONTOLOGY,
                    reply_with=reply_with,
                )
            )

    def _reset_target(self, target: _Target) -> None:
        if target.conversation_id:
            self._conversations.pop(target.conversation_id, None)
        target.provider = None
        target.conversation_id = ""
        target.state = None
        target.search_sent = 0.0
        target.search_started = 0.0
        target.last_sequence = None

    def _handle_df_reply(self, msg: AclMessage) -> None:
        entry = self._searches.pop(msg.in_reply_to, None)
        if entry is None:
            return
        target = self._targets.get(entry[0])
        if target is None or target.state in (SubscriptionState.PENDING, SubscriptionState.ACTIVE):
            return
        results = msg.content.get("results", [])
        if not results:
            target.search_sent = 0.0  # retry on next tick
            return
        sd = dfmod.ServiceDescription.from_payload(results[0])
        self._subscribe(target, sd.provider)

    def _subscribe(self, target: _Target, provider: AgentId) -> None:
        conversation_id = f"sub-{self.aid.local_name}-{provider.local_name}-{next(self._counter)}"
        target.provider = provider
        target.conversation_id = conversation_id
        target.state = SubscriptionState.PENDING
        target.subscribe_sent = time.monotonic() * 1000.0
        target.requests_sent += 1
        self._conversations[conversation_id] = target
        self.send(
            self.make_message(
                Performative.REQUEST,
                [provider],
                {"action": "subscribe"},
                ontology=TELEMETRY_ONTOLOGY,
                conversation_id=conversation_id,
                reply_with=f"{conversation_id}-req",
            )
        )
        logger.info("%s: subscribing to %s (%s)", self.aid, provider, conversation_id)

    # -- message handling ----------------------------------------------------

    def _on_message(self, msg: AclMessage) -> None:
        if msg.ontology == dfmod.DF_ONTOLOGY and msg.in_reply_to:
            self._handle_df_reply(msg)
        elif msg.ontology == TELEMETRY_ONTOLOGY:
            self._handle_telemetry_message(msg)
        elif msg.ontology == COMMAND_ONTOLOGY and msg.in_reply_to:
            self._handle_command_reply(msg)
        elif msg.ontology == CONSOLE_ONTOLOGY and msg.performative is Performative.REQUEST:
            self._handle_console(msg)

    def _handle_telemetry_message(self, msg: AclMessage) -> None:
        target = self._conversations.get(msg.conversation_id)
        if target is None:
            return
        if msg.performative is Performative.AGREE:
            target.state = SubscriptionState.ACTIVE
            target.group_name = msg.content.get("group_name", "")
            target.device_id = msg.content.get("device_id", "")
            target.update_rate_ms = int(msg.content.get("update_rate_ms", 0))
            for entry in msg.content.get("catalog", []):
                entry = dict(entry)
                entry["device_id"] = target.device_id
                entry["publisher"] = target.provider.canonical
                self.catalog[entry["address"]] = entry
            self._materialize_alarm_rules()
            self._emit_subscription_state(target)
            logger.info("%s: subscription to %s ACTIVE", self.aid, target.provider)
        elif msg.performative is Performative.INFORM:
            self._ingest_telemetry(target, msg)
        elif msg.performative in (Performative.REFUSE, Performative.FAILURE):
            logger.warning("%s: subscription to %s got %s (%s)", self.aid, target.provider,
                           msg.performative.value, msg.content)
            target.state = SubscriptionState.FAILED
            self._emit_subscription_state(target)
            self._reset_target(target)

    def _ingest_telemetry(self, target: _Target, msg: AclMessage) -> None:
        payload = TelemetryPayload.from_content(msg.content)
        sequence = payload.publisher_sequence
        if target.last_sequence is not None and sequence != target.last_sequence + 1:
            target.sequence_gaps += 1
            logger.warning("%s: sequence gap on %s (%d -> %d)",
                           self.aid, target.conversation_id, target.last_sequence, sequence)
        target.last_sequence = sequence
        target.informs_received += 1
        updates_out = []
        samples = []
        for address, value, quality, ts in payload.updates:
            self.latest[address] = {
                "address": address,
                "value": value,
                "quality": quality.value,
                "timestamp": ts,
                "device_id": payload.device_id,
                "publisher": target.provider.canonical if target.provider else "",
            }
            series = self.trends.get(address)
            if series is None:
                series = self.trends[address] = TrendSeries(address, self.trend_capacity)
            series.append(ts, value, quality)
            samples.append((address, value, quality, ts))
            updates_out.append(
                {"address": address, "value": value, "quality": quality.value, "timestamp": ts}
            )
        _, raised, cleared = evaluate_alarms(self.alarm_rules, samples, self.open_alarms)
        for event in raised:
            self._emit({"type": "alarm", "transition": "raised", "alarm": event.to_payload()})
        for event in cleared:
            self.alarm_history.append(event)
            del self.alarm_history[:-200]
            self._emit({"type": "alarm", "transition": "cleared", "alarm": event.to_payload()})
        self._emit({
            "type": "telemetry",
            "device_id": payload.device_id,
            "publisher": target.provider.canonical if target.provider else "",
            "sequence": sequence,
            "kind": payload.kind,
            "updates": updates_out,
        })

    def _materialize_alarm_rules(self) -> None:
        rules = []
        for spec in self._alarm_specs:
            address = self._resolve_item(spec["item"])
            if address is None:
                continue
            hysteresis = spec.get("hysteresis")
            if hysteresis is None:
                meta = self.catalog[address]
                hysteresis = DEFAULT_HYSTERESIS_EU_FRACTION * (meta["eu_high"] - meta["eu_low"])
            rules.append(
                AlarmRule(
                    address=address,
                    low_limit=spec.get("low"),
                    high_limit=spec.get("high"),
                    hysteresis=hysteresis,
                )
            )
        self.alarm_rules = rules

    def _resolve_item(self, item: str) -> Optional[str]:
        if item in self.catalog:
            return item
        for address, meta in self.catalog.items():
            if meta.get("name") == item:
                return address
        return None

    def _emit_subscription_state(self, target: _Target) -> None:
        self._emit({
            "type": "subscription_state",
            "publisher": target.provider.canonical if target.provider else "",
            "service_name": target.service_name,
            "state": target.state.value if target.state else "DISCOVERING",
            "conversation_id": target.conversation_id,
        })

    # -- commands (write / cancel) ----------------------------------------------

    def _handle_command_reply(self, msg: AclMessage) -> None:
        console_id = self._command_to_console.pop(msg.in_reply_to, None)
        if console_id is None:
            return
        if msg.performative is Performative.INFORM:
            result = {"status": "ok", **msg.content}
        elif msg.performative is Performative.REFUSE:
            result = {"status": "refused", "error": msg.content.get("reason", "refused")}
        else:
            result = {"status": "failure", "error": msg.content.get("error", "failure"),
                      "detail": msg.content.get("detail", "")}
        self._resolve_console(console_id, result)

    def _find_publisher_for(self, address: str) -> Optional[_Target]:
        meta = self.catalog.get(address)
        if meta is None:
            return None
        for target in self._targets.values():
            if target.provider and target.provider.canonical == meta["publisher"]:
                return target
        return None

    # -- console (gateway) interface ------------------------------------------

    def console_request(self, content: dict, timeout_s: float = 5.0) -> dict:
        """Thread-safe request into the agent; blocks until the agent answers."""
        pending = _Pending()
        reply_with = f"console-{next(self._counter)}"
        with self._console_lock:
            self._console_pending[reply_with] = pending
        msg = AclMessage(
            performative=Performative.REQUEST,
            sender=self.aid,
            receivers=[self.aid],
            content=content,
            ontology=CONSOLE_ONTOLOGY,
            reply_with=reply_with,
            timestamp=self.now_ms(),
        )
        self.container.send(msg)
        if not pending.event.wait(timeout_s):
            with self._console_lock:
                self._console_pending.pop(reply_with, None)
            return {"status": "error", "error": "Timeout"}
        return pending.result

    def _resolve_console(self, reply_with: str, result: dict) -> None:
        with self._console_lock:
            pending = self._console_pending.pop(reply_with, None)
        if pending is not None:
            pending.resolve(result)

    def _handle_console(self, msg: AclMessage) -> None:
        action = msg.content.get("action")
        if action == "snapshot":
            self._resolve_console(msg.reply_with, {"status": "ok", **self.snapshot()})
        elif action == "trend":
            address = msg.content.get("address", "")
            series = self.trends.get(address)
            t1 = int(msg.content.get("t1", 0))
            t2 = int(msg.content.get("t2", 2**62))
            samples = [[t, v, q.value] for t, v, q in (series.window(t1, t2) if series else [])]
            self._resolve_console(
                msg.reply_with, {"status": "ok", "address": address, "samples": samples}
            )
        elif action == "ack-alarm":
            self._console_ack(msg)
        elif action == "write":
            self._console_write(msg)
        elif action == "cancel":
            self._console_cancel(msg)
        else:
            self._resolve_console(msg.reply_with, {"status": "error", "error": "unknown-action"})

    def _console_ack(self, msg: AclMessage) -> None:
        address = msg.content.get("address")
        kind = msg.content.get("kind", "")
        try:
            key = (address, AlarmKind(kind))
        except ValueError:
            self._resolve_console(msg.reply_with, {"status": "error", "error": "unknown-kind"})
            return
        event = self.open_alarms.get(key)
        if event is None:
            self._resolve_console(msg.reply_with, {"status": "error", "error": "no-open-alarm"})
            return
        event.acknowledged = True
        self._emit({"type": "alarm", "transition": "acknowledged", "alarm": event.to_payload()})
        self._resolve_console(msg.reply_with, {"status": "ok", "alarm": event.to_payload()})

    def _console_write(self, msg: AclMessage) -> None:
        address = msg.content.get("address", "")
        value = msg.content.get("value")
        publisher_name = msg.content.get("publisher")
        if publisher_name:
            target = next(
                (t for t in self._targets.values()
                 if t.provider and t.provider.canonical == publisher_name),
                None,
            )
        else:
            target = self._find_publisher_for(address)
        if target is None or target.state is not SubscriptionState.ACTIVE:
            self._resolve_console(
                msg.reply_with, {"status": "refused", "error": "no-active-subscription"}
            )
            return
        command_id = f"{self.aid.local_name}-cmd-{next(self._counter)}"
        self._command_to_console[command_id] = msg.reply_with
        self.send(
            self.make_message(
                Performative.REQUEST,
                [target.provider],
                {"action": "write", "address": address, "value": value},
                ontology=COMMAND_ONTOLOGY,
                conversation_id=target.conversation_id,
                reply_with=command_id,
            )
        )

    def _console_cancel(self, msg: AclMessage) -> None:
        service_name = msg.content.get("service_name")
        target = next(
            (t for t in self._targets.values() if t.service_name == service_name), None
        )
        if target is None or target.state is not SubscriptionState.ACTIVE:
            self._resolve_console(msg.reply_with, {"status": "error", "error": "not-subscribed"})
            return
        self.send(
            self.make_message(
                Performative.CANCEL,
                [target.provider],
                {"action": "cancel"},
                ontology=TELEMETRY_ONTOLOGY,
                conversation_id=target.conversation_id,
            )
        )
        target.state = SubscriptionState.CANCELLED
        self._emit_subscription_state(target)
        self._resolve_console(msg.reply_with, {"status": "ok"})

    # -- state snapshot ----------------------------------------------------------

    def snapshot(self) -> dict:
        items = []
        for address, meta in self.catalog.items():
            record = dict(meta)
            live = self.latest.get(address)
            if live:
                record.update(
                    value=live["value"], quality=live["quality"], timestamp=live["timestamp"]
                )
            items.append(record)
        update_rates = [t.update_rate_ms for t in self._targets.values() if t.update_rate_ms]
        return {
            "items": items,
            "alarms": {
                "open": [e.to_payload() for e in self.open_alarms.values()],
                "history": [e.to_payload() for e in self.alarm_history[-50:]],
            },
            "subscriptions": [
                {
                    "service_type": t.service_type,
                    "service_name": t.service_name,
                    "publisher": t.provider.canonical if t.provider else "",
                    "state": t.state.value if t.state else "DISCOVERING",
                    "conversation_id": t.conversation_id,
                    "requests_sent": t.requests_sent,
                    "informs_received": t.informs_received,
                    "sequence_gaps": t.sequence_gaps,
                    "update_rate_ms": t.update_rate_ms,
                }
                for t in self._targets.values()
            ],
            "update_rate_ms": min(update_rates) if update_rates else 0,
        }

    # -- introspection used by tests/acceptance ----------------------------------

    def target_status(self, service_name: str) -> Optional[dict]:
        for target in self._targets.values():
            if target.service_name == service_name:
                return {
                    "state": target.state.value if target.state else "DISCOVERING",
                    "requests_sent": target.requests_sent,
                    "informs_received": target.informs_received,
                    "sequence_gaps": target.sequence_gaps,
                    "last_sequence": target.last_sequence,
                    "publisher": target.provider.canonical if target.provider else "",
                }
        return None


def send_write_command(
    operator: OperatorAgent, publisher: AgentId, address: str, value, timeout_s: float = 5.0
) -> dict:
    """Issue a write through the operator; requires an active subscription."""
    return operator.console_request(
        {"action": "write", "address": address, "value": value,
         "publisher": publisher.canonical},
        timeout_s=timeout_s,
    )


register_agent_kind("opc-agent", OpcAgent)
register_agent_kind("operator", OperatorAgent)
