"""Yellow-page directory: service registration, search, and discovery.

The directory facilitator is itself an agent (local name "df", spawned
automatically on the main container) and speaks only ACL with ontology
"fipa-df-like". Providers register (service_type, service_name) entries;
operators search, or poll with discover() until a provider shows up.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .acl import AclMessage, AgentId, Performative, parse_aid
from .runtime import Agent, CyclicBehaviour, register_agent_kind

DF_LOCAL_NAME = "df"
DF_ONTOLOGY = "fipa-df-like"
DF_RETRY_INTERVAL_MS = 500
DEFAULT_SERVICE_TYPE = "process-monitoring"  # configurable, not hard-wired into matching


class DfError(Exception):
    pass


class DuplicateRegistration(DfError):
    """Same (provider, type, name) key re-registered with different properties."""


class DiscoveryTimeout(DfError):
    pass


@dataclass(frozen=True)
class ServiceDescription:
    provider: AgentId
    service_type: str
    service_name: str
    properties: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.provider.canonical, self.service_type, self.service_name)

    def to_payload(self) -> dict:
        return {
            "provider": self.provider.canonical,
            "service_type": self.service_type,
            "service_name": self.service_name,
            "properties": dict(self.properties),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ServiceDescription":
        return cls(
            provider=parse_aid(payload["provider"]),
            service_type=payload["service_type"],
            service_name=payload["service_name"],
            properties=dict(payload.get("properties", {})),
        )


class ServiceRegistry:
    """In-memory registry; deterministic search order (provider name ascending)."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str, str], ServiceDescription] = {}
        self._lock = threading.Lock()

    def register(self, sd: ServiceDescription) -> None:
        with self._lock:
            existing = self._entries.get(sd.key)
            if existing is not None and existing.properties != sd.properties:
                raise DuplicateRegistration(str(sd.key))
            self._entries[sd.key] = sd

    def search(self, service_type: str, service_name: Optional[str] = None) -> list[ServiceDescription]:
        with self._lock:
            hits = [
                sd for sd in self._entries.values()
                if sd.service_type == service_type
                and (service_name is None or sd.service_name == service_name)
            ]
        return sorted(hits, key=lambda sd: sd.key)

    def deregister(self, provider: AgentId) -> int:
        with self._lock:
            doomed = [key for key in self._entries if key[0] == provider.canonical]
            for key in doomed:
                del self._entries[key]
        return len(doomed)

    # runtime hook: agent death purges its registrations
    remove_provider = deregister

    def size(self) -> int:
        with self._lock:
            return len(self._entries)


class DirectoryFacilitatorAgent(Agent):
    """Serves register/search/deregister requests over ACL, strictly serially."""

    def __init__(self, args: Optional[dict] = None) -> None:
        super().__init__()
        self.registry = ServiceRegistry()

    def setup(self) -> None:
        self.add_behaviour(CyclicBehaviour(self._handle))

    def _handle(self, msg: AclMessage) -> None:
        if msg.ontology != DF_ONTOLOGY or msg.performative is not Performative.REQUEST:
            return
        action = msg.content.get("action")
        if action == "register":
            try:
                self.registry.register(ServiceDescription.from_payload(msg.content["sd"]))
            except DuplicateRegistration:
                self.reply_to(msg, Performative.REFUSE, {"reason": "duplicate-registration"})
                return
            self.reply_to(msg, Performative.INFORM, {"status": "ok"})
        elif action == "search":
            results = self.registry.search(
                msg.content.get("service_type", ""), msg.content.get("service_name")
            )
            self.reply_to(
                msg, Performative.INFORM,
                {"status": "ok", "results": [sd.to_payload() for sd in results]},
            )
        elif action == "deregister":
            removed = self.registry.deregister(parse_aid(msg.content["provider"]))
            self.reply_to(msg, Performative.INFORM, {"status": "ok", "removed": removed})
        else:
            self.reply_to(msg, Performative.REFUSE, {"reason": f"unknown action {action!r}"})


register_agent_kind("df", DirectoryFacilitatorAgent)


# -- client helpers (run on the calling agent's own thread) -----------------

def df_aid(agent: Agent) -> AgentId:
    return AgentId(DF_LOCAL_NAME, agent.container.platform_name)


def _df_request(agent: Agent, content: dict, timeout_s: float) -> AclMessage:
    msg = agent.make_message(
        Performative.REQUEST, [df_aid(agent)], content, ontology=DF_ONTOLOGY
    )
    reply = agent.request_reply(msg, timeout_s=timeout_s)
    if reply is None:
        raise DfError(f"directory facilitator did not answer within {timeout_s}s")
    return reply


def register_service(agent: Agent, sd: ServiceDescription, timeout_s: float = 5.0) -> None:
    reply = _df_request(agent, {"action": "register", "sd": sd.to_payload()}, timeout_s)
    if reply.performative is Performative.REFUSE:
        raise DuplicateRegistration(reply.content.get("reason", ""))


def search_services(
    agent: Agent, service_type: str, service_name: Optional[str] = None, timeout_s: float = 5.0
) -> list[ServiceDescription]:
    reply = _df_request(
        agent,
        {"action": "search", "service_type": service_type, "service_name": service_name},
        timeout_s,
    )
    return [ServiceDescription.from_payload(p) for p in reply.content.get("results", [])]


def deregister_provider(agent: Agent, provider: Optional[AgentId] = None, timeout_s: float = 5.0) -> int:
    reply = _df_request(
        agent,
        {"action": "deregister", "provider": (provider or agent.aid).canonical},
        timeout_s,
    )
    return int(reply.content.get("removed", 0))


def discover(
    agent: Agent, service_type: str, service_name: str, timeout_ms: int
) -> ServiceDescription:
    """Poll the directory every DF_RETRY_INTERVAL_MS until a provider matches.

    Returns the first match in canonical provider order; raises
    DiscoveryTimeout when the deadline passes with no match.
    """
    if timeout_ms <= 0:
        raise ValueError("timeout_ms must be > 0")
    deadline = time.monotonic() + timeout_ms / 1000.0
    while True:
        results = search_services(agent, service_type, service_name)
        if results:
            return results[0]
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise DiscoveryTimeout(f"{service_type}/{service_name} after {timeout_ms} ms")
        time.sleep(min(DF_RETRY_INTERVAL_MS / 1000.0, remaining))
