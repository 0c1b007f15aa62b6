"""Passive message tracing: a sequence-diagram-style log of deliveries.

The sniffer is a platform service, not an agent, so enabling it cannot
perturb the traffic it observes: containers tee each successful local
delivery (one record per receiver) into the capture session. Export
formats: a text sequence log and JSON lines that round-trip to equal
records.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .acl import AclMessage, AgentId, parse_aid
from .runtime import Platform

CONTENT_CAP_BYTES = 4096
DIGEST_LENGTH = 12


class SnifferError(Exception):
    pass


class AlreadyCapturing(SnifferError):
    pass


@dataclass
class TraceRecord:
    seq: int
    timestamp: int
    sender: AgentId
    receiver: AgentId
    performative: str
    conversation_id: str
    content_digest: str
    content: Optional[dict]  # omitted when the serialized form exceeds the cap

    def to_json_obj(self) -> dict:
        obj = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "sender": self.sender.canonical,
            "receiver": self.receiver.canonical,
            "performative": self.performative,
            "conversation_id": self.conversation_id,
            "content_digest": self.content_digest,
        }
        if self.content is not None:
            obj["content"] = self.content
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TraceRecord":
        return cls(
            seq=obj["seq"],
            timestamp=obj["timestamp"],
            sender=parse_aid(obj["sender"]),
            receiver=parse_aid(obj["receiver"]),
            performative=obj["performative"],
            conversation_id=obj["conversation_id"],
            content_digest=obj["content_digest"],
            content=obj.get("content"),
        )

    def text_line(self) -> str:
        return (f"{self.seq} | {self.sender.canonical} -> {self.receiver.canonical} : "
                f"{self.performative} [{self.conversation_id}] {self.content_digest}")


class CaptureSession:
    """Accumulates trace records; reads take a snapshot under the lock."""

    def __init__(self, platform: Platform, agent_filter: Optional[list[AgentId]] = None) -> None:
        self.platform = platform
        self._filter = {aid.canonical for aid in agent_filter} if agent_filter else None
        self._records: list[TraceRecord] = []
        self._lock = threading.Lock()
        self._seq = 0
        self.active = True

    def _tap(self, msg: AclMessage, receiver: AgentId) -> None:
        if self._filter is not None:
            if msg.sender.canonical not in self._filter and receiver.canonical not in self._filter:
                return
        raw = json.dumps(msg.content, sort_keys=True, separators=(",", ":")).encode("utf-8")
        digest = hashlib.sha256(raw).hexdigest()[:DIGEST_LENGTH]
        content = msg.content if len(raw) <= CONTENT_CAP_BYTES else None
        with self._lock:
            self._seq += 1
            self._records.append(
                TraceRecord(
                    seq=self._seq,
                    timestamp=int(time.time() * 1000),
                    sender=msg.sender,
                    receiver=receiver,
                    performative=msg.performative.value,
                    conversation_id=msg.conversation_id,
                    content_digest=digest,
                    content=content,
                )
            )

    def records(self) -> list[TraceRecord]:
        with self._lock:
            return list(self._records)

    def stop(self) -> None:
        if self.active:
            self.active = False
            self.platform.set_delivery_tap(None)


def start_capture(platform: Platform, agent_filter: Optional[list[AgentId]] = None) -> CaptureSession:
    """Begin teeing deliveries of this process's containers into a session.

    Raises AlreadyCapturing when a session is already attached.
    """
    if platform._tap is not None:
        raise AlreadyCapturing("a capture session is already attached to this platform")
    session = CaptureSession(platform, agent_filter)
    platform.set_delivery_tap(session._tap)
    return session


def export_sequence_log(session: CaptureSession, format: str = "text") -> str:
    """Render the capture as "text" (one line per record) or "json-lines"."""
    records = session.records()
    if format == "text":
        return "\n".join(r.text_line() for r in records) + ("\n" if records else "")
    if format == "json-lines":
        return "\n".join(json.dumps(r.to_json_obj(), sort_keys=True) for r in records) + (
            "\n" if records else ""
        )
    raise ValueError(f"unknown format {format!r}")


def parse_jsonl(document: str) -> list[TraceRecord]:
    return [TraceRecord.from_json_obj(json.loads(line))
            for line in document.splitlines() if line.strip()]


def write_trace_files(session: CaptureSession, basepath: str) -> tuple[str, str]:
    """Write <basepath>.trace.jsonl and <basepath>.trace.txt; returns the paths."""
    jsonl_path = f"{basepath}.trace.jsonl"
    text_path = f"{basepath}.trace.txt"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        fh.write(export_sequence_log(session, "json-lines"))
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(export_sequence_log(session, "text"))
    return jsonl_path, text_path
