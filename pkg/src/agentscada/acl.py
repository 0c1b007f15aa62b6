"""Agent identities, ACL message envelopes, and the platform wire codec.

Every inter-agent exchange rides this envelope. The wire format is
normative and bit-exact: a 4-byte big-endian unsigned length prefix
followed by exactly that many bytes of UTF-8 JSON with sorted keys.
Absent optional fields (reply_with, in_reply_to) are omitted from the
JSON body, never serialized as null.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Optional

MAX_FRAME_BYTES = 16 * 1024 * 1024  # hard cap; no legitimate frame approaches it

_LEN_PREFIX = struct.Struct(">I")

DEFAULT_LANGUAGE = "scada-json"


class AclError(Exception):
    """Base class for identity and codec errors."""


class MalformedAid(AclError):
    """Text is not a valid "local@platform" agent name."""


class EncodeError(AclError):
    """Message cannot be serialized (bad content or frame too large)."""


class DecodeError(AclError):
    """Base class for frame decoding failures."""


class TruncatedFrame(DecodeError):
    """Fewer bytes present than the length prefix announces."""


class MalformedJson(DecodeError):
    """Frame body is not valid UTF-8 JSON matching the envelope schema."""


class UnknownPerformative(DecodeError):
    """Performative token outside the closed set."""


class Performative(str, Enum):
    """Speech-act type of a message. Serialized as the uppercase token."""

    REQUEST = "REQUEST"
    INFORM = "INFORM"
    AGREE = "AGREE"
    REFUSE = "REFUSE"
    FAILURE = "FAILURE"
    CANCEL = "CANCEL"


def _check_name_part(part: str, text: str) -> None:
    if not part:
        raise MalformedAid(f"empty name component in {text!r}")
    for ch in part:
        if ch.isspace() or not ch.isprintable():
            raise MalformedAid(f"whitespace or unprintable character in {text!r}")


@dataclass(frozen=True)
class AgentId:
    """Platform-wide agent name; canonical form is "local_name@platform_name"."""

    local_name: str
    platform_name: str

    def __post_init__(self) -> None:
        for part in (self.local_name, self.platform_name):
            if "@" in part:
                raise MalformedAid(f"'@' inside name component {part!r}")
            _check_name_part(part, part)

    @property
    def canonical(self) -> str:
        return f"{self.local_name}@{self.platform_name}"

    def __str__(self) -> str:
        return self.canonical


def parse_aid(text: str) -> AgentId:
    """Parse "local@platform" into an AgentId.

    Raises MalformedAid when the '@' count is not exactly one, a side is
    empty, or a side contains whitespace/unprintable characters.
    """
    if text.count("@") != 1:
        raise MalformedAid(f"expected exactly one '@' in {text!r}")
    local, platform = text.split("@")
    _check_name_part(local, text)
    _check_name_part(platform, text)
    return AgentId(local, platform)


@dataclass
class AclMessage:
    """FIPA-style message envelope exchanged between agents.

    conversation_id must be non-empty for every message participating in a
    subscription conversation; timestamp is milliseconds since the Unix
    epoch and is non-decreasing across messages emitted by one agent.
    """

    performative: Performative
    sender: AgentId
    receivers: list[AgentId]
    content: dict[str, Any] = field(default_factory=dict)
    language: str = DEFAULT_LANGUAGE
    ontology: str = ""
    conversation_id: str = ""
    reply_with: Optional[str] = None
    in_reply_to: Optional[str] = None
    timestamp: int = 0

    def validate(self) -> None:
        if not isinstance(self.performative, Performative):
            raise EncodeError(f"not a performative: {self.performative!r}")
        if not self.receivers:
            raise EncodeError("receivers must be non-empty")
        if not isinstance(self.content, dict):
            raise EncodeError(f"content must be a key/value document, got {type(self.content).__name__}")


def encode_frame(msg: AclMessage) -> bytes:
    """Encode a message as one wire frame (length prefix + UTF-8 JSON body).

    The JSON body uses sorted keys and no insignificant whitespace, so any
    standards-compliant encoder produces identical bytes for equal messages.
    """
    msg.validate()
    payload: dict[str, Any] = {
        "performative": msg.performative.value,
        "sender": msg.sender.canonical,
        "receivers": [aid.canonical for aid in msg.receivers],
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
    try:
        body = json.dumps(
            payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise EncodeError(f"content not serializable: {exc}") from exc
    if len(body) > MAX_FRAME_BYTES:
        raise EncodeError(f"frame body of {len(body)} bytes exceeds {MAX_FRAME_BYTES} cap")
    return _LEN_PREFIX.pack(len(body)) + body


def decode_frame(data: bytes) -> tuple[AclMessage, int]:
    """Decode one frame from the head of *data*.

    Returns (message, bytes consumed); trailing bytes past the announced
    length are never read. Raises TruncatedFrame when fewer bytes are
    present than the prefix announces, MalformedJson for body/schema
    violations (including an announced length over the frame cap), and
    UnknownPerformative for tokens outside the closed performative set.
    """
    if len(data) < _LEN_PREFIX.size:
        raise TruncatedFrame(f"{len(data)} bytes, need at least {_LEN_PREFIX.size} for the prefix")
    (length,) = _LEN_PREFIX.unpack_from(data)
    if length > MAX_FRAME_BYTES:
        raise MalformedJson(f"announced length {length} exceeds {MAX_FRAME_BYTES} cap")
    end = _LEN_PREFIX.size + length
    if len(data) < end:
        raise TruncatedFrame(f"prefix announces {length} bytes, {len(data) - _LEN_PREFIX.size} present")
    body = bytes(data[_LEN_PREFIX.size : end])
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    return _message_from_payload(payload), end


def _message_from_payload(payload: Any) -> AclMessage:
    if not isinstance(payload, dict):
        raise MalformedJson(f"frame body is {type(payload).__name__}, expected an object")
    required = ("performative", "sender", "receivers", "content",
                "language", "ontology", "conversation_id", "timestamp")
    missing = [k for k in required if k not in payload]
    if missing:
        raise MalformedJson(f"missing fields: {', '.join(missing)}")

    token = payload["performative"]
    try:
        performative = Performative(token)
    except ValueError:
        raise UnknownPerformative(f"unknown performative {token!r}") from None

    try:
        sender = parse_aid(payload["sender"])
        receiver_names = payload["receivers"]
        if not isinstance(receiver_names, list) or not receiver_names:
            raise MalformedJson("receivers must be a non-empty list")
        receivers = [parse_aid(name) for name in receiver_names]
    except MalformedAid as exc:
        raise MalformedJson(f"invalid agent id: {exc}") from exc

    content = payload["content"]
    if not isinstance(content, dict):
        raise MalformedJson("content must be an object")
    timestamp = payload["timestamp"]
    if not isinstance(timestamp, int) or isinstance(timestamp, bool):
        raise MalformedJson("timestamp must be an integer")
    for key in ("language", "ontology", "conversation_id"):
        if not isinstance(payload[key], str):
            raise MalformedJson(f"{key} must be a string")
    for key in ("reply_with", "in_reply_to"):
        if key in payload and not isinstance(payload[key], str):
            raise MalformedJson(f"{key} must be a string when present")

    return AclMessage(
        performative=performative,
        sender=sender,
        receivers=receivers,
        content=content,
        language=payload["language"],
        ontology=payload["ontology"],
        conversation_id=payload["conversation_id"],
        reply_with=payload.get("reply_with"),
        in_reply_to=payload.get("in_reply_to"),
        timestamp=timestamp,
    )


def iter_frames(data: bytes) -> Iterator[AclMessage]:
    """Decode back-to-back frames until the buffer is exhausted.

    Raises TruncatedFrame if the buffer ends mid-frame.
    """
    offset = 0
    view = memoryview(data)
    while offset < len(data):
        msg, consumed = decode_frame(bytes(view[offset:]))
        yield msg
        offset += consumed
