"""Shared generators for randomized protocol tests."""

from __future__ import annotations

import random
import string

from agentscada.acl import AclMessage, AgentId, Performative

_NAME_CHARS = string.ascii_letters + string.digits + "-_.!~#$%"


def random_name(rng: random.Random, max_len: int = 12) -> str:
    return "".join(rng.choice(_NAME_CHARS) for _ in range(rng.randint(1, max_len)))


def random_aid(rng: random.Random) -> AgentId:
    return AgentId(random_name(rng), random_name(rng, 8))


def random_content(rng: random.Random, depth: int = 0):
    roll = rng.random()
    if depth >= 3 or roll < 0.45:
        return rng.choice([
            rng.randint(-(2**40), 2**40),
            rng.uniform(-1e6, 1e6),
            random_name(rng, 20),
            "mæsür€-" + random_name(rng, 4),  # exercise non-ASCII UTF-8
            rng.random() < 0.5,
            None,
        ])
    if roll < 0.7:
        return [random_content(rng, depth + 1) for _ in range(rng.randint(0, 4))]
    return {random_name(rng, 8): random_content(rng, depth + 1) for _ in range(rng.randint(0, 4))}


def random_message(rng: random.Random) -> AclMessage:
    return AclMessage(
        performative=rng.choice(list(Performative)),
        sender=random_aid(rng),
        receivers=[random_aid(rng) for _ in range(rng.randint(1, 4))],
        content={random_name(rng, 8): random_content(rng) for _ in range(rng.randint(0, 5))},
        language=rng.choice(["scada-json", "json"]),
        ontology=rng.choice(["scada-telemetry", "scada-command", "fipa-df-like", ""]),
        conversation_id=rng.choice(["", f"conv-{rng.randint(0, 999)}"]),
        reply_with=rng.choice([None, f"rw-{rng.randint(0, 999)}"]),
        in_reply_to=rng.choice([None, f"rw-{rng.randint(0, 999)}"]),
        timestamp=rng.randint(0, 2**45),
    )
