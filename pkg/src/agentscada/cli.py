"""Command-line entry point: boot containers, spawn agents, run the demo.

    platform start --name SCADA --listen :7001 --device winder \\
        --agents H1:opc-agent:device=winder
    platform join --main 192.168.100.31:7001 --agents R2:operator:target=winder
    platform ps --main 127.0.0.1:7001
    platform demo --duration 30

Exit codes: 0 ok, 1 usage, 2 connectivity, 3 config. Every error path
prints a machine-parsable "error: <Name>: detail" line on stderr. Set
PLATFORM_LOG to control the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import agents  # noqa: F401  (registers the opc-agent/operator kinds)
from .acl import AclMessage, AgentId, Performative
from .demo import boot_device, run_demo
from .fixtures import STATIONS, read_fixture
from .plcsim import SchemaViolation
from .runtime import (
    MGMT_ONTOLOGY,
    DuplicateAgentName,
    DuplicateContainerId,
    MainUnreachable,
    Platform,
    UnknownAgentKind,
    join_container,
    start_main_container,
)
from .transport import AddressInUse, FrameClient, PeerUnreachable, parse_hostport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONNECTIVITY = 2
EXIT_CONFIG = 3

CONNECTIVITY_ERRORS = (AddressInUse, MainUnreachable, PeerUnreachable, DuplicateContainerId)
CONFIG_ERRORS = (SchemaViolation, UnknownAgentKind, DuplicateAgentName, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        raise UsageError(message)


def parse_agent_spec(text: str) -> tuple[str, str, dict]:
    """Parse "Name:kind[:k=v,...]" into (name, kind, args)."""
    parts = text.split(":", 2)
    if len(parts) < 2 or not parts[0] or not parts[1]:
        raise UsageError(f"bad agent spec {text!r}, expected Name:kind[:k=v,...]")
    args: dict[str, str] = {}
    if len(parts) == 3 and parts[2]:
        for pair in parts[2].split(","):
            if "=" not in pair:
                raise UsageError(f"bad agent argument {pair!r} in {text!r}")
            key, value = pair.split("=", 1)
            args[key] = value
    return parts[0], parts[1], args


def _device_text(spec: str) -> str:
    path = Path(spec)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    if spec in STATIONS:
        return read_fixture(spec)
    raise FileNotFoundError(f"device config {spec!r} is neither a file nor a bundled station")


def _spawn_agents(container, specs: list[str]) -> list[str]:
    names = []
    for spec in specs:
        name, kind, args = parse_agent_spec(spec)
        container.spawn_agent(name, kind, args)
        print(f"agent {name}@{container.platform_name} spawned ({kind})", flush=True)
        names.append(name)
    return names


def _announce_gateways(container, names: list[str], timeout_s: float = 10.0) -> None:
    for name in names:
        agent = container._residents.get(name)
        if agent is None or not hasattr(agent, "gateway"):
            continue
        agent._setup_done.wait(timeout=timeout_s)
        if getattr(agent, "gateway", None) is not None:
            print(f"gateway {name}: {agent.gateway.url}", flush=True)


def _run_until_signal() -> None:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    while not stop.wait(timeout=0.2):
        pass


def cmd_start(args) -> int:
    host, port = parse_hostport(args.listen, default_host="127.0.0.1")
    platform = Platform(args.name)
    runners = []
    for spec in args.device:
        runners.append(boot_device(platform, _device_text(spec)))
    container = start_main_container(args.name, (host, port), platform=platform)
    print(f"platform {args.name}: main container on "
          f"{container.listen_address[0]}:{container.listen_address[1]}", flush=True)
    session = None
    if args.sniff:
        from . import sniffer

        session = sniffer.start_capture(platform)
    try:
        names = _spawn_agents(container, args.agents)
        _announce_gateways(container, names)
        print("platform ready", flush=True)
        _run_until_signal()
    finally:
        if session is not None:
            from . import sniffer

            paths = sniffer.write_trace_files(session, args.sniff)
            print(f"trace written: {paths[0]} {paths[1]}", flush=True)
        platform.stop()
        for runner in runners:
            runner.stop()
    return EXIT_OK


def cmd_join(args) -> int:
    main_addr = parse_hostport(args.main)
    listen = parse_hostport(args.listen, default_host="127.0.0.1")
    container_id = args.container_id or f"c{os.getpid()}"
    container = join_container(main_addr, container_id, listen=listen)
    print(f"container {container_id} joined platform {container.platform_name} "
          f"at {args.main}", flush=True)
    try:
        names = _spawn_agents(container, args.agents)
        _announce_gateways(container, names)
        print("container ready", flush=True)
        _run_until_signal()
    finally:
        container.platform.stop()
    return EXIT_OK


def cmd_ps(args) -> int:
    host, port = parse_hostport(args.main)
    client = FrameClient(host, port)
    try:
        response = client.request(
            AclMessage(
                performative=Performative.REQUEST,
                sender=AgentId("ctrl.cli", "_"),
                receivers=[AgentId("ctrl.main", "_")],
                content={"action": "ps"},
                ontology=MGMT_ONTOLOGY,
                timestamp=int(time.time() * 1000),
            )
        )
    finally:
        client.close()
    for entry in response.content.get("agents", []):
        print(f"{entry['local_name']} {entry['kind']} {entry['container']} {entry['state']}")
    return EXIT_OK


def cmd_demo(args) -> int:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    run_demo(
        duration_s=args.duration,
        with_salvage=args.with_salvage,
        trace_base=args.trace,
        listen=parse_hostport(args.listen, default_host="127.0.0.1"),
        stop_event=stop,
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="platform", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_start = sub.add_parser("start", help="boot the main container (and DF) on this host")
    p_start.add_argument("--name", default="SCADA", help="platform name (default SCADA)")
    p_start.add_argument("--listen", default=":7001", help="host:port for the main container")
    p_start.add_argument("--device", action="append", default=[],
                         help="device config path or bundled station name (repeatable)")
    p_start.add_argument("--agents", action="append", default=[],
                         help="agent spec Name:kind[:k=v,...] (repeatable)")
    p_start.add_argument("--sniff", default="",
                         help="capture traffic and write <base>.trace.{jsonl,txt} on exit")
    p_start.set_defaults(func=cmd_start)

    p_join = sub.add_parser("join", help="join a running platform from this host")
    p_join.add_argument("--main", required=True, help="main container host:port")
    p_join.add_argument("--container-id", default="", help="container id (default c<pid>)")
    p_join.add_argument("--listen", default="127.0.0.1:0",
                        help="host:port this container listens on for deliveries")
    p_join.add_argument("--agents", action="append", default=[],
                        help="agent spec Name:kind[:k=v,...] (repeatable)")
    p_join.set_defaults(func=cmd_join)

    p_ps = sub.add_parser("ps", help="list agents registered at the main container")
    p_ps.add_argument("--main", required=True, help="main container host:port")
    p_ps.set_defaults(func=cmd_ps)

    p_demo = sub.add_parser("demo", help="run the two-station, three-operator topology")
    p_demo.add_argument("--duration", type=float, default=30.0,
                        help="seconds to run (0 = until Ctrl-C)")
    p_demo.add_argument("--with-salvage", action="store_true",
                        help="also boot the salvage station and its OPC agent")
    p_demo.add_argument("--trace", default="scada-demo", help="trace file base path")
    p_demo.add_argument("--listen", default="127.0.0.1:0", help="main container host:port")
    p_demo.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("PLATFORM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CONNECTIVITY_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONNECTIVITY
    except CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
