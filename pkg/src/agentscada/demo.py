"""Scripted desk-scale topology: two stations, two OPC agents, three operators.

Mirrors the mill deployment: WinderOpcAgent1 and WrappingOpcAgent1 bridge
their stations; WinderRemoteAgent1 and WinderRemoteAgent2 subscribe to
the winder, WrappingRemoteAgent2 to the wrapping station. The sniffer
captures everything and the trace files are written on shutdown.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Callable, Optional

from . import sniffer
from .fixtures import read_fixture
from .plcsim import DeviceRunner, load_device_config
from .runtime import Container, Platform, start_main_container

logger = logging.getLogger(__name__)

OPERATOR_ROSTER = [
    # (agent name, target service, alarm specs)
    ("WinderRemoteAgent1", "winder", ["machine_speed>1800"]),
    ("WinderRemoteAgent2", "winder", ["machine_speed>1800"]),
    ("WrappingRemoteAgent2", "wrapping", ["conveyor_speed>180"]),
]


def boot_device(platform: Platform, config_text: str, wall_clock: bool = True) -> DeviceRunner:
    """Load a station config, register it, and start its tick loop."""
    device = load_device_config(config_text)
    if wall_clock:
        device.set_clock(int(time.time() * 1000))
    platform.devices.register(device)
    return DeviceRunner(device).start()


def wait_for(predicate: Callable[[], bool], timeout_s: float, interval_s: float = 0.05) -> bool:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval_s)
    return predicate()


def run_demo(
    duration_s: float = 30.0,
    with_salvage: bool = False,
    trace_base: str = "scada-demo",
    listen: tuple[str, int] = ("127.0.0.1", 0),
    stop_event: Optional[threading.Event] = None,
    echo: Callable[[str], None] = print,
) -> dict:
    """Run the demo topology for duration_s (or until stop_event) and export traces.

    Returns a summary with trace file paths and gateway URLs.
    """
    platform = Platform("SCADA")
    main = start_main_container("SCADA", listen, platform=platform)
    echo(f"platform SCADA: main container on {main.listen_address[0]}:{main.listen_address[1]}")

    stations = ["winder", "wrapping"] + (["salvage"] if with_salvage else [])
    runners = [boot_device(platform, read_fixture(name)) for name in stations]
    session = sniffer.start_capture(platform)

    try:
        for station in stations:
            title = station.capitalize()
            main.spawn_agent(f"{title}OpcAgent1", "opc-agent",
                             {"device": station, "service_name": station})
        operators = []
        for name, target, alarms in OPERATOR_ROSTER:
            main.spawn_agent(name, "operator",
                             {"targets": target, "alarms": alarms, "gateway": 0})
            operators.append(main._residents[name])
        if with_salvage:
            pass  # third station stays operator-less, mirroring the two-agent run

        gateways = {}
        for operator in operators:
            operator._setup_done.wait(timeout=10)
            if operator.gateway is not None:
                gateways[operator.aid.local_name] = operator.gateway.url
        for name, url in gateways.items():
            echo(f"gateway {name}: {url}")

        wait_for(
            lambda: all(
                any(s["state"] == "ACTIVE" for s in op.snapshot()["subscriptions"])
                for op in operators
            ),
            timeout_s=10,
        )
        echo("subscriptions active; streaming telemetry (Ctrl-C to stop)")

        deadline = time.monotonic() + duration_s if duration_s > 0 else None
        while True:
            if stop_event is not None and stop_event.wait(timeout=0.2):
                break
            if stop_event is None:
                time.sleep(0.2)
            if deadline is not None and time.monotonic() >= deadline:
                break
    finally:
        roster = main.agents()
        jsonl_path, text_path = sniffer.write_trace_files(session, trace_base)
        session.stop()
        echo(f"trace written: {jsonl_path} {text_path}")
        platform.stop()
        for runner in runners:
            runner.stop()

    return {
        "trace_jsonl": jsonl_path,
        "trace_txt": text_path,
        "gateways": gateways,
        "records": len(session.records()),
        "roster": roster,
    }
