"""Gateway HTTP/SSE tests against a live operator."""

import http.client
import json
import time
import urllib.request

import pytest

import agentscada.agents  # noqa: F401
from agentscada.agents import send_write_command
from agentscada.demo import boot_device, wait_for
from agentscada.fixtures import read_fixture
from agentscada.runtime import Platform, start_main_container

SPEED = "s7:[@LOCALSERVER]db1,w0"
SPEED_SP = "s7:[@LOCALSERVER]db1,w10"
UPDATE_RATE = 100


@pytest.fixture
def rig():
    platform = Platform("SCADA")
    runner = boot_device(platform, read_fixture("winder"))
    main = start_main_container("SCADA", ("127.0.0.1", 0), platform=platform)
    main.spawn_agent("WinderOpcAgent1", "opc-agent",
                     {"device": "winder", "update_rate": UPDATE_RATE})
    main.spawn_agent("R1", "operator", {
        "targets": "winder", "gateway": 0,
        "alarms": ["machine_speed_setpoint>1500"],
        "discovery_timeout_ms": 5000,
    })
    operator = main._residents["R1"]
    operator._setup_done.wait(5)
    assert wait_for(
        lambda: (operator.target_status("winder") or {}).get("informs_received", 0) >= 2,
        timeout_s=8,
    )
    yield main, operator
    platform.stop()
    runner.stop()


def get_json(url):
    with urllib.request.urlopen(url, timeout=5) as resp:
        return resp.status, json.loads(resp.read().decode("utf-8"))


def post_json(url, body):
    req = urllib.request.Request(
        url, data=json.dumps(body).encode("utf-8"),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read().decode("utf-8"))


class TestEndpoints:
    def test_items_lists_catalog_with_live_values(self, rig):
        _, operator = rig
        status, body = get_json(f"{operator.gateway.url}/api/v1/items")
        assert status == 200
        items = {i["address"]: i for i in body["items"]}
        assert items[SPEED]["quality"] == "GOOD"
        assert items[SPEED]["unit"] == "m/min"
        assert items[SPEED_SP]["writable"] is True
        assert body["update_rate_ms"] == UPDATE_RATE

    def test_trend_window_matches_buffer(self, rig):
        _, operator = rig
        series = operator.trends[SPEED]
        t1 = list(series)[0][0]
        t2 = list(series)[-1][0]
        status, body = get_json(
            f"{operator.gateway.url}/api/v1/trend?address={urllib.parse.quote(SPEED)}&t1={t1}&t2={t2}"
        )
        assert status == 200
        assert [s[0] for s in body["samples"]] == [s[0] for s in series.window(t1, t2)]

    def test_write_roundtrip(self, rig):
        _, operator = rig
        status, body = post_json(
            f"{operator.gateway.url}/api/v1/write",
            {"address": SPEED_SP, "value": 900.0},
        )
        assert status == 200 and body["status"] == "ok"

    def test_write_out_of_range_maps_to_422(self, rig):
        _, operator = rig
        status, body = post_json(
            f"{operator.gateway.url}/api/v1/write",
            {"address": SPEED_SP, "value": 999999.0},
        )
        assert status == 422
        assert body["error"] == "OutOfRange"

    def test_write_unknown_item_refused(self, rig):
        _, operator = rig
        status, body = post_json(
            f"{operator.gateway.url}/api/v1/write", {"address": "db9,w9", "value": 1.0}
        )
        assert status == 403
        assert body["status"] == "refused"

    def test_alarm_ack_roundtrip(self, rig):
        main, operator = rig
        publisher = main._residents["WinderOpcAgent1"].aid
        send_write_command(operator, publisher, SPEED_SP, 1600.0)
        assert wait_for(lambda: operator.open_alarms, timeout_s=5)
        status, body = get_json(f"{operator.gateway.url}/api/v1/alarms")
        assert status == 200
        open_alarms = body["alarms"]["open"]
        assert open_alarms and open_alarms[0]["acknowledged"] is False
        status, body = post_json(
            f"{operator.gateway.url}/api/v1/alarms/ack",
            {"address": SPEED_SP, "kind": "HIGH"},
        )
        assert status == 200
        _, body = get_json(f"{operator.gateway.url}/api/v1/alarms")
        assert body["alarms"]["open"][0]["acknowledged"] is True

    def test_ack_without_open_alarm_404(self, rig):
        _, operator = rig
        status, body = post_json(
            f"{operator.gateway.url}/api/v1/alarms/ack",
            {"address": SPEED, "kind": "HIGH"},
        )
        assert status == 404

    def test_subscriptions_endpoint(self, rig):
        _, operator = rig
        status, body = get_json(f"{operator.gateway.url}/api/v1/subscriptions")
        assert status == 200
        subs = body["subscriptions"]
        assert subs[0]["state"] == "ACTIVE"
        assert subs[0]["requests_sent"] == 1


class TestStream:
    def _open_stream(self, operator):
        host, port = operator.gateway.address
        conn = http.client.HTTPConnection(host, port, timeout=10)
        conn.request("GET", "/api/v1/stream")
        resp = conn.getresponse()
        assert resp.status == 200
        assert resp.headers["Content-Type"].startswith("text/event-stream")
        return conn, resp

    def _read_events(self, resp, want, timeout_s):
        events = []
        deadline = time.monotonic() + timeout_s
        while len(events) < want and time.monotonic() < deadline:
            line = resp.fp.readline()
            if line.startswith(b"data: "):
                events.append(json.loads(line[len(b"data: "):]))
        return events

    def test_telemetry_event_within_latency_budget(self, rig):
        _, operator = rig
        conn, resp = self._open_stream(operator)
        try:
            hello = self._read_events(resp, 1, 5)[0]
            assert hello["type"] == "hello"
            start = time.monotonic()
            events = self._read_events(resp, 3, 5)
            latency = time.monotonic() - start
            telemetry = [e for e in events if e["type"] == "telemetry"]
            assert telemetry, f"no telemetry among {events}"
            # values change every device tick, so the first event after attach
            # must arrive within one update_rate + 100 ms
            assert latency < (UPDATE_RATE / 1000.0) * 3 + 0.1
            update = telemetry[0]["updates"][0]
            assert {"address", "value", "quality", "timestamp"} <= set(update)
        finally:
            conn.close()

    def test_alarm_event_on_stream(self, rig):
        main, operator = rig
        conn, resp = self._open_stream(operator)
        try:
            self._read_events(resp, 1, 5)  # hello
            publisher = main._residents["WinderOpcAgent1"].aid
            send_write_command(operator, publisher, SPEED_SP, 1700.0)
            deadline = time.monotonic() + 5
            saw_alarm = False
            while time.monotonic() < deadline and not saw_alarm:
                for event in self._read_events(resp, 1, 1):
                    if event["type"] == "alarm" and event["transition"] == "raised":
                        saw_alarm = True
            assert saw_alarm
        finally:
            conn.close()
