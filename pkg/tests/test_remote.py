from __future__ import annotations

import io
import json
import socketserver
import sys
import threading

import pytest

from xdrive.cot import HistoryBuffer, Observation, PromptBundle, StageFailure, run_pipeline
from xdrive.parse import parse_stage
from xdrive.policies import RemoteConfig, RemotePolicy
from xdrive.remote import (
    CANNED,
    EchoServer,
    RemoteClient,
    RemoteConnectionError,
    RemoteProtocolError,
    RemoteTimeout,
    decode_response,
    encode_request,
    remote_call,
    serve_stdio,
)
from xdrive.reports import STAGES, ObjectReport
from xdrive.world import NavigationCommand

BUNDLE = PromptBundle("system", "scene", "nav", "stage")
OBS = Observation(0.0, 5.0, NavigationCommand(0.0, "follow"), image_refs=("aGVsbG8=",))


@pytest.fixture
def echo():
    srv = EchoServer().start()
    yield srv
    srv.stop()


class _Garbage(socketserver.StreamRequestHandler):
    def handle(self):
        for _ in self.rfile:
            self.wfile.write(b"this is not json\n")


@pytest.fixture
def garbage():
    srv = socketserver.ThreadingTCPServer(("127.0.0.1", 0), _Garbage)
    srv.daemon_threads = True
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield "127.0.0.1:%d" % srv.server_address[1]
    srv.shutdown()
    srv.server_close()


def test_canned_texts_parse():
    for stage in STAGES:
        parse_stage(stage, CANNED[stage])
    assert parse_stage("objects", CANNED["objects"]) == ObjectReport()


def test_echo_round_trip(echo):
    text = remote_call(RemoteConfig(echo.endpoint), BUNDLE, stage="objects")
    assert parse_stage("objects", text) == ObjectReport()


def test_request_encoding():
    line = encode_request("s1", "light", "prompt ü", ["aW1n"], ["h1"])
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    msg = json.loads(line)
    assert msg == {"v": 1, "session": "s1", "stage": "light", "prompt": "prompt ü", "images": ["aW1n"], "history": ["h1"]}


def test_response_decoding():
    assert decode_response(b'{"v":1,"stage":"sign","text":"signs 0"}', "sign") == "signs 0"
    for bad in (b"nope", b'{"v":2,"stage":"sign","text":""}', b'{"v":1,"stage":"lane","text":""}', b'{"v":1,"stage":"sign"}'):
        with pytest.raises(RemoteProtocolError) as err:
            decode_response(bad, "sign")
        assert err.value.raw == bad.decode()


def test_slow_server_times_out_after_one_retry():
    srv = EchoServer(delay_ms=300).start()
    client = RemoteClient(RemoteConfig(srv.endpoint, timeout_ms=100))
    try:
        with pytest.raises(RemoteTimeout):
            client.call("s", "objects", BUNDLE)
        assert client.timeouts == 2
    finally:
        client.close()
        srv.stop()


def test_first_answer_late_then_recovers():
    srv = EchoServer(delay_ms=300, delay_first=1).start()
    client = RemoteClient(RemoteConfig(srv.endpoint, timeout_ms=150))
    try:
        assert client.call("s", "light", BUNDLE) == CANNED["light"]
        assert client.timeouts == 1
    finally:
        client.close()
        srv.stop()


def test_malformed_response_keeps_raw_text(garbage):
    with pytest.raises(RemoteProtocolError) as err:
        remote_call(RemoteConfig(garbage), BUNDLE)
    assert err.value.raw == "this is not json"


def test_connection_refused():
    with pytest.raises(RemoteConnectionError):
        remote_call(RemoteConfig("127.0.0.1:1", timeout_ms=200), BUNDLE)


def test_bad_endpoint_string():
    with pytest.raises(RemoteConnectionError):
        remote_call(RemoteConfig("no-port-here"), BUNDLE)


def test_stdio_server_answers_each_line():
    reqs = b"".join(encode_request("s", st, "p", [], []) for st in STAGES)
    out = io.BytesIO()
    serve_stdio(stdin=io.BytesIO(reqs + b"\n"), stdout=out)
    lines = out.getvalue().splitlines()
    assert [decode_response(l, st) for l, st in zip(lines, STAGES)] == [CANNED[st] for st in STAGES]


def test_exec_endpoint():
    cmd = f"exec:{sys.executable} -m xdrive.remote --stdio"
    assert remote_call(RemoteConfig(cmd), BUNDLE, stage="lane") == CANNED["lane"]


def test_remote_policy_runs_full_pipeline(echo):
    policy = RemotePolicy(RemoteConfig(echo.endpoint), "session-1")
    try:
        res = run_pipeline(policy, OBS)
    finally:
        policy.close()
    assert res.decision.template_id == "default_driving"
    assert len(res.waypoints.points) == 6


@pytest.mark.parametrize(
    "endpoint_kind, kind",
    [("refused", "connection"), ("garbage", "protocol")],
)
def test_remote_policy_failure_kinds(endpoint_kind, kind, request):
    endpoint = "127.0.0.1:1" if endpoint_kind == "refused" else request.getfixturevalue("garbage")
    policy = RemotePolicy(RemoteConfig(endpoint, timeout_ms=300))
    try:
        with pytest.raises(StageFailure) as err:
            run_pipeline(policy, OBS)
    finally:
        policy.close()
    assert err.value.kind == kind and err.value.stage == "objects"


def test_remote_policy_timeout_kind():
    srv = EchoServer(delay_ms=300).start()
    policy = RemotePolicy(RemoteConfig(srv.endpoint, timeout_ms=100))
    try:
        with pytest.raises(StageFailure) as err:
            run_pipeline(policy, OBS)
        assert err.value.kind == "timeout" and policy.timeouts == 2
    finally:
        policy.close()
        srv.stop()


def test_history_is_sent(echo):
    seen = []
    original = echo.responder.answer

    def spy(line):
        seen.append(json.loads(line))
        return original(line)

    echo.responder.answer = spy
    obs = Observation(0.0, 5.0, NavigationCommand(0.0, "follow"), image_refs=("x",), history=HistoryBuffer(("past",)))
    policy = RemotePolicy(RemoteConfig(echo.endpoint), "sess")
    try:
        run_pipeline(policy, obs)
    finally:
        policy.close()
    assert [m["stage"] for m in seen] == list(STAGES)
    assert all(m["history"] == ["past"] and m["images"] == ["x"] and m["session"] == "sess" for m in seen)
