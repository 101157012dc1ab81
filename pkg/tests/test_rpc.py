from __future__ import annotations

import http.client
import json
import socket

import pytest

from consensustest.driver import ERRORED, run_iteration, run_suite
from consensustest.errors import BindError
from consensustest.model import Message
from consensustest.protocols import pbft_automaton, raft_automaton
from consensustest.rpc import (
    BIND_ENV, Directive, HarnessServer, StubCluster, bind_address, message_from_wire, message_to_wire,
)
from consensustest.testcases import REGISTRY


def post(addr, path, body):
    host, _, port = addr.rpartition(":")
    conn = http.client.HTTPConnection(host, int(port), timeout=5)
    data = body if isinstance(body, bytes) else json.dumps(body).encode()
    conn.request("POST", path, data, {"Content-Type": "application/json"})
    resp = conn.getresponse()
    out = resp.status, json.loads(resp.read() or b"{}")
    conn.close()
    return out


@pytest.fixture
def harness():
    server = HarnessServer().start()
    yield server
    server.stop()


def test_bind_address(monkeypatch):
    monkeypatch.delenv(BIND_ENV, raising=False)
    assert bind_address() == ("127.0.0.1", 0)
    assert bind_address("0.0.0.0:8123") == ("0.0.0.0", 8123)
    monkeypatch.setenv(BIND_ENV, "127.0.0.1:9001")
    assert bind_address() == ("127.0.0.1", 9001)
    assert bind_address(":77") == ("127.0.0.1", 77)


def test_directive_validation():
    assert Directive("restart", 2).target == 2
    with pytest.raises(ValueError):
        Directive("explode", 0)


def test_wire_round_trip():
    m = Message(4, 1, 2, "Prepare", b'{"view":0,"request":null}')
    back = message_from_wire(json.loads(json.dumps(message_to_wire(m))), 4)
    assert back == m
    assert message_to_wire(m, "1:0")["id"] == "1:0"


def test_harness_registration_and_ingress(harness):
    assert post(harness.address, "/replica", {"id": 0, "addr": "127.0.0.1:1"}) == (200, {"ok": True})
    status, _ = post(harness.address, "/event", {"replica": 0, "type": "Tick", "params": {"seq": "0"}})
    assert status == 200
    status, _ = post(harness.address, "/message",
                     {"id": "0:0", "from": 0, "to": 1, "type": "Ping", "data": "e30="})
    assert status == 200
    items = harness.drain()
    assert [it[0] for it in items] == ["event", "message"]
    assert harness.drain() == []
    harness.wait_for(1, timeout=1)


def test_harness_rejects_malformed_requests(harness):
    post(harness.address, "/replica", {"id": 0, "addr": "127.0.0.1:1"})
    status, body = post(harness.address, "/event", {"replica": 9, "type": "Tick", "params": {"seq": "0"}})
    assert status == 400 and body["error"] == "UnknownReplica"
    status, body = post(harness.address, "/event", {"replica": 0, "type": "Tick", "params": {"seq": 0}})
    assert status == 400 and body["error"] == "BadRequest"
    status, body = post(harness.address, "/message", {"id": "x", "from": 0, "to": 1, "type": "P", "data": "%%"})
    assert status == 400 and body["reason"]
    status, _ = post(harness.address, "/event", b"not json")
    assert status == 400
    status, _ = post(harness.address, "/event", b"[1, 2]")
    assert status == 400
    status, _ = post(harness.address, "/nowhere", {})
    assert status == 404
    assert harness.drain() == []


def test_bind_error_on_occupied_port():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(1)
    try:
        with pytest.raises(BindError):
            HarnessServer(f"127.0.0.1:{sock.getsockname()[1]}")
    finally:
        sock.close()


def test_rpc_matches_in_process_with_three_prepare_drops():
    tc = REGISTRY["pbft"]["drop-prepare-three"](4, 1)
    local = run_suite(tc, pbft_automaton(4, 1), 6, base_seed=20)
    with StubCluster(pbft_automaton(4, 1)) as cluster:
        remote = run_suite(tc, cluster.backend, 6, base_seed=20)
    assert remote.dumps() == local.dumps()


def test_rpc_raft_with_timers_matches_in_process():
    tc = REGISTRY["raft"]["drop-all-votes"](5, 2)
    local = run_iteration(tc, raft_automaton(5), 3)
    with StubCluster(raft_automaton(5)) as cluster:
        remote = run_iteration(tc, cluster.backend, 3)
    assert [e.key for e in remote.trace.events] == [e.key for e in local.trace.events]
    assert remote.outcome == local.outcome


def test_restart_resets_stub_state():
    with StubCluster(pbft_automaton(4, 1)) as cluster:
        first = [e.key for e in cluster.backend.reset()]
        second = [e.key for e in cluster.backend.reset()]
        assert first == second and first
        assert cluster.server.drain() == []


def test_each_wire_event_reaches_the_driver_once():
    tc = REGISTRY["pbft"]["no-filters"](4, 1)
    with StubCluster(pbft_automaton(4, 1)) as cluster:
        out = run_iteration(tc, cluster.backend, 0)
        keys = [e.key for e in out.trace.events]
        assert len(keys) == len(set(keys))
        assert out.consumed == out.events and out.complete


def test_unreachable_replica_errors_the_iteration():
    tc = REGISTRY["pbft"]["no-filters"](4, 1)
    with StubCluster(pbft_automaton(4, 1)) as cluster:
        cluster.stubs[2].stop()
        out = run_iteration(tc, cluster.backend, 0)
        cluster.stubs = [s for i, s in enumerate(cluster.stubs) if i != 2]
    assert out.outcome == ERRORED and "UnreachableReplica" in out.error
