"""Out-of-process replicas over HTTP.

Harness side (``HarnessServer``), JSON bodies, all ``POST``:

``/replica``  ``{"id": int, "addr": "host:port"}``
    register a replica; later dispatches go to ``addr``.
``/event``    ``{"replica": int, "type": str, "params": {str: str}}``
    ``type`` is ``MessageSend``, ``MessageReceive`` or an internal event
    name. ``params["seq"]`` is the replica-local sequence number; sends
    and receives carry ``params["message_id"]``; internal parameters are
    JSON-encoded strings.
``/message``  ``{"id": str, "from": int, "to": int, "type": str, "data": base64}``
    a message submitted by its sender, after its ``MessageSend`` event.

Replica side (``StubReplica``):

``/message``   a ``WireMessage`` to consume
``/directive`` ``{"action": "start" | "stop" | "restart", "target": int}``

Both replica endpoints answer ``{"final": bool, "timer": int | null}`` once
the replica has consumed its input, flushed its internal steps and posted
the resulting events and messages. Ingress on the harness side is
concurrent, but everything funnels through one queue that the driver
drains in arrival order. The bind address comes from ``--bind`` or the
``CONSENSUSTEST_BIND`` environment variable (``host:port``, port 0 picks a
free one).
"""
from __future__ import annotations

import argparse
import base64
import http.client
import json
import os
import queue
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import BindError, UnknownReplica, UnreachableReplica
from .model import RECEIVE, SEND, TIMEOUT, DEFAULT_CODEC, Event, Message, ReplicaAutomaton, internal

BIND_ENV = "CONSENSUSTEST_BIND"
DEFAULT_BIND = "127.0.0.1:0"


def bind_address(value: str | None = None) -> tuple[str, int]:
    raw = value or os.environ.get(BIND_ENV) or DEFAULT_BIND
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)


@dataclass(frozen=True)
class Directive:
    action: str
    target: int

    def __post_init__(self):
        if self.action not in ("start", "stop", "restart"):
            raise ValueError(f"unknown directive {self.action!r}")


def message_to_wire(m: Message, wire_id: str | None = None) -> dict:
    return {"id": wire_id if wire_id is not None else str(m.uid), "from": m.sender, "to": m.to,
            "type": m.mtype, "data": base64.b64encode(m.data).decode()}


def message_from_wire(body: dict, uid: int, fictitious: bool = False) -> Message:
    return Message(uid, int(body["from"]), int(body["to"]), str(body["type"]),
                   base64.b64decode(body["data"]), fictitious)


class _Client:
    """One keep-alive HTTP connection per target address."""

    def __init__(self, addr: str, timeout: float = 10.0):
        host, _, port = addr.rpartition(":")
        self.addr = addr
        self.conn = http.client.HTTPConnection(host, int(port), timeout=timeout)
        self.lock = threading.Lock()

    def post(self, path: str, body: dict) -> dict:
        data = json.dumps(body).encode()
        with self.lock:
            try:
                self.conn.request("POST", path, data, {"Content-Type": "application/json"})
                resp = self.conn.getresponse()
                payload = resp.read()
            except (http.client.HTTPException, OSError) as exc:
                # one attempt only; the next call reconnects from scratch
                self.conn.close()
                raise UnreachableReplica(f"{self.addr}{path}: {exc}") from exc
        if resp.status != 200:
            raise UnreachableReplica(f"{self.addr}{path}: HTTP {resp.status} {payload[:200]!r}")
        return json.loads(payload or b"{}")

    def close(self) -> None:
        self.conn.close()


class _JsonHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes

    def log_message(self, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
            out = self.server.route(self.path, body)
        except UnknownReplica as exc:
            self._reply(400, {"error": "UnknownReplica", "reason": str(exc)})
        except (KeyError, ValueError, TypeError) as exc:
            self._reply(400, {"error": "BadRequest", "reason": f"{type(exc).__name__}: {exc}"})
        except LookupError as exc:
            self._reply(404, {"error": "NotFound", "reason": str(exc)})
        else:
            self._reply(200, out)


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, router):
        self.route = router
        try:
            super().__init__(address, _JsonHandler)
        except OSError as exc:
            raise BindError(f"cannot bind {address}: {exc}") from exc


class HarnessServer:
    """Registry plus ingress queue for events and messages."""

    def __init__(self, bind: str | None = None):
        self.replicas: dict[int, str] = {}
        self.ingress: queue.Queue = queue.Queue()
        self._registered = threading.Condition()
        self._server = _Server(bind_address(bind), self._route)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "HarnessServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def _route(self, path: str, body: dict) -> dict:
        if path == "/replica":
            rid, addr = int(body["id"]), str(body["addr"])
            with self._registered:
                self.replicas[rid] = addr
                self._registered.notify_all()
            return {"ok": True}
        if path == "/event":
            rid = int(body["replica"])
            if rid not in self.replicas:
                raise UnknownReplica(f"replica {rid} is not registered")
            params = body.get("params", {})
            if not isinstance(params, dict) or not all(isinstance(v, str) for v in params.values()):
                raise ValueError("params must be a string map")
            self.ingress.put(("event", rid, str(body["type"]), dict(params)))
            return {"ok": True}
        if path == "/message":
            rid = int(body["from"])
            if rid not in self.replicas:
                raise UnknownReplica(f"replica {rid} is not registered")
            base64.b64decode(body["data"], validate=True)
            self.ingress.put(("message", rid, body))
            return {"ok": True}
        raise LookupError(path)

    def wait_for(self, n: int, timeout: float = 30.0) -> None:
        with self._registered:
            if not self._registered.wait_for(lambda: len(self.replicas) >= n, timeout):
                raise UnreachableReplica(f"only {len(self.replicas)}/{n} replicas registered")

    def drain(self) -> list:
        out = []
        while True:
            try:
                out.append(self.ingress.get_nowait())
            except queue.Empty:
                return out


class RpcBackend:
    """Driver backend whose replicas live behind HTTP endpoints."""

    def __init__(self, server: HarnessServer, n: int, codec=DEFAULT_CODEC):
        self.server = server
        self.n = n
        self.codec = codec
        self.next_uid = 0
        self.status: dict[int, dict] = {}
        self._clients: dict[int, _Client] = {}
        self._wire_to_uid: dict[tuple, int] = {}
        self._messages: dict[int, Message] = {}

    def _client(self, r: int) -> _Client:
        addr = self.server.replicas.get(r)
        if addr is None:
            raise UnreachableReplica(f"replica {r} is not registered")
        c = self._clients.get(r)
        if c is None or c.addr != addr:
            c = self._clients[r] = _Client(addr)
        return c

    def dispatch(self, target: int, item) -> dict:
        if isinstance(item, Directive):
            ack = self._client(target).post("/directive", {"action": item.action, "target": item.target})
        else:
            ack = self._client(target).post("/message", message_to_wire(item))
        self.status[target] = ack
        return ack

    def _collect(self) -> list[Event]:
        items = self.server.drain()
        wires = {(it[1], str(it[2]["id"])): it[2] for it in items if it[0] == "message"}
        events = []
        for kind, rid, *rest in items:
            if kind != "event":
                continue
            etype, params = rest
            seq = int(params["seq"])
            if etype == "MessageSend":
                body = wires[(rid, params["message_id"])]
                m = message_from_wire(body, self.next_uid)
                self.next_uid += 1
                self._messages[m.uid] = m
                events.append(Event(rid, SEND, seq, message=m))
            elif etype == "MessageReceive":
                events.append(Event(rid, RECEIVE, seq, message=self._messages[int(params["message_id"])]))
            else:
                values = {k: json.loads(v) for k, v in params.items() if k != "seq"}
                events.append(Event(rid, "internal", seq, value=internal(etype, **values)))
        return events

    # -- backend interface -------------------------------------------------

    def reset(self) -> list[Event]:
        self.server.drain()
        self.next_uid = 0
        self._messages.clear()
        events = []
        for r in range(self.n):
            self.dispatch(r, Directive("restart", r))
            events += self._collect()
        return events

    def mint(self, sender: int, to: int, mtype: str, payload: dict, fictitious: bool = True) -> Message:
        m = Message(self.next_uid, sender, to, mtype, self.codec.encode(payload or {}), fictitious)
        self.next_uid += 1
        self._messages[m.uid] = m
        return m

    def deliver(self, m: Message) -> list[Event]:
        self._messages.setdefault(m.uid, m)
        self.dispatch(m.to, m)
        return self._collect()

    def is_final(self, r: int) -> bool:
        return bool(self.status.get(r, {}).get("final"))

    def timer(self) -> int | None:
        armed = [(s["timer"], r) for r, s in self.status.items()
                 if not s.get("final") and s.get("timer") is not None]
        return min(armed)[1] if armed else None

    def complete(self) -> bool:
        return len(self.status) == self.n and all(s.get("final") for s in self.status.values())

    def close(self) -> None:
        for c in self._clients.values():
            c.close()


class StubReplica:
    """Wraps one replica automaton behind the replica-side endpoints."""

    def __init__(self, automaton: ReplicaAutomaton, harness: str, bind: str = "127.0.0.1:0"):
        self.automaton = automaton
        self.rid = automaton.replica
        self.harness = _Client(harness)
        self.lock = threading.Lock()
        self.running = True
        self._reset()
        self._server = _Server(bind_address(bind), self._route)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def _reset(self) -> None:
        self.state = self.automaton.initial_state()
        self.seq = 0
        self.sent = 0
        self.inbox: list[Message] = []

    def start(self) -> "StubReplica":
        self._thread.start()
        self.harness.post("/replica", {"id": self.rid, "addr": self.address})
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self.harness.close()

    def _status(self) -> dict:
        a, s = self.automaton, self.state
        final = a.is_final(s)
        return {"final": final, "timer": None if final or not self.running else a.timeout_rank(s)}

    def _event(self, etype: str, **params) -> None:
        params["seq"] = str(self.seq)
        self.seq += 1
        self.harness.post("/event", {"replica": self.rid, "type": etype, "params": params})

    def _flush(self) -> None:
        a = self.automaton
        while self.running and not a.is_final(self.state):
            out = a.step(self.state, None)
            if out is None:
                return
            self.state, emission = out
            if hasattr(emission, "to"):
                wire_id = f"{self.rid}:{self.sent}"
                self.sent += 1
                data = a.codec.encode(emission.payload)
                self._event("MessageSend", message_id=wire_id)
                self.harness.post("/message", {"id": wire_id, "from": self.rid, "to": emission.to,
                                               "type": emission.mtype, "data": base64.b64encode(data).decode()})
            else:
                params = {k: json.dumps(v) for k, v in emission.value.params}
                self._event(emission.value.name, **params)

    def _consume(self) -> None:
        a = self.automaton
        while self.running and self.inbox and not a.is_final(self.state):
            out = a.step(self.state, self.inbox[0])
            if out is None:
                return
            m = self.inbox.pop(0)
            self.state = out[0]
            self._event("MessageReceive", message_id=str(m.uid))
            self._flush()

    def _route(self, path: str, body: dict) -> dict:
        with self.lock:
            if path == "/directive":
                d = Directive(str(body["action"]), int(body.get("target", self.rid)))
                if d.action == "restart":
                    self._reset()
                    self.running = True
                    self._flush()
                elif d.action == "stop":
                    self.running = False
                else:
                    self.running = True
                    self._flush()
                    self._consume()
                return self._status()
            if path == "/message":
                m = message_from_wire(body, int(body["id"]), body.get("type") == TIMEOUT)
                self.inbox.append(m)
                self._consume()
                return self._status()
        raise LookupError(path)


class StubCluster:
    """Harness server plus ``n`` stub replicas, in threads or child processes."""

    def __init__(self, automata, processes: bool = False, bind: str | None = None,
                 protocol: str | None = None, f: int = 1):
        self.server = HarnessServer(bind).start()
        self.n = len(automata)
        self.stubs: list[StubReplica] = []
        self.procs = []
        if processes:
            import subprocess
            import sys
            for r in range(self.n):
                cmd = [sys.executable, "-m", "consensustest.rpc", "stub", "--protocol", protocol,
                       "--n", str(self.n), "--f", str(f), "--id", str(r), "--harness", self.server.address]
                self.procs.append(subprocess.Popen(cmd))
        else:
            self.stubs = [StubReplica(a, self.server.address).start() for a in automata]
        self.server.wait_for(self.n)
        self.backend = RpcBackend(self.server, self.n, getattr(automata[0], "codec", DEFAULT_CODEC))

    def close(self) -> None:
        self.backend.close()
        for s in self.stubs:
            s.stop()
        for p in self.procs:
            p.terminate()
            p.wait(timeout=10)
        self.server.stop()

    def __enter__(self) -> "StubCluster":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve(bind: str | None = None) -> HarnessServer:
    return HarnessServer(bind).start()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m consensustest.rpc")
    sub = ap.add_subparsers(dest="cmd", required=True)
    st = sub.add_parser("stub", help="run one stub replica until killed")
    st.add_argument("--protocol", choices=("pbft", "raft"), required=True)
    st.add_argument("--n", type=int, default=4)
    st.add_argument("--f", type=int, default=1)
    st.add_argument("--id", type=int, required=True)
    st.add_argument("--harness", required=True, help="host:port of the harness server")
    st.add_argument("--bind", default=None)
    args = ap.parse_args(argv)
    from .testcases import automata_for
    automaton = automata_for(args.protocol, args.n, args.f)[args.id]
    stub = StubReplica(automaton, args.harness, args.bind or "127.0.0.1:0").start()
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        stub.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
