"""Newline-delimited JSON bridge to an external model, plus a canned test server.

Request line::

    {"v":1,"session":str,"stage":str,"prompt":str,"images":[base64,...],"history":[str,...]}

Response line::

    {"v":1,"stage":str,"text":str}

Endpoints are ``host:port`` for TCP or ``exec:<command>`` for a child process
speaking the same protocol on stdin/stdout.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import socketserver
import subprocess
import sys
import threading
import time
from typing import Optional, Sequence

from .cot import PromptBundle
from .parse import serialize_stage
from .reports import TEMPLATES, Decision, LaneReport, LightReport, ObjectReport, SignReport, WaypointPlan

PROTOCOL_VERSION = 1


class RemoteError(Exception):
    pass


class RemoteTimeout(RemoteError):
    pass


class RemoteConnectionError(RemoteError):
    pass


class RemoteProtocolError(RemoteError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class _Channel:
    """Line-oriented byte channel over a file descriptor with read deadlines."""

    def __init__(self):
        self._buf = b""

    def _fd(self) -> int:
        raise NotImplementedError

    def _read(self) -> bytes:
        raise NotImplementedError

    def send(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            left = deadline - time.monotonic()
            if left <= 0:
                raise RemoteTimeout(f"no response within {timeout * 1000:.0f} ms")
            ready, _, _ = select.select([self._fd()], [], [], left)
            if not ready:
                continue
            chunk = self._read()
            if not chunk:
                raise RemoteConnectionError("endpoint closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line


class _SocketChannel(_Channel):
    def __init__(self, host: str, port: int, timeout: float):
        super().__init__()
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout:
            raise RemoteTimeout(f"connect to {host}:{port} timed out") from None
        except OSError as exc:
            raise RemoteConnectionError(f"cannot connect to {host}:{port}: {exc.strerror or exc}") from None
        self.sock.settimeout(None)

    def _fd(self):
        return self.sock.fileno()

    def _read(self):
        try:
            return self.sock.recv(65536)
        except OSError as exc:
            raise RemoteConnectionError(str(exc)) from None

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise RemoteConnectionError(f"send failed: {exc}") from None

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class _ProcessChannel(_Channel):
    def __init__(self, command: str):
        super().__init__()
        try:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as exc:
            raise RemoteConnectionError(f"cannot start {command!r}: {exc}") from None

    def _fd(self):
        return self.proc.stdout.fileno()

    def _read(self):
        return os.read(self._fd(), 65536)

    def send(self, data):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise RemoteConnectionError(f"child process gone: {exc}") from None

    def close(self):
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()
        for f in (self.proc.stdin, self.proc.stdout):
            try:
                f.close()
            except OSError:
                pass


def open_channel(endpoint: str, timeout: float) -> _Channel:
    if endpoint.startswith("exec:"):
        return _ProcessChannel(endpoint[5:])
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise RemoteConnectionError(f"bad endpoint {endpoint!r}, expected host:port or exec:<command>")
    return _SocketChannel(host or "127.0.0.1", int(port), timeout)


def encode_request(session: str, stage: str, prompt: str, images: Sequence[str], history: Sequence[str]) -> bytes:
    msg = {
        "v": PROTOCOL_VERSION,
        "session": session,
        "stage": stage,
        "prompt": prompt,
        "images": list(images),
        "history": list(history),
    }
    return (json.dumps(msg, ensure_ascii=False, separators=(",", ":")) + "\n").encode()


def decode_response(line: bytes, stage: str) -> str:
    raw = line.decode("utf-8", errors="replace")
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError:
        raise RemoteProtocolError("response is not JSON", raw) from None
    if not isinstance(msg, dict) or msg.get("v") != PROTOCOL_VERSION:
        raise RemoteProtocolError("response has no protocol version 1", raw)
    if msg.get("stage") != stage:
        raise RemoteProtocolError(f"response for stage {msg.get('stage')!r}, expected {stage!r}", raw)
    text = msg.get("text")
    if not isinstance(text, str):
        raise RemoteProtocolError("response carries no text", raw)
    return text


class RemoteClient:
    """One connection to one endpoint; reconnects after a timeout."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._chan: Optional[_Channel] = None
        self.timeouts = 0

    def close(self) -> None:
        if self._chan is not None:
            self._chan.close()
            self._chan = None

    def call(self, session: str, stage: str, bundle: PromptBundle, images=(), history=()) -> str:
        timeout = self.cfg.timeout_ms / 1000.0
        req = encode_request(session, stage, bundle.text(), images, history)
        attempts = 1 + self.cfg.max_retries
        for _ in range(attempts):
            if self._chan is None:
                self._chan = open_channel(self.cfg.endpoint, timeout)
            try:
                self._chan.send(req)
                line = self._chan.recv_line(timeout)
            except RemoteTimeout:
                self.timeouts += 1
                # the late answer would desynchronize the stream, so start fresh
                self.close()
                continue
            except RemoteConnectionError:
                self.close()
                raise
            return decode_response(line, stage)
        raise RemoteTimeout(f"stage {stage}: no response within {self.cfg.timeout_ms} ms after {attempts} attempts")


def remote_call(cfg, bundle: PromptBundle, attachments=(), stage: str = "objects", history=(), session: str = "") -> str:
    """Single round trip on a fresh connection."""
    client = RemoteClient(cfg)
    try:
        return client.call(session, stage, bundle, attachments, history)
    finally:
        client.close()


# -- canned test server ----------------------------------------------------------------

ECHO_SPEED = 8.0
CANNED = {
    "objects": serialize_stage("objects", ObjectReport()),
    "light": serialize_stage("light", LightReport()),
    "sign": serialize_stage("sign", SignReport()),
    "lane": serialize_stage("lane", LaneReport("L1", "solid", "solid", False, False)),
    "decision": serialize_stage(
        "decision", Decision("default_driving", TEMPLATES["default_driving"], "canned response", ECHO_SPEED)
    ),
    "waypoints": serialize_stage(
        "waypoints", WaypointPlan(tuple((ECHO_SPEED * 0.5 * (k + 1), 0.0) for k in range(6)))
    ),
}


class EchoResponder:
    """Answers every stage with fixed text; optionally sleeps before the first few answers."""

    def __init__(self, delay_ms: int = 0, delay_first: Optional[int] = None):
        self.delay_ms = delay_ms
        self.delay_first = delay_first
        self.count = 0
        self._lock = threading.Lock()

    def answer(self, line: bytes) -> bytes:
        with self._lock:
            self.count += 1
            n = self.count
        if self.delay_ms and (self.delay_first is None or n <= self.delay_first):
            time.sleep(self.delay_ms / 1000.0)
        try:
            req = json.loads(line)
            stage = req["stage"]
        except (ValueError, KeyError, TypeError):
            return b'{"v":1,"stage":"","error":"bad request"}\n'
        msg = {"v": PROTOCOL_VERSION, "stage": stage, "text": CANNED.get(stage, "")}
        return (json.dumps(msg, separators=(",", ":")) + "\n").encode()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            reply = self.server.responder.answer(line)
            try:
                self.wfile.write(reply)
                self.wfile.flush()
            except OSError:
                return


class EchoServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, host: str = "127.0.0.1", port: int = 0, delay_ms: int = 0, delay_first: Optional[int] = None):
        super().__init__((host, port), _Handler)
        self.responder = EchoResponder(delay_ms, delay_first)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "EchoServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve_stdio(delay_ms: int = 0, delay_first: Optional[int] = None, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    responder = EchoResponder(delay_ms, delay_first)
    for line in stdin:
        if line.strip():
            stdout.write(responder.answer(line))
            stdout.flush()


if __name__ == "__main__":
    import argparse

    ap = argparse.ArgumentParser(description="canned-response test server")
    ap.add_argument("--stdio", action="store_true")
    ap.add_argument("--listen", default="127.0.0.1:0")
    ap.add_argument("--delay-ms", type=int, default=0)
    ap.add_argument("--delay-first", type=int, default=None)
    args = ap.parse_args()
    if args.stdio:
        serve_stdio(args.delay_ms, args.delay_first)
    else:
        h, _, p = args.listen.rpartition(":")
        srv = EchoServer(h or "127.0.0.1", int(p), args.delay_ms, args.delay_first)
        print(srv.endpoint, flush=True)
        srv.serve_forever()
