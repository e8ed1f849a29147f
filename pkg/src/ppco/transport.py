"""Length-prefixed framing over two interchangeable transports.

A frame is a 4-byte big-endian unsigned length followed by that many payload
bytes. Both transports carry request/reply exchanges: the client writes one
frame and reads exactly one reply frame.

``LoopbackNetwork`` runs entirely in-process and synchronously (the handler is
invoked on the caller's stack), which keeps multi-node tests deterministic.
``TcpTransport`` uses real sockets with one thread per inbound connection.
"""

from __future__ import annotations

import io
import socket
import socketserver
import struct
import threading
from collections.abc import Callable

from ppco.errors import BindError, FrameTooLarge, TransportClosed

MAX_FRAME = 16 * 1024 * 1024
_HEADER = struct.Struct("!I")

Handler = Callable[[bytes], bytes]


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"local error: frame of {len(payload)} bytes exceeds the {MAX_FRAME}-byte limit")
    return _HEADER.pack(len(payload)) + payload


def read_frame(read: Callable[[int], bytes]) -> bytes | None:
    """Read one frame using ``read(n)`` (which may return short reads).

    Returns ``None`` on a clean end of stream before a header.
    """
    header = _read_exact(read, _HEADER.size, allow_eof=True)
    if header is None:
        return None
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"peer announced a {length}-byte frame, limit is {MAX_FRAME}")
    return _read_exact(read, length)


def _read_exact(read, n, allow_eof=False):
    buf = bytearray()
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            if allow_eof and not buf:
                return None
            raise TransportClosed(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {endpoint!r} is not host:port")
    return host, int(port)


# -- loopback ---------------------------------------------------------------

class LoopbackNetwork:
    def __init__(self):
        self._handlers: dict[str, Handler] = {}
        self._lock = threading.Lock()

    def listen(self, endpoint: str, handler: Handler) -> LoopbackListener:
        with self._lock:
            if endpoint in self._handlers:
                raise BindError(f"{endpoint} is already bound")
            self._handlers[endpoint] = handler
        return LoopbackListener(self, endpoint)

    def connect(self, endpoint: str) -> LoopbackConnection:
        if endpoint not in self._handlers:
            raise TransportClosed(f"nothing listening on {endpoint}")
        return LoopbackConnection(self, endpoint)

    def _unbind(self, endpoint):
        with self._lock:
            self._handlers.pop(endpoint, None)


class LoopbackListener:
    def __init__(self, network: LoopbackNetwork, endpoint: str):
        self.network = network
        self.endpoint = endpoint

    def close(self):
        self.network._unbind(self.endpoint)


class LoopbackConnection:
    def __init__(self, network: LoopbackNetwork, endpoint: str):
        self.network = network
        self.endpoint = endpoint
        self.closed = False

    def request(self, payload: bytes) -> bytes:
        try:
            wire = frame(payload)
        except FrameTooLarge:
            self.close()
            raise
        return self.exchange_raw(wire)

    def exchange_raw(self, wire: bytes) -> bytes:
        """Push raw bytes at the server end and return the reply payload."""
        if self.closed:
            raise TransportClosed(f"connection to {self.endpoint} is closed")
        handler = self.network._handlers.get(self.endpoint)
        if handler is None:
            self.close()
            raise TransportClosed(f"peer at {self.endpoint} went away")
        try:
            payload = read_frame(io.BytesIO(wire).read)
        except TransportClosed:
            self.close()
            raise
        if payload is None:
            self.close()
            raise TransportClosed("empty write")
        reply = frame(handler(payload))
        return read_frame(io.BytesIO(reply).read)

    def close(self):
        self.closed = True


# -- sockets ----------------------------------------------------------------

class _ServerHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        handler = self.server.frame_handler
        while True:
            try:
                payload = read_frame(sock.recv)
            except (TransportClosed, OSError):
                return
            if payload is None:
                return
            try:
                sock.sendall(frame(handler(payload)))
            except (FrameTooLarge, OSError):
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class TcpListener:
    def __init__(self, server: _Server):
        self.server = server
        self.thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05},
                                       name="ppco-listener", daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address[:2]
        return f"{host}:{port}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


class TcpConnection:
    def __init__(self, sock: socket.socket, endpoint: str):
        self.sock = sock
        self.endpoint = endpoint
        self.closed = False
        self._lock = threading.Lock()

    def request(self, payload: bytes) -> bytes:
        try:
            wire = frame(payload)
        except FrameTooLarge:
            self.close()
            raise
        return self.exchange_raw(wire)

    def exchange_raw(self, wire: bytes) -> bytes:
        with self._lock:
            if self.closed:
                raise TransportClosed(f"connection to {self.endpoint} is closed")
            try:
                self.sock.sendall(wire)
                reply = read_frame(self.sock.recv)
            except OSError as exc:
                self.close()
                raise TransportClosed(f"connection to {self.endpoint} failed: {exc}") from exc
            except TransportClosed:
                self.close()
                raise
            if reply is None:
                self.close()
                raise TransportClosed(f"{self.endpoint} closed the connection")
            return reply

    def close(self):
        if not self.closed:
            self.closed = True
            try:
                self.sock.close()
            except OSError:
                pass


class TcpTransport:
    def __init__(self, timeout: float = 10.0):
        self.timeout = timeout

    def listen(self, endpoint: str, handler: Handler) -> TcpListener:
        host, port = parse_endpoint(endpoint)
        try:
            server = _Server((host, port), _ServerHandler)
        except OSError as exc:
            raise BindError(f"cannot bind {endpoint}: {exc}") from exc
        server.frame_handler = handler
        return TcpListener(server)

    def connect(self, endpoint: str) -> TcpConnection:
        host, port = parse_endpoint(endpoint)
        try:
            sock = socket.create_connection((host, port), timeout=self.timeout)
        except OSError as exc:
            raise TransportClosed(f"cannot reach {endpoint}: {exc}") from exc
        return TcpConnection(sock, endpoint)
