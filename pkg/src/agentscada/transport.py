"""TCP transport carrying ACL frames between containers.

Connections are persistent and strictly request/response: each frame sent
by a client is answered by exactly one frame from the server, so ordering
per connection is implicit and per-(sender, receiver) FIFO holds across
hosts. Container control traffic (register/heartbeat/deliver) rides the
same frame format with ontology "platform-mgmt".
"""

from __future__ import annotations

import errno
import logging
import socket
import struct
import threading
from typing import Callable, Optional

from .acl import MAX_FRAME_BYTES, AclMessage, DecodeError, decode_frame, encode_frame

logger = logging.getLogger(__name__)

_LEN = struct.Struct(">I")

CONNECT_TIMEOUT_S = 3.0
REQUEST_TIMEOUT_S = 15.0


class TransportError(Exception):
    pass


class AddressInUse(TransportError):
    pass


class PeerUnreachable(TransportError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on clean EOF before any byte."""
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if remaining == n:
                return None
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, msg: AclMessage) -> None:
    sock.sendall(encode_frame(msg))


def recv_frame(sock: socket.socket) -> Optional[AclMessage]:
    """Read one frame; None on clean EOF at a frame boundary."""
    header = _recv_exact(sock, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise TransportError(f"peer announced {length} byte frame, over cap")
    body = _recv_exact(sock, length)
    if body is None:
        raise TransportError("connection closed mid-frame")
    msg, _ = decode_frame(header + body)
    return msg


class FrameServer:
    """Listens for peers and answers each inbound frame with one response frame."""

    def __init__(self, host: str, port: int, handler: Callable[[AclMessage], AclMessage]) -> None:
        self._handler = handler
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            if exc.errno == errno.EADDRINUSE:
                raise AddressInUse(f"{host}:{port}") from exc
            raise TransportError(str(exc)) from exc
        self._sock.listen(32)
        self.address: tuple[str, int] = self._sock.getsockname()[:2]
        self._stopping = threading.Event()
        self._conn_threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"frame-server-{self.address[1]}", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, peer = self._sock.accept()
            except OSError:
                break
            thread = threading.Thread(
                target=self._serve_connection, args=(conn, peer),
                name=f"frame-conn-{peer[1]}", daemon=True,
            )
            thread.start()
            self._conn_threads.append(thread)

    def _serve_connection(self, conn: socket.socket, peer) -> None:
        with conn:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            while not self._stopping.is_set():
                try:
                    msg = recv_frame(conn)
                except (TransportError, DecodeError, OSError) as exc:
                    logger.debug("dropping connection from %s: %s", peer, exc)
                    return
                if msg is None:
                    return
                try:
                    response = self._handler(msg)
                except Exception:
                    logger.exception("frame handler failed for %s", peer)
                    return
                try:
                    send_frame(conn, response)
                except OSError:
                    return

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._sock.close()
        except OSError:
            pass


class FrameClient:
    """Persistent client connection; one request in flight at a time."""

    def __init__(self, host: str, port: int, timeout: float = REQUEST_TIMEOUT_S) -> None:
        self.host = host
        self.port = port
        self._timeout = timeout
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None

    def _connect(self) -> socket.socket:
        sock = socket.create_connection((self.host, self.port), timeout=CONNECT_TIMEOUT_S)
        sock.settimeout(self._timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def request(self, msg: AclMessage) -> AclMessage:
        """Send one frame and wait for the response frame.

        Raises PeerUnreachable when the peer cannot be reached (after one
        transparent reconnect attempt for a stale persistent connection).
        """
        with self._lock:
            fresh = self._sock is None
            for attempt in (1, 2):
                try:
                    if self._sock is None:
                        self._sock = self._connect()
                        fresh = True
                    send_frame(self._sock, msg)
                    response = recv_frame(self._sock)
                    if response is None:
                        raise TransportError("peer closed before responding")
                    return response
                except (OSError, TransportError, DecodeError) as exc:
                    self._drop_socket()
                    if fresh or attempt == 2:
                        raise PeerUnreachable(f"{self.host}:{self.port}: {exc}") from exc
        raise PeerUnreachable(f"{self.host}:{self.port}")  # pragma: no cover

    def _drop_socket(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def close(self) -> None:
        with self._lock:
            self._drop_socket()


def parse_hostport(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    """Parse "host:port" or ":port" into a (host, port) pair."""
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ValueError(f"expected host:port, got {text!r}")
    return (host or default_host, int(port))
