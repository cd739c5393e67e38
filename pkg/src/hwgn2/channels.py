"""Framed, ordered, reliable byte channels for the two-party sessions.

Frame layout: tag (1 byte) + payload length (u32 little-endian) + payload.
Two bindings: an in-process loopback pair (thread-safe queues) and TCP.
Channels count bytes in each direction for communication accounting.
"""

from __future__ import annotations

import socket
import struct
import threading
from collections import deque

FRAME_HEADER = struct.Struct("<BI")

# frame tags
HELLO = 0x01
PHI_META = 0x02
OT1 = 0x03
OT2 = 0x04
OT3 = 0x05
BATCH = 0x06
YBACK = 0x07
DECODE = 0x08
OUTPUT = 0x09
OPEN_SEED = 0x0A
VERDICT = 0x0B
ERR = 0x0C

TAG_NAMES = {
    HELLO: "HELLO", PHI_META: "PHI_META", OT1: "OT1", OT2: "OT2",
    OT3: "OT3", BATCH: "BATCH", YBACK: "YBACK", DECODE: "DECODE",
    OUTPUT: "OUTPUT", OPEN_SEED: "OPEN_SEED", VERDICT: "VERDICT", ERR: "ERR",
}

MAX_FRAME = 1 << 31


class ChannelError(Exception):
    pass


class ProtocolViolation(ChannelError):
    """Unexpected frame; carries the position in the frame sequence."""

    def __init__(self, message: str, frame_index: int):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class Channel:
    """Base: framing, byte accounting, expect() discipline."""

    def __init__(self):
        self.bytes_sent = 0
        self.bytes_received = 0
        self._frames_seen = 0

    def _send_raw(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_raw(self, n: int) -> bytes:
        raise NotImplementedError

    def send(self, tag: int, payload: bytes = b"") -> None:
        if len(payload) >= MAX_FRAME:
            raise ChannelError("frame too large")
        # header and payload go out separately: batch payloads reach
        # hundreds of MB and must not be copied for concatenation
        self._send_raw(FRAME_HEADER.pack(tag, len(payload)))
        if payload:
            self._send_raw(payload)
        self.bytes_sent += FRAME_HEADER.size + len(payload)

    def recv(self) -> tuple[int, bytes]:
        head = self._recv_raw(FRAME_HEADER.size)
        tag, length = FRAME_HEADER.unpack(head)
        payload = self._recv_raw(length) if length else b""
        self.bytes_received += FRAME_HEADER.size + length
        self._frames_seen += 1
        return tag, payload

    def expect(self, tag: int) -> bytes:
        got, payload = self.recv()
        if got == ERR and tag != ERR:
            raise ProtocolViolation(
                f"peer aborted: {payload.decode('utf-8', 'replace')}",
                self._frames_seen - 1)
        if got != tag:
            raise ProtocolViolation(
                f"expected {TAG_NAMES.get(tag, tag)}, got {TAG_NAMES.get(got, got)}",
                self._frames_seen - 1)
        return payload

    def abort(self, message: str) -> None:
        self.send(ERR, message.encode())

    def close(self) -> None:
        pass


class _Mailbox:
    def __init__(self):
        self.buf = deque()
        self.cond = threading.Condition()
        self.closed = False

    def put(self, data: bytes):
        with self.cond:
            self.buf.append(data)
            self.cond.notify()

    def get(self, n: int, timeout: float) -> bytes:
        out = bytearray()
        with self.cond:
            while len(out) < n:
                while not self.buf:
                    if self.closed:
                        raise ChannelError("channel closed")
                    if not self.cond.wait(timeout):
                        raise ChannelError("receive timeout")
                chunk = self.buf.popleft()
                if not out and len(chunk) == n:
                    return bytes(chunk)   # single copy for whole frames
                take = n - len(out)
                out += chunk[:take]
                if len(chunk) > take:
                    self.buf.appendleft(chunk[take:])
        return bytes(out)


class LoopbackChannel(Channel):
    """One endpoint of an in-process pair; create with loopback_pair()."""

    def __init__(self, inbox: _Mailbox, outbox: _Mailbox, timeout: float = 60.0):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout

    def _send_raw(self, data: bytes) -> None:
        self._outbox.put(data)

    def _recv_raw(self, n: int) -> bytes:
        return self._inbox.get(n, self._timeout)

    def close(self) -> None:
        with self._inbox.cond:
            self._inbox.closed = True
            self._inbox.cond.notify_all()
        with self._outbox.cond:
            self._outbox.closed = True
            self._outbox.cond.notify_all()


def loopback_pair(timeout: float = 60.0) -> tuple[LoopbackChannel, LoopbackChannel]:
    a, b = _Mailbox(), _Mailbox()
    return LoopbackChannel(a, b, timeout), LoopbackChannel(b, a, timeout)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self._sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_raw(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelError(f"send failed: {exc}") from None

    def _recv_raw(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            try:
                chunk = self._sock.recv(n - len(out))
            except OSError as exc:
                raise ChannelError(f"recv failed: {exc}") from None
            if not chunk:
                raise ChannelError("connection closed")
            out += chunk
        return bytes(out)

    def close(self) -> None:
        self._sock.close()


def tcp_listen(host: str, port: int) -> TcpChannel:
    """Accept one connection (garbler side)."""
    srv = socket.create_server((host, port))
    conn, _ = srv.accept()
    srv.close()
    return TcpChannel(conn)


def tcp_connect(host: str, port: int, timeout: float = 10.0) -> TcpChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    # connect fast, but give the peer minutes per frame once connected:
    # malicious-mode garbling stalls the stream legitimately
    sock.settimeout(600.0)
    return TcpChannel(sock)
