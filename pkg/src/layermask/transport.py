"""Framed message passing between parties.

Every message is serialized to the same frame format regardless of backend::

    u32 frame length | magic "LM" | u8 version | u8 kind length | kind
    | u32 header length | header (JSON) | u32 payload length | payload (.npy)
    | u32 CRC32 of everything after the length prefix

The in-process backend moves frames through deques; the socket backend
moves them over loopback TCP, one connection per passive/active pair.
"""

from __future__ import annotations

import io
import json
import queue
import socket
import struct
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"LM"
VERSION = 1

# message kinds
SETUP = "Setup"
EMBEDDING = "Embedding"
EMBEDDING_GRAD = "EmbeddingGrad"
SHARED_MUL_OPEN = "SharedMulOpen"
VALUE_SHARE = "ValueShare"
SHARE_REVEAL = "ShareReveal"
LAYER_SHARE = "LayerShare"
LAYER_RECONSTRUCT = "LayerReconstruct"

INPROCESS = "inprocess"
SOCKET = "socket"


class TransportError(RuntimeError):
    pass


class ChannelClosed(TransportError):
    pass


class FrameError(TransportError):
    pass


@dataclass
class Message:
    kind: str
    header: dict = field(default_factory=dict)
    payload: object = None  # ndarray, tuple of ndarrays, or None


def _pack_payload(payload) -> bytes:
    if payload is None:
        return b""
    arrays = list(payload) if isinstance(payload, (tuple, list)) else [payload]
    buf = io.BytesIO()
    np.savez(buf, *[np.ascontiguousarray(a) for a in arrays])
    tag = b"T" if isinstance(payload, (tuple, list)) else b"A"
    return tag + buf.getvalue()


def _unpack_payload(raw: bytes):
    if not raw:
        return None
    with np.load(io.BytesIO(raw[1:]), allow_pickle=False) as z:
        arrays = [z[f"arr_{i}"] for i in range(len(z.files))]
    return tuple(arrays) if raw[:1] == b"T" else arrays[0]


def encode_frame(msg: Message) -> bytes:
    kind = msg.kind.encode()
    header = json.dumps(msg.header, sort_keys=True).encode()
    payload = _pack_payload(msg.payload)
    body = b"".join([
        MAGIC, struct.pack(">BB", VERSION, len(kind)), kind,
        struct.pack(">I", len(header)), header,
        struct.pack(">I", len(payload)), payload,
    ])
    body += struct.pack(">I", zlib.crc32(body))
    return struct.pack(">I", len(body)) + body


def decode_body(body: bytes) -> Message:
    if len(body) < 4:
        raise FrameError("truncated frame")
    content, crc = body[:-4], struct.unpack(">I", body[-4:])[0]
    if zlib.crc32(content) != crc:
        raise FrameError("frame checksum mismatch")
    if content[:2] != MAGIC:
        raise FrameError("bad frame magic")
    version, klen = struct.unpack(">BB", content[2:4])
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version}")
    pos = 4
    kind = content[pos:pos + klen].decode()
    pos += klen
    (hlen,) = struct.unpack(">I", content[pos:pos + 4])
    pos += 4
    header = json.loads(content[pos:pos + hlen])
    pos += hlen
    (plen,) = struct.unpack(">I", content[pos:pos + 4])
    pos += 4
    payload = _unpack_payload(content[pos:pos + plen])
    return Message(kind, header, payload)


def decode_frame(frame: bytes) -> Message:
    (n,) = struct.unpack(">I", frame[:4])
    if n != len(frame) - 4:
        raise FrameError(f"length prefix {n} does not match frame of {len(frame) - 4} bytes")
    return decode_body(frame[4:])


# ---------------------------------------------------------------------------
# channels: one direction-agnostic duplex link seen from one end


class Channel:
    def send(self, msg: Message) -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None = 30.0) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _Pipe:
    """One direction of an in-process link."""

    def __init__(self):
        self.frames: deque[bytes] = deque()
        self.closed = False


class InProcessChannel(Channel):
    def __init__(self, outbox: _Pipe, inbox: _Pipe):
        self._out = outbox
        self._in = inbox

    def send(self, msg):
        if self._out.closed:
            raise ChannelClosed("send on closed channel")
        self._out.frames.append(encode_frame(msg))

    def recv(self, timeout=30.0):
        if not self._in.frames:
            if self._in.closed:
                raise ChannelClosed("recv on closed channel")
            raise TransportError("recv on empty channel: protocol out of lockstep")
        return decode_frame(self._in.frames.popleft())

    def close(self):
        self._out.closed = True
        self._in.closed = True


def inprocess_pair() -> tuple[InProcessChannel, InProcessChannel]:
    ab, ba = _Pipe(), _Pipe()
    return InProcessChannel(ab, ba), InProcessChannel(ba, ab)


_CLOSED = object()


class SocketChannel(Channel):
    """TCP end of a link; a reader thread drains frames into a queue."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._inbox: queue.Queue = queue.Queue()
        self._closed = False
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_exact(self, n: int) -> bytes | None:
        chunks, got = [], 0
        while got < n:
            try:
                chunk = self._sock.recv(min(n - got, 1 << 20))
            except OSError:
                return None
            if not chunk:
                return None
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _read_loop(self):
        while True:
            head = self._read_exact(4)
            if head is None:
                break
            (n,) = struct.unpack(">I", head)
            body = self._read_exact(n)
            if body is None:
                break
            self._inbox.put(body)
        self._inbox.put(_CLOSED)

    def send(self, msg):
        if self._closed:
            raise ChannelClosed("send on closed channel")
        with self._lock:
            try:
                self._sock.sendall(encode_frame(msg))
            except OSError as exc:
                raise ChannelClosed(f"send failed: {exc}") from exc

    def recv(self, timeout=30.0):
        try:
            body = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"no message within {timeout}s") from None
        if body is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ChannelClosed("recv on closed channel")
        return decode_body(body)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=5)


def socket_pair() -> tuple[SocketChannel, SocketChannel]:
    """Two ends of a loopback TCP connection."""
    server = socket.create_server(("127.0.0.1", 0))
    try:
        port = server.getsockname()[1]
        client = socket.create_connection(("127.0.0.1", port))
        conn, _ = server.accept()
    finally:
        server.close()
    return SocketChannel(client), SocketChannel(conn)


# ---------------------------------------------------------------------------
# network: star topology, passive parties <-> active party


@dataclass
class TranscriptEntry:
    seq: int
    sender: int
    receiver: int
    kind: str
    header: dict


class Endpoint:
    """A party's handle on its channels, keyed by counterparty id."""

    def __init__(self, party: int, network: "Network"):
        self.party = party
        self.network = network
        self.channels: dict[int, Channel] = {}

    def send(self, to: int, kind: str, payload=None, **header) -> None:
        if to not in self.channels:
            raise TransportError(f"party {self.party} has no channel to party {to}")
        header = {"party": self.party, **header}
        self.network.record(self.party, to, kind, header)
        self.channels[to].send(Message(kind, header, payload))

    def recv(self, frm: int, kind: str | None = None) -> Message:
        if frm not in self.channels:
            raise TransportError(f"party {self.party} has no channel to party {frm}")
        msg = self.channels[frm].recv()
        if kind is not None and msg.kind != kind:
            raise TransportError(f"party {self.party} expected {kind} from {frm}, got {msg.kind}")
        return msg


class Network:
    """Passive parties ``1..K-1`` each linked only to active party ``K``."""

    def __init__(self, n_parties: int, backend: str = INPROCESS, keep_transcript: bool = True):
        if n_parties < 2:
            raise ValueError("need at least two parties")
        if backend not in (INPROCESS, SOCKET):
            raise ValueError(f"unknown transport backend {backend!r}")
        self.backend = backend
        self.active = n_parties
        self.endpoints = {p: Endpoint(p, self) for p in range(1, n_parties + 1)}
        self.transcript: list[TranscriptEntry] = []
        self.keep_transcript = keep_transcript
        self.phase: dict = {}
        make = inprocess_pair if backend == INPROCESS else socket_pair
        for p in range(1, n_parties):
            a, b = make()
            self.endpoints[p].channels[self.active] = a
            self.endpoints[self.active].channels[p] = b

    def endpoint(self, party: int) -> Endpoint:
        return self.endpoints[party]

    def set_phase(self, **phase) -> None:
        """Tag subsequent transcript entries (e.g. epoch, stage)."""
        self.phase = phase

    def record(self, sender, receiver, kind, header):
        if self.keep_transcript:
            self.transcript.append(TranscriptEntry(
                len(self.transcript), sender, receiver, kind, {**self.phase, **header}))

    def close(self):
        for ep in self.endpoints.values():
            for ch in ep.channels.values():
                ch.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
