"""Message carriers: a deterministic in-process network and TCP endpoints.

Both carry opaque message bodies. On TCP every body travels as one frame: a
4-byte big-endian unsigned length followed by that many bytes. Bodies above
64 MiB are refused.
"""

from __future__ import annotations

import asyncio
import struct
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .errors import BindError, ConnectError, FrameTooLarge, FramingError, Unreachable

MAX_FRAME = 64 * 1024 * 1024
_HEADER = struct.Struct(">I")


def frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"{len(body)}-byte frame exceeds the {MAX_FRAME}-byte limit")
    return _HEADER.pack(len(body)) + body


def split_frames(data: bytes) -> list[bytes]:
    """Decode a complete byte stream into its frame bodies."""
    bodies = []
    i = 0
    while i < len(data):
        if len(data) - i < _HEADER.size:
            raise FramingError(f"stream ends inside a length prefix at offset {i}")
        (n,) = _HEADER.unpack_from(data, i)
        if n > MAX_FRAME:
            raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
        i += _HEADER.size
        if len(data) - i < n:
            raise FramingError(f"frame declares {n} bytes but only {len(data) - i} remain")
        bodies.append(data[i:i + n])
        i += n
    return bodies


# -- in-process -----------------------------------------------------------

@dataclass(frozen=True)
class Delivery:
    seq: int
    src: str
    dst: str
    body: bytes


class InProcessNetwork:
    """Synchronous, single-threaded network between named nodes.

    Each node has one FIFO inbox, so frames between any pair arrive in send
    order. :meth:`deliver_next` serves nodes round-robin in registration
    order, one frame per turn, skipping empty inboxes. Given the same sends
    the delivery sequence is always the same.
    """

    def __init__(self, node_ids: Iterable[str] = ()):
        self._order: list[str] = []
        self._inbox: dict[str, deque[Delivery]] = {}
        self._next = 0
        self._seq = 0
        for n in node_ids:
            self.register(n)

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(self._order)

    def register(self, node_id: str) -> None:
        if node_id in self._inbox:
            raise ValueError(f"node {node_id!r} already registered")
        self._order.append(node_id)
        self._inbox[node_id] = deque()

    def send(self, src: str, dst: str, body: bytes) -> int:
        """Enqueue ``body`` for ``dst``; returns the delivery sequence number."""
        if dst not in self._inbox:
            raise Unreachable(f"no node named {dst!r}")
        framed = frame(bytes(body))
        self._seq += 1
        self._inbox[dst].append(Delivery(self._seq, src, dst, framed[_HEADER.size:]))
        return self._seq

    def pending(self) -> int:
        return sum(len(q) for q in self._inbox.values())

    def deliver_next(self) -> Delivery | None:
        n = len(self._order)
        for k in range(n):
            idx = (self._next + k) % n
            q = self._inbox[self._order[idx]]
            if q:
                self._next = (idx + 1) % n
                return q.popleft()
        return None


# -- TCP ------------------------------------------------------------------

async def read_frame(reader: asyncio.StreamReader) -> bytes | None:
    """Next frame body, or ``None`` on a clean end of stream between frames."""
    try:
        header = await reader.readexactly(_HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise FramingError("stream ended inside a length prefix") from None
    (n,) = _HEADER.unpack(header)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    try:
        return await reader.readexactly(n)
    except asyncio.IncompleteReadError as exc:
        raise FramingError(f"frame declares {n} bytes, stream ended after {len(exc.partial)}") from None


class TcpConnection:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, name: str):
        self.reader = reader
        self.writer = writer
        self.name = name
        self._write_lock = asyncio.Lock()

    async def send(self, body: bytes) -> None:
        data = frame(body)
        async with self._write_lock:
            self.writer.write(data)
            await self.writer.drain()

    async def recv(self) -> bytes | None:
        return await read_frame(self.reader)

    async def close(self) -> None:
        if self.writer.is_closing():
            return
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class TcpListener:
    """Accepted connections are queued and named ``peer-0``, ``peer-1``, ..."""

    def __init__(self):
        self.connections: asyncio.Queue[TcpConnection] = asyncio.Queue()
        self._server: asyncio.base_events.Server | None = None
        self._count = 0

    async def _on_connect(self, reader, writer):
        conn = TcpConnection(reader, writer, f"peer-{self._count}")
        self._count += 1
        await self.connections.put(conn)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.sockets[0].getsockname()[:2]

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


def parse_address(addr: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        host, port = default_host, addr
    try:
        return host or default_host, int(port)
    except ValueError:
        raise ValueError(f"bad address {addr!r}; expected HOST:PORT") from None


async def tcp_listen(host: str, port: int) -> TcpListener:
    listener = TcpListener()
    try:
        listener._server = await asyncio.start_server(listener._on_connect, host, port)
    except OSError as exc:
        raise BindError(f"cannot listen on {host}:{port}: {exc}") from None
    return listener


async def tcp_connect(host: str, port: int, timeout: float = 30.0, retry_interval: float = 0.1) -> TcpConnection:
    """Connect, retrying until ``timeout`` seconds pass."""
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while True:
        try:
            reader, writer = await asyncio.open_connection(host, port)
            return TcpConnection(reader, writer, "coordinator")
        except OSError as exc:
            if loop.time() + retry_interval > deadline:
                raise ConnectError(f"cannot connect to {host}:{port}: {exc}") from None
            await asyncio.sleep(retry_interval)
