import asyncio
import struct

import pytest
from hypothesis import given, strategies as st

from ttpnb.errors import BindError, ConnectError, FrameTooLarge, FramingError, Timeout, Unreachable
from ttpnb.perturb import RatioOfSampleVariance
from ttpnb.session import execute_session, serve_coordinator
from ttpnb.transport import (
    MAX_FRAME,
    InProcessNetwork,
    frame,
    parse_address,
    read_frame,
    split_frames,
    tcp_connect,
    tcp_listen,
)

from conftest import build_session


@given(st.lists(st.binary(max_size=300), max_size=10))
def test_frames_roundtrip(bodies):
    assert split_frames(b"".join(frame(b) for b in bodies)) == bodies


def test_frame_layout():
    assert frame(b"abc") == b"\x00\x00\x00\x03abc"
    assert frame(b"") == b"\x00\x00\x00\x00"


def test_truncated_stream():
    with pytest.raises(FramingError):
        split_frames(frame(b"hello")[:-1])
    with pytest.raises(FramingError):
        split_frames(b"\x00\x00")


def test_oversized_frame():
    with pytest.raises(FrameTooLarge):
        split_frames(struct.pack(">I", MAX_FRAME + 1))


def test_inprocess_fifo_and_identity():
    net = InProcessNetwork(["a", "b"])
    for i in range(5):
        net.send("a", "b", bytes([i]) * 3)
    got = [net.deliver_next() for _ in range(5)]
    assert [d.body for d in got] == [bytes([i]) * 3 for i in range(5)]
    assert all(d.src == "a" and d.dst == "b" for d in got)
    assert net.deliver_next() is None and net.pending() == 0


def test_inprocess_round_robin():
    net = InProcessNetwork(["a", "b", "c"])
    net.send("x", "c", b"c1")
    net.send("x", "a", b"a1")
    net.send("x", "a", b"a2")
    net.send("x", "b", b"b1")
    order = []
    while (d := net.deliver_next()) is not None:
        order.append(d.body)
    assert order == [b"a1", b"b1", b"c1", b"a2"]


def test_unreachable():
    net = InProcessNetwork(["a"])
    with pytest.raises(Unreachable):
        net.send("a", "nobody", b"x")
    with pytest.raises(ValueError):
        net.register("a")


def test_parse_address():
    assert parse_address("10.0.0.1:9000") == ("10.0.0.1", 9000)
    assert parse_address(":9000") == ("127.0.0.1", 9000)
    assert parse_address("9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_address("host:port")


def test_tcp_frames_and_truncation():
    async def scenario():
        listener = await tcp_listen("127.0.0.1", 0)
        host, port = listener.address
        client = await tcp_connect(host, port, timeout=5)
        server = await listener.connections.get()
        await client.send(b"one")
        await client.send(b"")
        assert await server.recv() == b"one"
        assert await server.recv() == b""
        # A half-written frame is a framing error, a clean close is None.
        client.writer.write(struct.pack(">I", 10) + b"abc")
        await client.close()
        with pytest.raises(FramingError):
            await server.recv()
        await server.close()
        await listener.close()

    asyncio.run(scenario())


def test_tcp_clean_eof():
    async def scenario():
        listener = await tcp_listen("127.0.0.1", 0)
        client = await tcp_connect(*listener.address, timeout=5)
        server = await listener.connections.get()
        await client.close()
        assert await server.recv() is None
        await listener.close()

    asyncio.run(scenario())


def test_bind_and_connect_errors():
    async def scenario():
        listener = await tcp_listen("127.0.0.1", 0)
        host, port = listener.address
        with pytest.raises(BindError):
            await tcp_listen(host, port)
        await listener.close()
        with pytest.raises(ConnectError):
            await tcp_connect(host, port, timeout=0.3)

    asyncio.run(scenario())


def test_tcp_matches_inprocess(synthetic):
    models = []
    for transport in ("inprocess", "tcp"):
        coord, parties = build_session(synthetic, 3, scheme="rsa", noise_mode=RatioOfSampleVariance(0.25))
        result = execute_session(coord, parties, transport, phase_timeout=10)
        models.append(result.model.to_json())
    assert models[0] == models[1]


def test_coordinator_times_out_without_parties(synthetic):
    coord, _ = build_session(synthetic, 2)
    result = asyncio.run(serve_coordinator(coord, "127.0.0.1", 0, phase_timeout=0.3))
    assert result.model is None
    assert result.coordinator.error[0] == "timeout"


def test_tcp_session_with_missing_party_times_out(synthetic):
    coord, parties = build_session(synthetic, 3)
    with pytest.raises(Timeout):
        execute_session(coord, parties[:2], "tcp", phase_timeout=0.5)
