"""Drive the coordinator and party state machines over a transport."""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import errors
from .model import GaussianNBModel
from .protocol import (
    BROADCAST,
    COORDINATOR,
    ERROR_CLASSES,
    Abort,
    CoordinatorPhase,
    CoordinatorState,
    PartyPhase,
    PartyState,
    Received,
    StartTrigger,
    TimerExpired,
    coordinator_step,
    decode_message,
    encode_message,
    party_step,
    site_channel,
)
from .transport import InProcessNetwork, TcpConnection, tcp_connect, tcp_listen

log = logging.getLogger(__name__)

DEFAULT_PHASE_TIMEOUT = 30.0


@dataclass(frozen=True)
class TraceEntry:
    src: str
    dst: str
    body: bytes

    @property
    def type(self) -> str:
        return decode_message(self.body).__class__.__name__.lower()


@dataclass
class SessionResult:
    model: GaussianNBModel | None
    coordinator: CoordinatorState
    parties: list[PartyState]
    # every message sent, in send order
    trace: list[TraceEntry] = field(default_factory=list)
    # every message delivered, in delivery order
    deliveries: list[TraceEntry] = field(default_factory=list)

    def message_types(self) -> list[str]:
        return [t.type for t in self.trace]


class CoordinatorNode:
    def __init__(self, state: CoordinatorState, name: str = COORDINATOR):
        self.state = state
        self.name = name

    @property
    def terminal(self) -> bool:
        return self.state.phase in (CoordinatorPhase.DONE, CoordinatorPhase.ABORTED)

    def handle(self, event):
        self.state, out = coordinator_step(self.state, event)
        return out


class PartyNode:
    def __init__(self, state: PartyState):
        self.state = state
        self.name = site_channel(state.site_id)

    @property
    def terminal(self) -> bool:
        return self.state.phase in (PartyPhase.HAS_MODEL, PartyPhase.ABORTED)

    def handle(self, event):
        self.state, out = party_step(self.state, event)
        return out


def _outcome(coord: CoordinatorNode, parties: Sequence[PartyNode], trace, deliveries) -> SessionResult:
    result = SessionResult(
        model=coord.state.model,
        coordinator=coord.state,
        parties=[p.state for p in parties],
        trace=trace,
        deliveries=deliveries,
    )
    if coord.state.phase == CoordinatorPhase.DONE and all(p.state.phase == PartyPhase.HAS_MODEL for p in parties):
        return result
    err = coord.state.error or next((p.state.error for p in parties if p.state.error), None)
    if err is None:
        err = ("protocol_violation", "session stalled before completion")
    kind, reason = err
    exc = ERROR_CLASSES.get(kind, errors.SessionAborted)(reason, trace=trace)
    exc.result = result
    raise exc


def _decode_or_abort(body: bytes, session_id: str):
    try:
        return decode_message(body)
    except errors.ProtocolViolation as exc:
        return Abort(session_id, str(exc), "protocol_violation")


def run_inprocess(
    coordinator: CoordinatorState,
    parties: Sequence[PartyState],
    network: InProcessNetwork | None = None,
) -> SessionResult:
    """Run one session over an :class:`InProcessNetwork`.

    The network may be supplied pre-loaded (for fault injection); it must
    then have ``coordinator`` and ``site-<id>`` nodes registered. With no
    pending traffic and the coordinator still waiting, its phase deadline
    fires, so a stalled session ends in ``timeout`` rather than hanging.
    """
    coord = CoordinatorNode(coordinator)
    nodes: dict[str, CoordinatorNode | PartyNode] = {coord.name: coord}
    party_nodes = [PartyNode(p) for p in parties]
    for p in party_nodes:
        if p.name in nodes:
            raise ValueError(f"duplicate site id in {p.name}")
        nodes[p.name] = p
    if network is None:
        network = InProcessNetwork(nodes)
    trace: list[TraceEntry] = []
    deliveries: list[TraceEntry] = []

    def dispatch(src: str, outgoing) -> None:
        for dst, msg in outgoing:
            targets = [n for n in network.nodes if n != src] if dst == BROADCAST else [dst]
            body = encode_message(msg)
            for t in targets:
                network.send(src, t, body)
                trace.append(TraceEntry(src, t, body))

    dispatch(coord.name, coord.handle(StartTrigger()))
    while True:
        d = network.deliver_next()
        if d is None:
            if coord.terminal:
                break
            dispatch(coord.name, coord.handle(TimerExpired()))
            continue
        deliveries.append(TraceEntry(d.src, d.dst, d.body))
        node = nodes.get(d.dst)
        if node is None:
            continue
        msg = _decode_or_abort(d.body, coordinator.config.session_id)
        dispatch(node.name, node.handle(Received(d.src, msg)))
    return _outcome(coord, party_nodes, trace, deliveries)


# -- TCP ------------------------------------------------------------------

async def serve_coordinator(
    state: CoordinatorState,
    host: str = "127.0.0.1",
    port: int = 0,
    phase_timeout: float = DEFAULT_PHASE_TIMEOUT,
    listening: asyncio.Future | None = None,
) -> SessionResult:
    """Run the coordinator role on a TCP listener until the session ends.

    ``init`` is broadcast once ``min_sites`` parties have connected, or when
    the phase deadline passes with fewer (which then ends in ``timeout``).
    If given, ``listening`` receives the bound ``(host, port)``.
    """
    loop = asyncio.get_running_loop()
    node = CoordinatorNode(state)
    listener = await tcp_listen(host, port)
    if listening is not None:
        listening.set_result(listener.address)
    log.info("coordinator listening on %s:%s", *listener.address)
    conns: dict[str, TcpConnection] = {}
    inbox: asyncio.Queue = asyncio.Queue()
    readers: list[asyncio.Task] = []
    trace: list[TraceEntry] = []
    deliveries: list[TraceEntry] = []

    async def pump(conn: TcpConnection):
        try:
            while (body := await conn.recv()) is not None:
                await inbox.put((conn.name, body))
        except errors.TransportError as exc:
            await inbox.put((conn.name, exc))
            return
        await inbox.put((conn.name, None))

    async def accept_loop():
        while True:
            conn = await listener.connections.get()
            conns[conn.name] = conn
            readers.append(asyncio.create_task(pump(conn)))

    async def dispatch(outgoing):
        for dst, msg in outgoing:
            targets = list(conns) if dst == BROADCAST else [dst]
            body = encode_message(msg)
            for t in targets:
                trace.append(TraceEntry(node.name, t, body))
                if t in conns:
                    try:
                        await conns[t].send(body)
                    except (ConnectionError, OSError) as exc:
                        log.warning("send to %s failed: %s", t, exc)

    acceptor = asyncio.create_task(accept_loop())
    try:
        deadline = loop.time() + phase_timeout
        while len(conns) < state.config.min_sites and loop.time() < deadline:
            await asyncio.sleep(0.01)
        await dispatch(node.handle(StartTrigger()))
        phase = node.state.phase
        deadline = loop.time() + phase_timeout
        while not node.terminal:
            try:
                sender, item = await asyncio.wait_for(inbox.get(), max(deadline - loop.time(), 0.0))
            except asyncio.TimeoutError:
                await dispatch(node.handle(TimerExpired()))
                continue
            if item is None or isinstance(item, Exception):
                known = any(ch == sender for _, ch, _ in node.state.ready)
                if not known:
                    continue
                reason = "connection closed" if item is None else f"{type(item).__name__}: {item}"
                msg = Abort(state.config.session_id, f"{sender}: {reason}", "protocol_violation")
            else:
                deliveries.append(TraceEntry(sender, node.name, item))
                msg = _decode_or_abort(item, state.config.session_id)
            await dispatch(node.handle(Received(sender, msg)))
            if node.state.phase != phase:
                phase = node.state.phase
                deadline = loop.time() + phase_timeout
        # Give parties a moment to read the final message and hang up.
        grace = loop.time() + 5.0
        while any(not r.done() for r in readers) and loop.time() < grace:
            await asyncio.sleep(0.01)
    finally:
        acceptor.cancel()
        for conn in conns.values():
            await conn.close()
        for r in readers:
            r.cancel()
        await listener.close()
    return SessionResult(node.state.model, node.state, [], trace, deliveries)


async def run_party(
    state: PartyState,
    host: str,
    port: int,
    phase_timeout: float = DEFAULT_PHASE_TIMEOUT,
) -> PartyState:
    """Run one party over TCP until it holds the model or aborts."""
    loop = asyncio.get_running_loop()
    node = PartyNode(state)
    conn = await tcp_connect(host, port, timeout=phase_timeout)
    try:
        deadline = loop.time() + phase_timeout
        phase = node.state.phase
        while not node.terminal:
            try:
                body = await asyncio.wait_for(conn.recv(), max(deadline - loop.time(), 0.0))
            except asyncio.TimeoutError:
                out = node.handle(TimerExpired())
            else:
                if body is None:
                    node.state = replace(
                        node.state,
                        phase=PartyPhase.ABORTED,
                        error=("protocol_violation", "coordinator closed the connection"),
                    )
                    break
                msg = _decode_or_abort(body, node.state.session_id or "")
                out = node.handle(Received(COORDINATOR, msg))
            for _, msg in out:
                await conn.send(encode_message(msg))
            if node.state.phase != phase:
                phase = node.state.phase
                deadline = loop.time() + phase_timeout
    finally:
        await conn.close()
    return node.state


async def _loopback(coordinator: CoordinatorState, parties: Sequence[PartyState], phase_timeout: float):
    listening = asyncio.get_running_loop().create_future()
    server = asyncio.create_task(serve_coordinator(coordinator, "127.0.0.1", 0, phase_timeout, listening))
    host, port = await listening
    party_results = await asyncio.gather(*(run_party(p, host, port, phase_timeout) for p in parties))
    result = await server
    result.parties = list(party_results)
    return result


def run_tcp_loopback(
    coordinator: CoordinatorState,
    parties: Sequence[PartyState],
    phase_timeout: float = DEFAULT_PHASE_TIMEOUT,
) -> SessionResult:
    """Run a whole session over real sockets on 127.0.0.1."""
    result = asyncio.run(_loopback(coordinator, parties, phase_timeout))
    party_nodes = [PartyNode(p) for p in result.parties]
    return _outcome(CoordinatorNode(result.coordinator), party_nodes, result.trace, result.deliveries)


def execute_session(
    coordinator: CoordinatorState,
    parties: Sequence[PartyState],
    transport: str | InProcessNetwork = "inprocess",
    phase_timeout: float = DEFAULT_PHASE_TIMEOUT,
) -> SessionResult:
    if not parties:
        raise ValueError("a session needs at least one party")
    if isinstance(transport, InProcessNetwork):
        return run_inprocess(coordinator, parties, transport)
    if transport == "inprocess":
        return run_inprocess(coordinator, parties)
    if transport == "tcp":
        return run_tcp_loopback(coordinator, parties, phase_timeout)
    raise ValueError(f"unknown transport {transport!r}")


def run_session(
    coordinator: CoordinatorState,
    parties: Sequence[PartyState],
    transport: str | InProcessNetwork = "inprocess",
) -> GaussianNBModel:
    """Run a session to completion and return the broadcast model.

    Failures raise a :class:`~ttpnb.errors.ProtocolError` subclass whose
    ``trace`` holds every message sent.
    """
    return execute_session(coordinator, parties, transport).model
