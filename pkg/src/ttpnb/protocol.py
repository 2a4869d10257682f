"""Coordinator and party state machines for one federated fitting session.

Both roles are pure reducers: ``step(state, event) -> (state, outgoing)``.
``outgoing`` is a list of ``(destination, message)`` pairs where the
destination is a channel name, or ``"*"`` for every connected peer. The
transports in :mod:`ttpnb.transport` move the encoded messages around.

A successful session exchanges, in order::

    coordinator -> *      init
    party -> coordinator  ready   (site id + public key)
    coordinator -> roster start   (coordinator key, split plan, noise mode)
    party -> coordinator  stats   (sealed class counts + per-class statistics)
    coordinator -> roster model   (canonical model JSON)

Any failure ends in ``abort``.
"""

from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Union

import numpy as np

from . import errors
from .dataset import PartitionedTable, SplitPlan, generate_splits
from .envelope import KeyPair, SealedEnvelope, get_scheme
from .errors import InsufficientClassData, ProtocolViolation
from .model import (
    DEFAULT_VARIANCE_FLOOR,
    ClassConditionalStats,
    GaussianNBModel,
    assemble_model,
    canonical_json,
    fit_columns,
)
from .perturb import (
    Absolute,
    NoiseMode,
    PerturbedColumn,
    noise_mode_from_dict,
    perturb_table,
)

PROTOCOL_VERSION = 1
BROADCAST = "*"
COORDINATOR = "coordinator"


def site_channel(site_id: int) -> str:
    return f"site-{site_id}"


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _unb64(s: str) -> bytes:
    return base64.b64decode(s, validate=True)


# -- messages -------------------------------------------------------------

@dataclass(frozen=True)
class Init:
    session_id: str
    protocol_version: int = PROTOCOL_VERSION
    min_sites: int = 1


@dataclass(frozen=True)
class Ready:
    session_id: str
    site_id: int
    site_public_key: bytes


@dataclass(frozen=True)
class Start:
    session_id: str
    coordinator_public_key: bytes
    split_plan: SplitPlan
    split_index: int
    noise_mode: NoiseMode
    noise_family: str
    noise_seed: int
    roster: tuple[int, ...]
    mode: str = "stats"
    scheme_id: str = ""


@dataclass(frozen=True)
class Stats:
    session_id: str
    site_id: int
    envelope: SealedEnvelope


@dataclass(frozen=True)
class Model:
    session_id: str
    model: dict


@dataclass(frozen=True)
class Abort:
    session_id: str
    reason: str
    kind: str = "aborted"


Message = Union[Init, Ready, Start, Stats, Model, Abort]


def message_to_dict(msg: Message) -> dict:
    if isinstance(msg, Init):
        return {"type": "init", "session_id": msg.session_id,
                "protocol_version": msg.protocol_version, "min_sites": msg.min_sites}
    if isinstance(msg, Ready):
        return {"type": "ready", "session_id": msg.session_id, "site_id": msg.site_id,
                "site_public_key": _b64(msg.site_public_key)}
    if isinstance(msg, Start):
        return {
            "type": "start",
            "session_id": msg.session_id,
            "coordinator_public_key": _b64(msg.coordinator_public_key),
            "split_plan": msg.split_plan.to_dict(),
            "split_index": msg.split_index,
            "noise_mode": msg.noise_mode.to_dict(),
            "noise_family": msg.noise_family,
            "noise_seed": msg.noise_seed,
            "roster": list(msg.roster),
            "mode": msg.mode,
            "scheme_id": msg.scheme_id,
        }
    if isinstance(msg, Stats):
        return {"type": "stats", "session_id": msg.session_id, "site_id": msg.site_id,
                "envelope": msg.envelope.to_dict()}
    if isinstance(msg, Model):
        return {"type": "model", "session_id": msg.session_id, "model": msg.model}
    if isinstance(msg, Abort):
        return {"type": "abort", "session_id": msg.session_id, "reason": msg.reason, "kind": msg.kind}
    raise TypeError(f"not a protocol message: {msg!r}")


def message_from_dict(d: Mapping[str, Any]) -> Message:
    try:
        kind = d["type"]
        if kind == "init":
            return Init(str(d["session_id"]), int(d["protocol_version"]), int(d["min_sites"]))
        if kind == "ready":
            return Ready(str(d["session_id"]), int(d["site_id"]), _unb64(d["site_public_key"]))
        if kind == "start":
            return Start(
                session_id=str(d["session_id"]),
                coordinator_public_key=_unb64(d["coordinator_public_key"]),
                split_plan=SplitPlan.from_dict(d["split_plan"]),
                split_index=int(d["split_index"]),
                noise_mode=noise_mode_from_dict(d["noise_mode"]),
                noise_family=str(d["noise_family"]),
                noise_seed=int(d["noise_seed"]),
                roster=tuple(int(s) for s in d["roster"]),
                mode=str(d["mode"]),
                scheme_id=str(d["scheme_id"]),
            )
        if kind == "stats":
            return Stats(str(d["session_id"]), int(d["site_id"]), SealedEnvelope.from_dict(d["envelope"]))
        if kind == "model":
            return Model(str(d["session_id"]), dict(d["model"]))
        if kind == "abort":
            return Abort(str(d["session_id"]), str(d["reason"]), str(d.get("kind", "aborted")))
    except (KeyError, TypeError, ValueError, errors.TtpnbError) as exc:
        raise ProtocolViolation(f"malformed {d.get('type', '?')!r} message: {exc}") from None
    raise ProtocolViolation(f"unknown message type {kind!r}")


def encode_message(msg: Message) -> bytes:
    return canonical_json(message_to_dict(msg)).encode("utf-8")


def decode_message(body: bytes) -> Message:
    try:
        d = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"undecodable message body: {exc}") from None
    if not isinstance(d, dict):
        raise ProtocolViolation("message body is not a JSON object")
    return message_from_dict(d)


# -- events ---------------------------------------------------------------

@dataclass(frozen=True)
class StartTrigger:
    """Tells the coordinator to broadcast ``init``."""


@dataclass(frozen=True)
class Received:
    sender: str
    message: Message


@dataclass(frozen=True)
class TimerExpired:
    """The current phase's deadline passed."""


Event = Union[StartTrigger, Received, TimerExpired]


# -- payloads -------------------------------------------------------------

def stats_payload(site_id: int, class_counts: Mapping[str, int], stats: list[ClassConditionalStats]) -> bytes:
    return canonical_json({
        "site_id": site_id,
        "class_counts": dict(class_counts),
        "attribute_stats": [s.to_dict() for s in stats],
    }).encode("utf-8")


def records_payload(site_id: int, labels, columns: list[PerturbedColumn]) -> bytes:
    return canonical_json({
        "site_id": site_id,
        "labels": list(labels),
        "columns": [
            {"name": c.attribute_name, "values": [float(v) for v in c.values], "noise_variance": c.noise_variance}
            for c in columns
        ],
    }).encode("utf-8")


def parse_payload(raw: bytes, mode: str) -> tuple[int, dict[str, int], list[ClassConditionalStats]]:
    """Decode a site's payload into ``(site_id, class_counts, stats)``.

    In records mode the statistics are computed here from the perturbed
    columns, exactly as a site would have computed them.
    """
    d = json.loads(raw.decode("utf-8"))
    site_id = int(d["site_id"])
    if mode == "records":
        labels = [str(x) for x in d["labels"]]
        columns = [
            PerturbedColumn(c["name"], np.array(c["values"], dtype=np.float64), float(c["noise_variance"]))
            for c in d["columns"]
        ]
        counts, stats = fit_columns(columns, labels)
        return site_id, counts, stats
    counts = {str(k): int(v) for k, v in d["class_counts"].items()}
    stats = [ClassConditionalStats.from_dict(s) for s in d["attribute_stats"]]
    return site_id, counts, stats


# -- coordinator ----------------------------------------------------------

class CoordinatorPhase(enum.IntEnum):
    BROADCASTING = 0
    COLLECTING_READY = 1
    RUNNING = 2
    COLLECTING_STATS = 3
    DONE = 4
    ABORTED = 5


@dataclass(frozen=True)
class CoordinatorConfig:
    session_id: str
    min_sites: int = 1
    split_plan: SplitPlan = field(default_factory=SplitPlan)
    split_index: int = 0
    noise_mode: NoiseMode = field(default_factory=lambda: Absolute(0.0))
    noise_family: str = "gaussian"
    noise_seed: int = 0
    mode: str = "stats"
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if self.mode not in ("stats", "records"):
            raise ValueError(f"unknown session mode {self.mode!r}")
        if self.min_sites < 1:
            raise ValueError("min_sites must be positive")
        if not 0 <= self.split_index < self.split_plan.n_splits:
            raise ValueError(f"split_index {self.split_index} outside plan of {self.split_plan.n_splits} splits")


@dataclass(frozen=True)
class CoordinatorState:
    config: CoordinatorConfig
    keys: KeyPair
    scheme_id: str
    phase: CoordinatorPhase = CoordinatorPhase.BROADCASTING
    # (site_id, channel, public_key) in arrival order
    ready: tuple[tuple[int, str, bytes], ...] = ()
    roster: tuple[int, ...] = ()
    # site_id -> (class_counts, stats)
    received: Mapping[int, tuple[dict, tuple[ClassConditionalStats, ...]]] = field(default_factory=dict)
    model: GaussianNBModel | None = None
    error: tuple[str, str] | None = None


def new_coordinator(config: CoordinatorConfig, scheme="rsa") -> CoordinatorState:
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    return CoordinatorState(config=config, keys=scheme.generate_keypair(), scheme_id=scheme.scheme_id)


def _roster_channels(state: CoordinatorState) -> list[str]:
    chan = {sid: ch for sid, ch, _ in state.ready}
    if state.roster:
        return [chan[s] for s in state.roster]
    return [ch for _, ch, _ in state.ready] or [BROADCAST]


def _coordinator_abort(state: CoordinatorState, kind: str, reason: str):
    msg = Abort(state.config.session_id, reason, kind)
    new = replace(state, phase=CoordinatorPhase.ABORTED, error=(kind, reason))
    return new, [(ch, msg) for ch in _roster_channels(state)]


def coordinator_step(state: CoordinatorState, event: Event):
    """Advance the coordinator by one event. Returns ``(state, outgoing)``."""
    cfg = state.config
    phase = state.phase
    if phase in (CoordinatorPhase.DONE, CoordinatorPhase.ABORTED):
        return state, []

    if isinstance(event, StartTrigger):
        if phase != CoordinatorPhase.BROADCASTING:
            return _coordinator_abort(state, "protocol_violation", "start trigger out of phase")
        init = Init(cfg.session_id, PROTOCOL_VERSION, cfg.min_sites)
        return replace(state, phase=CoordinatorPhase.COLLECTING_READY), [(BROADCAST, init)]

    if isinstance(event, TimerExpired):
        if phase == CoordinatorPhase.COLLECTING_READY:
            return _coordinator_abort(
                state, "timeout", f"only {len(state.ready)} of {cfg.min_sites} required sites became ready"
            )
        if phase == CoordinatorPhase.COLLECTING_STATS:
            missing = sorted(set(state.roster) - set(state.received))
            return _coordinator_abort(state, "timeout", f"no statistics from sites {missing}")
        return _coordinator_abort(state, "timeout", f"deadline passed in phase {phase.name}")

    sender, msg = event.sender, event.message

    if isinstance(msg, Abort):
        # Keep the party's failure kind so callers see e.g. FitError, not a bare abort.
        kind = msg.kind if msg.kind in ERROR_CLASSES else "aborted"
        return _coordinator_abort(state, kind, f"{sender} aborted: {msg.reason}")

    if getattr(msg, "session_id", None) != cfg.session_id:
        # Foreign sessions are turned away without disturbing this one.
        return state, [(sender, Abort(getattr(msg, "session_id", ""), "unknown session", "protocol_violation"))]

    if isinstance(msg, Ready) and phase == CoordinatorPhase.COLLECTING_STATS:
        if any(sid == msg.site_id for sid, _, _ in state.ready):
            return _coordinator_abort(state, "protocol_violation", f"duplicate ready from site {msg.site_id}")
        return state, [(sender, Abort(cfg.session_id, "enrollment closed", "protocol_violation"))]

    if isinstance(msg, Ready) and phase == CoordinatorPhase.COLLECTING_READY:
        if any(sid == msg.site_id or ch == sender for sid, ch, _ in state.ready):
            return _coordinator_abort(state, "protocol_violation", f"duplicate ready from site {msg.site_id}")
        ready = state.ready + ((msg.site_id, sender, msg.site_public_key),)
        state = replace(state, ready=ready)
        if len(ready) < cfg.min_sites:
            return state, []
        roster = tuple(sorted(sid for sid, _, _ in ready))
        state = replace(state, phase=CoordinatorPhase.RUNNING, roster=roster)
        start = Start(
            session_id=cfg.session_id,
            coordinator_public_key=state.keys.public_part,
            split_plan=cfg.split_plan,
            split_index=cfg.split_index,
            noise_mode=cfg.noise_mode,
            noise_family=cfg.noise_family,
            noise_seed=cfg.noise_seed,
            roster=roster,
            mode=cfg.mode,
            scheme_id=state.scheme_id,
        )
        out = [(ch, start) for ch in _roster_channels(state)]
        return replace(state, phase=CoordinatorPhase.COLLECTING_STATS), out

    if isinstance(msg, Stats) and phase == CoordinatorPhase.COLLECTING_STATS:
        return _accept_stats(state, sender, msg)

    return _coordinator_abort(
        state, "protocol_violation", f"unexpected {type(msg).__name__.lower()} from {sender} in phase {phase.name}"
    )


def _accept_stats(state: CoordinatorState, sender: str, msg: Stats):
    cfg = state.config
    known = {ch: (sid, key) for sid, ch, key in state.ready}
    if sender not in known or known[sender][0] != msg.site_id or msg.site_id not in state.roster:
        return _coordinator_abort(state, "protocol_violation", f"stats from unrostered sender {sender}")
    if msg.site_id in state.received:
        return _coordinator_abort(state, "protocol_violation", f"duplicate stats from site {msg.site_id}")
    site_key = known[sender][1]
    try:
        scheme = get_scheme(state.scheme_id)
        if msg.envelope.sender_id != sender_name(msg.site_id):
            raise errors.SignatureError("envelope sender does not match site")
        raw = scheme.open(msg.envelope, state.keys.private_part, site_key)
    except errors.EnvelopeError as exc:
        return _coordinator_abort(state, "envelope", f"site {msg.site_id}: {type(exc).__name__}: {exc}")
    try:
        site_id, counts, stats = parse_payload(raw, cfg.mode)
    except (KeyError, TypeError, ValueError, errors.DataError) as exc:
        return _coordinator_abort(state, "protocol_violation", f"site {msg.site_id}: bad payload: {exc}")
    if site_id != msg.site_id:
        return _coordinator_abort(state, "consistency", f"payload names site {site_id}, message site {msg.site_id}")

    total = sum(counts.values())
    per_attr: dict[str, int] = {}
    for s in stats:
        per_attr[s.attribute_name] = per_attr.get(s.attribute_name, 0) + s.n
    bad = [a for a, n in per_attr.items() if n != total]
    if bad:
        return _coordinator_abort(state, "consistency", f"site {site_id}: per-class counts of {bad} do not sum to {total}")
    for other, (other_counts, other_stats) in state.received.items():
        if other_counts != counts:
            return _coordinator_abort(
                state, "consistency",
                f"class counts differ: site {other} has {other_counts}, site {site_id} has {counts}",
            )
        shared = set(per_attr) & {s.attribute_name for s in other_stats}
        if shared:
            return _coordinator_abort(state, "consistency", f"attributes {sorted(shared)} held by sites {other} and {site_id}")

    received = dict(state.received)
    received[site_id] = (counts, tuple(stats))
    state = replace(state, received=received)
    if set(received) != set(state.roster):
        return state, []

    # Roster order, not arrival order, fixes the attribute order.
    all_stats = [s for sid in state.roster for s in received[sid][1]]
    try:
        model = assemble_model(all_stats, counts, cfg.variance_floor)
    except errors.DataError as exc:
        return _coordinator_abort(state, "consistency", f"{type(exc).__name__}: {exc}")
    out_msg = Model(cfg.session_id, model.to_dict())
    out = [(ch, out_msg) for ch in _roster_channels(state)]
    return replace(state, phase=CoordinatorPhase.DONE, model=model), out


# -- party ----------------------------------------------------------------

class PartyPhase(enum.IntEnum):
    IDLE = 0
    SENT_READY = 1
    FITTING = 2
    SENT_STATS = 3
    HAS_MODEL = 4
    ABORTED = 5


def sender_name(site_id: int) -> str:
    return site_channel(site_id)


@dataclass(frozen=True)
class PartyState:
    site_id: int
    fragment: PartitionedTable
    keys: KeyPair
    scheme_id: str
    phase: PartyPhase = PartyPhase.IDLE
    session_id: str | None = None
    coordinator: str | None = None
    model: GaussianNBModel | None = None
    error: tuple[str, str] | None = None


def new_party(site_id: int, fragment: PartitionedTable, scheme="rsa") -> PartyState:
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    return PartyState(site_id=site_id, fragment=fragment, keys=scheme.generate_keypair(), scheme_id=scheme.scheme_id)


def _party_abort(state: PartyState, kind: str, reason: str, notify: str | None):
    new = replace(state, phase=PartyPhase.ABORTED, error=(kind, reason))
    if notify is None:
        return new, []
    return new, [(notify, Abort(state.session_id or "", reason, kind))]


def fit_fragment(fragment: PartitionedTable, start: Start):
    """Perturb the owned columns and summarize the training rows of this split.

    Returns ``(class_counts, stats, perturbed training columns, training labels)``.
    """
    train_ids, _ = generate_splits(fragment.n_rows, start.split_plan)[start.split_index]
    pos = fragment.positions(train_ids)
    labels = [fragment.labels[p] for p in pos]
    perturbed = perturb_table(fragment, start.noise_mode, start.noise_family, start.noise_seed)
    columns = [PerturbedColumn(c.attribute_name, c.values[pos], c.noise_variance) for c in perturbed]
    counts, stats = fit_columns(columns, labels)
    return counts, stats, columns, labels


def party_step(state: PartyState, event: Event):
    """Advance a party by one event. Returns ``(state, outgoing)``."""
    if state.phase in (PartyPhase.HAS_MODEL, PartyPhase.ABORTED):
        return state, []
    if not isinstance(event, Received):
        if isinstance(event, TimerExpired):
            return _party_abort(state, "timeout", f"deadline passed in phase {state.phase.name}", state.coordinator)
        return _party_abort(state, "protocol_violation", "unexpected local event", state.coordinator)

    sender, msg = event.sender, event.message
    if isinstance(msg, Abort):
        return _party_abort(state, msg.kind, f"coordinator aborted: {msg.reason}", None)

    if isinstance(msg, Init) and state.phase == PartyPhase.IDLE:
        if msg.protocol_version != PROTOCOL_VERSION:
            return _party_abort(state, "protocol_violation", f"unsupported protocol version {msg.protocol_version}", sender)
        ready = Ready(msg.session_id, state.site_id, state.keys.public_part)
        new = replace(state, phase=PartyPhase.SENT_READY, session_id=msg.session_id, coordinator=sender)
        return new, [(sender, ready)]

    if sender != state.coordinator or getattr(msg, "session_id", None) != state.session_id:
        return _party_abort(state, "protocol_violation", f"message from unknown session or sender {sender}", sender)

    if isinstance(msg, Start) and state.phase == PartyPhase.SENT_READY:
        if state.site_id not in msg.roster:
            return _party_abort(state, "protocol_violation", "not on the roster", sender)
        if msg.scheme_id != state.scheme_id:
            return _party_abort(state, "protocol_violation", f"envelope scheme {msg.scheme_id!r} unsupported", sender)
        state = replace(state, phase=PartyPhase.FITTING)
        try:
            counts, stats, columns, labels = fit_fragment(state.fragment, msg)
        except InsufficientClassData as exc:
            return _party_abort(state, "fit", str(exc), sender)
        except errors.DataError as exc:
            return _party_abort(state, "fit", f"{type(exc).__name__}: {exc}", sender)
        if msg.mode == "records":
            payload = records_payload(state.site_id, labels, columns)
        else:
            payload = stats_payload(state.site_id, counts, stats)
        scheme = get_scheme(state.scheme_id)
        envelope = scheme.seal(payload, msg.coordinator_public_key, state.keys.private_part, sender_name(state.site_id))
        out = Stats(state.session_id, state.site_id, envelope)
        return replace(state, phase=PartyPhase.SENT_STATS), [(sender, out)]

    if isinstance(msg, Model) and state.phase == PartyPhase.SENT_STATS:
        try:
            model = GaussianNBModel.from_dict(msg.model)
        except (KeyError, TypeError, ValueError) as exc:
            return _party_abort(state, "protocol_violation", f"malformed model: {exc}", sender)
        return replace(state, phase=PartyPhase.HAS_MODEL, model=model), []

    return _party_abort(
        state, "protocol_violation", f"unexpected {type(msg).__name__.lower()} in phase {state.phase.name}", sender
    )


ERROR_CLASSES = {
    "protocol_violation": errors.ProtocolViolation,
    "consistency": errors.ConsistencyError,
    "timeout": errors.Timeout,
    "fit": errors.FitError,
    "envelope": errors.EnvelopeRejected,
    "aborted": errors.SessionAborted,
}
