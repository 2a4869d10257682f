import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttpnb.dataset import PartitionedTable, SplitPlan, generate_splits
from ttpnb.errors import ConsistencyError, FitError, ProtocolViolation, Timeout
from ttpnb.model import assemble_model, baseline_fit, fit_columns
from ttpnb.perturb import Absolute, PerturbedColumn, RatioOfSampleVariance, perturb_table
from ttpnb.protocol import (
    COORDINATOR,
    Abort,
    CoordinatorPhase,
    Init,
    Model,
    PartyPhase,
    Ready,
    Received,
    StartTrigger,
    TimerExpired,
    coordinator_step,
    decode_message,
    encode_message,
    new_coordinator,
    party_step,
    site_channel,
)
from ttpnb.session import execute_session, run_inprocess
from ttpnb.transport import InProcessNetwork

from conftest import build_session, make_table

SENTINEL = "123456.789"


def expected_sequence(k):
    return ["init"] * k + ["ready"] * k + ["start"] * k + ["stats"] * k + ["model"] * k


@pytest.mark.parametrize("k", [2, 3])
@pytest.mark.parametrize("scheme", ["null", "rsa"])
def test_message_sequence(synthetic, k, scheme):
    coord, parties = build_session(synthetic, k, scheme)
    result = execute_session(coord, parties)
    assert result.message_types() == expected_sequence(k)
    assert result.coordinator.phase == CoordinatorPhase.DONE
    assert all(p.phase == PartyPhase.HAS_MODEL for p in result.parties)
    assert all(p.model.to_json() == result.model.to_json() for p in result.parties)


def test_wire_type_names(synthetic):
    coord, parties = build_session(synthetic, 2)
    result = execute_session(coord, parties)
    assert {json.loads(t.body)["type"] for t in result.trace} == {"init", "ready", "start", "stats", "model"}


def test_replay_is_byte_identical(synthetic):
    runs = []
    for _ in range(2):
        coord, parties = build_session(synthetic, 3, noise_mode=RatioOfSampleVariance(0.25))
        runs.append(execute_session(coord, parties))
    a, b = runs
    assert [(t.src, t.dst, t.body) for t in a.trace] == [(t.src, t.dst, t.body) for t in b.trace]

    # Feeding the recorded deliveries back through fresh step functions
    # reproduces every outgoing message.
    coord, parties = build_session(synthetic, 3, noise_mode=RatioOfSampleVariance(0.25))
    states = {COORDINATOR: coord, **{site_channel(p.site_id): p for p in parties}}
    steps = {COORDINATOR: coordinator_step, **{site_channel(p.site_id): party_step for p in parties}}
    nodes = list(states)

    def expand(src, out):
        return [(src, t, encode_message(m)) for dst, m in out
                for t in ([n for n in nodes if n != src] if dst == "*" else [dst])]

    states[COORDINATOR], out = coordinator_step(coord, StartTrigger())
    sent = expand(COORDINATOR, out)
    for d in a.deliveries:
        states[d.dst], out = steps[d.dst](states[d.dst], Received(d.src, decode_message(d.body)))
        sent.extend(expand(d.dst, out))
    assert sent == [(t.src, t.dst, t.body) for t in a.trace]
    assert states[COORDINATOR].model.to_json() == a.model.to_json()


def test_out_of_phase_message_aborts(synthetic):
    coord, parties = build_session(synthetic, 2)
    net = InProcessNetwork([COORDINATOR, site_channel(0), site_channel(1)])
    bogus = Model("s", {"class_labels": []})
    net.send(site_channel(0), COORDINATOR, encode_message(bogus))
    with pytest.raises(ProtocolViolation) as info:
        execute_session(coord, parties, net)
    types = [t.type for t in info.value.trace]
    assert "abort" in types and "model" not in types
    assert info.value.result.coordinator.phase == CoordinatorPhase.ABORTED
    assert all(p.phase == PartyPhase.ABORTED for p in info.value.result.parties)


def test_garbage_frame_aborts(synthetic):
    coord, parties = build_session(synthetic, 2)
    net = InProcessNetwork([COORDINATOR, site_channel(0), site_channel(1)])
    net.send(site_channel(1), COORDINATOR, b"\x00not json")
    with pytest.raises(ProtocolViolation):
        execute_session(coord, parties, net)


def test_coordinator_step_examples():
    coord, _ = build_session(make_table(np.zeros((4, 2)), list("aabb")), 2)
    s, out = coordinator_step(coord, StartTrigger())
    assert s.phase == CoordinatorPhase.COLLECTING_READY
    assert out == [("*", Init("s", 1, 2))]
    s, out = coordinator_step(s, Received("site-1", Ready("s", 1, b"null-public")))
    assert out == [] and s.phase == CoordinatorPhase.COLLECTING_READY
    s2, out = coordinator_step(s, Received("site-1", Ready("s", 1, b"null-public")))
    assert s2.phase == CoordinatorPhase.ABORTED
    s, out = coordinator_step(s, Received("site-0", Ready("s", 0, b"null-public")))
    assert s.phase == CoordinatorPhase.COLLECTING_STATS
    assert s.roster == (0, 1)
    assert [dst for dst, _ in out] == ["site-0", "site-1"]
    # A late enrolment is refused without aborting the session.
    s3, out = coordinator_step(s, Received("site-9", Ready("s", 9, b"null-public")))
    assert s3 is s and out[0][0] == "site-9" and isinstance(out[0][1], Abort)
    # Messages for another session are turned away.
    s4, out = coordinator_step(s, Received("site-0", Ready("other", 0, b"k")))
    assert s4 is s and out[0][1].session_id == "other"


def test_coordinator_timeout():
    coord, parties = build_session(make_table(np.zeros((4, 2)), list("aabb")), 2)
    s, _ = coordinator_step(coord, StartTrigger())
    s, out = coordinator_step(s, TimerExpired())
    assert s.phase == CoordinatorPhase.ABORTED and s.error[0] == "timeout"
    with pytest.raises(Timeout):
        execute_session(coord, parties[:1])


def test_party_step_examples(synthetic):
    _, (party, _, _) = build_session(synthetic, 3)
    p, out = party_step(party, Received(COORDINATOR, Init("s", 1, 3)))
    assert p.phase == PartyPhase.SENT_READY
    assert out == [(COORDINATOR, Ready("s", 0, b"null-public"))]
    p2, out = party_step(p, Received(COORDINATOR, Init("s", 1, 3)))
    assert p2.phase == PartyPhase.ABORTED and isinstance(out[0][1], Abort)
    p3, out = party_step(party, Received(COORDINATOR, Init("s", 99, 3)))
    assert p3.phase == PartyPhase.ABORTED
    p4, out = party_step(p, Received(COORDINATOR, Abort("s", "bye")))
    assert p4.phase == PartyPhase.ABORTED and out == []


def test_mismatched_class_counts(synthetic):
    coord, parties = build_session(synthetic, 2)
    frag = parties[1].fragment
    train, _ = generate_splits(synthetic.n_rows, SplitPlan(seed=42, repeats=1))[0]
    flipped = list(frag.labels)
    flipped[train[0]] = "yes" if flipped[train[0]] == "no" else "no"
    bad = PartitionedTable(frag.name, frag.attribute_names, frag.row_ids, frag.values, tuple(flipped), site_id=1)
    parties[1] = replace(parties[1], fragment=bad)
    with pytest.raises(ConsistencyError):
        execute_session(coord, parties)


def test_overlapping_attributes(synthetic):
    coord, parties = build_session(synthetic, 2)
    parties[1] = replace(parties[1], fragment=replace(parties[0].fragment, site_id=1))
    with pytest.raises(ConsistencyError, match="held by"):
        execute_session(coord, parties)


def test_single_training_row_is_fit_error():
    labels = ["a"] * 9 + ["b"]
    t = make_table(np.arange(20.0).reshape(10, 2), labels)
    seed = next(s for s in range(100)
                if 9 in generate_splits(10, SplitPlan(seed=s, repeats=1))[0][0])
    coord, parties = build_session(t, 2, plan=SplitPlan(seed=seed, repeats=1))
    with pytest.raises(FitError):
        execute_session(coord, parties)


def test_envelope_rejection_is_reported(synthetic):
    coord, parties = build_session(synthetic, 2, scheme="rsa")
    # The site claims a key it does not hold, so its signature fails.
    other = new_coordinator(coord.config, "rsa").keys
    parties[0] = replace(parties[0], keys=replace(parties[0].keys, public_part=other.public_part))
    from ttpnb.errors import EnvelopeRejected

    with pytest.raises(EnvelopeRejected):
        execute_session(coord, parties)


@settings(max_examples=10, deadline=None)
@given(st.permutations([0, 1, 2]))
def test_arrival_order_does_not_matter(order):
    rng = np.random.default_rng(3)
    t = make_table(rng.normal(size=(40, 5)), ["p", "q"] * 20)
    coord, parties = build_session(t, 3, noise_mode=Absolute(0.5))
    ref = execute_session(coord, parties).model.to_json()
    coord, parties = build_session(t, 3, noise_mode=Absolute(0.5))
    assert execute_session(coord, [parties[i] for i in order]).model.to_json() == ref


def test_records_mode_matches_stats_mode(synthetic):
    models = []
    for mode in ("stats", "records"):
        coord, parties = build_session(synthetic, 3, noise_mode=RatioOfSampleVariance(0.5), mode=mode)
        models.append(execute_session(coord, parties).model.to_json())
    assert models[0] == models[1]


def test_zero_noise_equals_baseline(synthetic):
    plan = SplitPlan(seed=11, repeats=3)
    for i in range(3):
        coord, parties = build_session(synthetic, 3, plan=plan, split_index=i)
        model = execute_session(coord, parties).model
        train, _ = generate_splits(synthetic.n_rows, plan)[i]
        assert model.to_json() == baseline_fit(synthetic, train).to_json()


def test_one_party_equals_single_site_pipeline(synthetic):
    plan = SplitPlan(seed=4, repeats=1)
    mode = RatioOfSampleVariance(0.25)
    coord, parties = build_session(synthetic, 1, plan=plan, noise_mode=mode, noise_seed=9)
    model = execute_session(coord, parties).model
    train, _ = generate_splits(synthetic.n_rows, plan)[0]
    pos = synthetic.positions(train)
    cols = [PerturbedColumn(c.attribute_name, c.values[pos], c.noise_variance)
            for c in perturb_table(synthetic, mode, "gaussian", 9)]
    counts, stats = fit_columns(cols, [synthetic.labels[p] for p in pos])
    assert model.to_json() == assemble_model(stats, counts).to_json()


@pytest.mark.parametrize("mode", ["stats", "records"])
def test_sentinel_never_on_the_wire(mode):
    rng = np.random.default_rng(8)
    values = rng.normal(size=(60, 4))
    values[:, 2] = float(SENTINEL)
    t = make_table(values, ["p", "q"] * 30)
    # NullScheme leaves payloads readable, the harshest case for this scan.
    coord, parties = build_session(t, 2, noise_mode=Absolute(1.0), mode=mode)
    result = execute_session(coord, parties)
    for entry in result.trace:
        assert SENTINEL.encode() not in entry.body
