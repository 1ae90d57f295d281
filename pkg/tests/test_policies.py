import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttamem.memory import annotate, heuristic_score, new_memory, tick_ages
from ttamem.policies import (PolicyConfig, PolicyKind, cds_insert, cstu_insert, fifo_insert,
                             fps_insert, fpsd_refresh, insert_candidate, pbrs_insert,
                             process_batch, reservoir_insert)
from ttamem.proxy import ProxyModel

from conftest import make_entry

ALL_KINDS = list(PolicyKind)


def _observe_insert(fn, state, cand, *args):
    state.observe(cand)
    return fn(state, cand, *args)


# ----------------------------------------------------------------- driver

def test_no_memory_is_identity(rng):
    state = new_memory(8, 3)
    cands = [make_entry(np.eye(3)[i % 3]) for i in range(20)]
    process_batch(state, cands, PolicyConfig(PolicyKind.NO_MEMORY), None, rng)
    assert len(state) == 0


def test_fifo_keeps_last_window(rng):
    state = new_memory(32, 3)
    cands = [make_entry(np.eye(3)[i % 3]) for i in range(40)]
    process_batch(state, cands, PolicyConfig(PolicyKind.FIFO), None, rng)
    kept = sorted(state, key=lambda e: e.order)
    assert [e.sample_id for e in kept] == [c.sample_id for c in cands[8:]]


def test_fifo_duplicated_stream_tail_window():
    # k images each repeated 4 times in a row: the buffer is the 32-long tail
    k, n = 20, 32
    state = new_memory(n, 2)
    stream = [make_entry([0.9, 0.1], group=g) for g in range(k) for _ in range(4)]
    for c in stream:
        _observe_insert(fifo_insert, state, c)
    assert sorted(e.group_id for e in state) == sorted(c.group_id for c in stream[-n:])
    assert {e.group_id for e in state} == set(range(k - 8, k))


def test_fps_identical_candidates_one_per_label(rng):
    state = new_memory(32, 3)
    a = [make_entry([0.7, 0.2, 0.1]) for _ in range(30)]
    b = [make_entry([0.1, 0.1, 0.8]) for _ in range(30)]
    process_batch(state, a + b, PolicyConfig(PolicyKind.FPS), None, rng)
    assert [len(p) for p in state.partitions] == [1, 0, 1]


def test_process_batch_ticks_once(rng):
    state = new_memory(8, 2)
    process_batch(state, [make_entry([1.0, 0.0])], PolicyConfig(PolicyKind.FIFO), None, rng)
    process_batch(state, [make_entry([0.0, 1.0])], PolicyConfig(PolicyKind.FIFO), None, rng)
    assert sorted(e.age for e in state) == [1, 2]
    assert state.batch_counter == 2


def test_process_batch_rejects_bad_label(rng):
    state = new_memory(8, 2)
    bad = make_entry([1.0, 0.0], label=5)
    with pytest.raises(ValueError):
        process_batch(state, [bad], PolicyConfig(PolicyKind.FIFO), None, rng)


# -------------------------------------------------------------- reservoir

def test_reservoir_warmup(rng):
    state = new_memory(5, 2)
    for i in range(5):
        assert _observe_insert(reservoir_insert, state, make_entry([1.0, 0.0]), rng)
    assert len(state) == 5


def test_reservoir_n1_two_candidates_half():
    # Algorithm R with N=1: the second item survives with probability 1/2
    hits, trials = 0, 20_000
    rng = np.random.default_rng(7)
    for _ in range(trials):
        state = new_memory(1, 2)
        first, second = make_entry([1.0, 0.0]), make_entry([1.0, 0.0])
        _observe_insert(reservoir_insert, state, first, rng)
        _observe_insert(reservoir_insert, state, second, rng)
        hits += state.entries()[0] is second
    sigma = math.sqrt(0.25 / trials)
    assert abs(hits / trials - 0.5) < 4 * sigma


# ------------------------------------------------------------------- PBRS

def test_pbrs_empty_inserts(rng):
    state = new_memory(4, 3)
    assert _observe_insert(pbrs_insert, state, make_entry([1, 0, 0]), rng)


def test_pbrs_new_class_takes_from_dominant(rng):
    state = new_memory(6, 3)
    for _ in range(5):
        _observe_insert(pbrs_insert, state, make_entry([1, 0, 0]), rng)
    _observe_insert(pbrs_insert, state, make_entry([0, 1, 0]), rng)
    assert [len(p) for p in state.partitions] == [5, 1, 0]
    _observe_insert(pbrs_insert, state, make_entry([0, 0, 1]), rng)
    assert [len(p) for p in state.partitions] == [4, 1, 1]


def test_pbrs_majority_candidate_probability():
    # majority candidate kept with probability quota / seen_count
    kept, trials = 0, 4000
    rng = np.random.default_rng(3)
    for _ in range(trials):
        state = new_memory(4, 2)
        for _ in range(4):
            _observe_insert(pbrs_insert, state, make_entry([1.0, 0.0]), rng)
        for _ in range(3):
            state.observe(make_entry([1.0, 0.0]))
        # quota 4 (one observed class), seen 8 after this candidate -> 1/2
        kept += _observe_insert(pbrs_insert, state, make_entry([1.0, 0.0]), rng)
    assert abs(kept / trials - 0.5) < 4 * math.sqrt(0.25 / trials)


# ------------------------------------------------------------------- CSTU

def test_cstu_inserts_under_quota():
    state = new_memory(4, 2)
    assert _observe_insert(cstu_insert, state, make_entry([1.0, 0.0]))


def _full_class0(n, c, **kw):
    state = new_memory(n, c)
    stored = []
    for _ in range(n):
        e = make_entry(np.eye(c)[0])
        state.observe(e)
        state.add(e)
        stored.append(e)
    for k, v in kw.items():
        for e in stored:
            setattr(e, k, v)
    return state, stored


def test_cstu_evicts_old_uncertain():
    state, stored = _full_class0(2, 10, age=2, uncertainty=math.log(10))
    # age == N and maximal entropy: H = 1.731 vs 0.5 for a fresh certain candidate
    assert heuristic_score(stored[0], state) == pytest.approx(1.7310586, abs=1e-7)
    cand = make_entry(np.eye(10)[0])
    assert _observe_insert(cstu_insert, state, cand)
    assert cand in state.entries() and len(state) == 2


def test_cstu_discards_uncertain_candidate():
    state, stored = _full_class0(2, 10, age=0, uncertainty=0.0)
    cand = make_entry(np.eye(10)[0], uncertainty=math.log(10))
    assert not _observe_insert(cstu_insert, state, cand)
    assert state.entries() == stored


# -------------------------------------------------------------------- FPS

def test_fps_rejects_exact_duplicate():
    state = new_memory(8, 2)
    first = make_entry([0.8, 0.2])
    _observe_insert(fps_insert, state, first, PolicyConfig())
    dup = make_entry([0.8, 0.2])
    assert not _observe_insert(fps_insert, state, dup, PolicyConfig())
    assert state.entries() == [first]


def test_fps_empty_partition_inserts():
    state = new_memory(8, 2)
    assert _observe_insert(fps_insert, state, make_entry([0.3, 0.7]), PolicyConfig())


def test_fps_full_partition_hand_example():
    u = 0.673
    state = new_memory(32, 2, fixed_quota=1)
    stored = make_entry([1.0, 0.0], uncertainty=u)
    state.observe(stored)
    state.add(stored)
    stored.age = 10
    cand = make_entry([0.6, 0.4], uncertainty=u)
    h_stored = 1 / (1 + math.exp(-10 / 32)) + u / math.log(2)
    h_cand = 0.5 + u / math.log(2)
    assert heuristic_score(stored, state) == pytest.approx(h_stored, abs=1e-12)
    assert h_stored == pytest.approx(1.548, abs=1e-3) and h_cand == pytest.approx(1.471, abs=1e-3)
    assert math.hypot(0.4, 0.4) == pytest.approx(0.566, abs=1e-3)
    assert _observe_insert(fps_insert, state, cand, PolicyConfig())
    assert state.entries() == [cand]


def test_fps_keeps_stored_when_candidate_more_evictable():
    state = new_memory(32, 2, fixed_quota=1)
    stored = make_entry([1.0, 0.0])
    state.observe(stored)
    state.add(stored)
    cand = make_entry([0.6, 0.4], uncertainty=0.673)
    assert not _observe_insert(fps_insert, state, cand, PolicyConfig())
    assert state.entries() == [stored]


def test_fps_swap_blocked_by_second_neighbour():
    # nearest would be evicted, but the next one is within epsilon: no change
    state = new_memory(32, 2, fixed_quota=2)
    a, b = make_entry([0.800, 0.200]), make_entry([0.806, 0.194])
    for e in (a, b):
        state.observe(e)
        state.add(e)
        e.age = 50
    # 0.00424 from both stored entries, which are 0.00849 apart
    cand = make_entry([0.803, 0.197])
    assert not _observe_insert(fps_insert, state, cand, PolicyConfig(epsilon=0.005))
    assert set(map(id, state)) == {id(a), id(b)}


def test_fps_minority_class_grows_when_full():
    state = new_memory(4, 2)
    for i in range(4):
        e = make_entry([0.9 - 0.05 * i, 0.1 + 0.05 * i])
        _observe_insert(fps_insert, state, e, PolicyConfig())
    assert [len(p) for p in state.partitions] == [4, 0]
    for e in state:
        e.age = 5
    assert _observe_insert(fps_insert, state, make_entry([0.2, 0.8]), PolicyConfig())
    assert [len(p) for p in state.partitions] == [3, 1]


# ------------------------------------------------------------------- FPSD

def _model_and_state(n=6):
    protos = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    model = ProxyModel(protos, temperature=1.0, learning_rate=0.5)
    state = new_memory(16, 3)
    xs = np.array([[0.2, 0.1], [0.4, -0.2], [2.5, 0.3], [2.9, -0.4], [0.1, 2.7], [1.0, 1.2]])[:n]
    for i, (x, p) in enumerate(zip(xs, model.predict(xs))):
        e = annotate(x, p, i)
        state.observe(e)
        state.add(e)
    return model, state


def test_fpsd_refresh_fixed_point():
    model, state = _model_and_state()
    before = [(e.sample_id, e.pseudo_label, e.uncertainty, e.representation.copy(), e.age)
              for e in state]
    fpsd_refresh(state, model)
    after = [(e.sample_id, e.pseudo_label, e.uncertainty, e.representation, e.age) for e in state]
    assert len(before) == len(after)
    for b, a in zip(before, after):
        assert b[0] == a[0] and b[1] == a[1] and b[2] == a[2] and b[4] == a[4]
        np.testing.assert_array_equal(b[3], a[3])
    state.audit()


def test_fpsd_refresh_migrates():
    model, state = _model_and_state()
    target = next(e for e in state if e.sample_id == 0)
    assert target.pseudo_label == 0
    model.prototypes[1] = target.features
    tick_before = target.age = 4
    fpsd_refresh(state, model)
    state.audit()
    assert target in state.partitions[1]
    assert target.age == tick_before


def test_fpsd_refresh_cadence():
    model, state = _model_and_state()
    cfg = PolicyConfig(PolicyKind.FPSD, refresh_period=16)
    rng = np.random.default_rng(0)
    for _ in range(48):
        process_batch(state, [], cfg, model, rng)
    assert state.refresh_count == 3


# -------------------------------------------------------------------- CDS

def test_cds_below_quota_direct_insert():
    state = new_memory(8, 2)
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    assert _observe_insert(cds_insert, state, make_entry([0.9, 0.1]), PolicyConfig(PolicyKind.CDS), rng)
    assert rng.bit_generator.state == before


def test_cds_colinear_discarded():
    state = new_memory(2, 2, fixed_quota=2)
    for v in ([0.9, 0.1], [0.6, 0.4]):
        e = make_entry(v)
        state.observe(e)
        state.add(e)
    cand = make_entry([0.45, 0.05])  # colinear with (0.9, 0.1)
    cfg = PolicyConfig(PolicyKind.CDS, subset_size=8)
    assert not _observe_insert(cds_insert, state, cand, cfg, np.random.default_rng(0))
    assert cand not in state.entries()


def test_cds_ten_degree_example():
    e1 = make_entry([1.0, 0.0, 0.0], label=0)
    e2 = make_entry([0.0, 1.0, 0.0], label=0)
    state = new_memory(2, 3, fixed_quota=2)
    for e in (e1, e2):
        state.observe(e)
        state.add(e)
    th = math.radians(10)
    cand = make_entry([math.cos(th), 0.0, math.sin(th)], label=0)
    # similarity matrix rows: e1 -> cos10, e2 -> 0, cand -> cos10; tie goes to e1
    cfg = PolicyConfig(PolicyKind.CDS)
    assert _observe_insert(cds_insert, state, cand, cfg, np.random.default_rng(0))
    assert e1 not in state.entries() and e2 in state.entries() and cand in state.entries()


def test_cds_most_similar_pair_loses_stored_member():
    # the row maximum is shared by both members of the closest pair, so the
    # stored member is evicted whenever the candidate belongs to that pair
    e1 = make_entry([1.0, 0.0, 0.0], label=0)
    e2 = make_entry([0.0, 1.0, 0.0], label=0)
    e3 = make_entry([0.0, 0.0, 1.0], label=0)
    state = new_memory(3, 3, fixed_quota=3)
    for e in (e1, e2, e3):
        state.observe(e)
        state.add(e)
    cand = make_entry([0.1, 1.0, 0.0], label=0)
    cfg = PolicyConfig(PolicyKind.CDS, epsilon=0.0)
    assert _observe_insert(cds_insert, state, cand, cfg, np.random.default_rng(0))
    assert e2 not in state.entries()
    assert cand in state.entries() and e1 in state.entries() and e3 in state.entries()


# ------------------------------------------------------------- properties

def _random_candidate(rng, c, dim_mode):
    if dim_mode == "prob":
        p = rng.dirichlet(np.full(c, 0.3))
        # quantize so that exact and near collisions actually happen
        p = np.round(p, 2)
        p = p / p.sum()
        return annotate(p, p, int(rng.integers(1 << 30)), group_id=int(rng.integers(5)))
    x = np.round(rng.normal(size=3), 1)
    p = rng.dirichlet(np.ones(c))
    return annotate(x, p, int(rng.integers(1 << 30)), representation="features")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ALL_KINDS), st.integers(1, 12), st.integers(2, 6),
       st.integers(0, 2**32 - 1), st.sampled_from(["prob", "feat"]))
def test_policy_invariants(kind, n, c, seed, mode):
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(c, c if mode == "prob" else 3))
    model = ProxyModel(protos)
    state = new_memory(n, c, representation="probability" if mode == "prob" else "features")
    cfg = PolicyConfig(kind, epsilon=0.01, refresh_period=3, subset_size=3)
    prev_max = None
    for _ in range(8):
        batch = [_random_candidate(rng, c, mode) for _ in range(int(rng.integers(1, 10)))]
        for cand in batch:
            size_before = len(state)
            state.observe(cand)
            resident = insert_candidate(state, cand, cfg, rng)
            state.audit()
            if kind in (PolicyKind.FPS, PolicyKind.FPSD):
                assert len(state) >= size_before
            assert resident == (cand in state.entries()) or kind is PolicyKind.NO_MEMORY
            if kind in (PolicyKind.CSTU, PolicyKind.CDS, PolicyKind.FPS, PolicyKind.PBRS) and size_before == n:
                # once full, class-guided policies never grow the largest partition
                top = max(len(p) for p in state.partitions)
                assert prev_max is None or top <= prev_max
            if len(state) == n:
                prev_max = max(len(p) for p in state.partitions)
        tick_ages(state)
        state.batch_counter += 1
        if kind is PolicyKind.FPSD and state.batch_counter % cfg.refresh_period == 0:
            fpsd_refresh(state, model)
            prev_max = max(len(p) for p in state.partitions)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 10), st.integers(2, 5), st.integers(0, 2**32 - 1),
       st.sampled_from([0.001, 0.005, 0.01, 0.05]))
def test_fps_separation(n, c, seed, eps):
    rng = np.random.default_rng(seed)
    state = new_memory(n, c)
    cfg = PolicyConfig(PolicyKind.FPS, epsilon=eps)
    for step in range(40):
        cand = _random_candidate(rng, c, "prob")
        state.observe(cand)
        fps_insert(state, cand, cfg)
        for part in state.partitions:
            z = np.stack([e.representation for e in part]) if len(part) > 1 else None
            if z is not None:
                d = np.linalg.norm(z[:, None] - z[None], axis=-1)
                assert d[np.triu_indices(len(part), 1)].min() > eps
        if step % 5 == 4:
            for e in state:
                e.age += 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(2, 4), st.integers(0, 2**32 - 1),
       st.sampled_from([0.001, 0.005, 0.05]))
def test_cds_post_filter(n, c, seed, eps):
    rng = np.random.default_rng(seed)
    state = new_memory(n, c)
    cfg = PolicyConfig(PolicyKind.CDS, epsilon=eps, subset_size=4)
    for _ in range(40):
        cand = _random_candidate(rng, c, "prob")
        part = list(state.partitions[cand.pseudo_label])
        state.observe(cand)
        full_or_at_quota = state.is_full or len(part) >= state.quota()
        probe = np.random.default_rng(0)
        probe.bit_generator.state = rng.bit_generator.state
        cds_insert(state, cand, cfg, rng)
        if full_or_at_quota and part:
            k = min(cfg.subset_size, len(part))
            subset = probe.choice(len(part), size=k, replace=False)
            z = np.stack([part[i].representation for i in subset])
            z = z / (np.linalg.norm(z, axis=1, keepdims=True) + 1e-12)
            zc = cand.representation / (np.linalg.norm(cand.representation) + 1e-12)
            if (z @ zc).max() >= 1 - eps:
                assert cand not in state.entries()


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_determinism(kind):
    def go():
        rng = np.random.default_rng(99)
        model = ProxyModel(np.random.default_rng(1).normal(size=(4, 3)))
        state = new_memory(10, 4)
        cfg = PolicyConfig(kind, refresh_period=2)
        data = np.random.default_rng(5)
        for t in range(12):
            xs = data.normal(size=(16, 3))
            cands = [annotate(x, p, t * 100 + i) for i, (x, p) in enumerate(zip(xs, model.predict(xs)))]
            process_batch(state, cands, cfg, model, rng)
            model.adapt_from_memory(state)
        return [(e.sample_id, e.pseudo_label, e.age, e.representation.tobytes()) for e in state]

    assert go() == go()
