import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpsched.metrics import (
    MergeError,
    MetricsAccumulator,
    UndefinedMetricError,
    merge,
    record_slot,
    summarize,
)
from pmpsched.sim import ScenarioConfig, SlotRecord, run_replication, simulate

CFG = ScenarioConfig(T=4, W=2, s=2, N=4, lam=0.9, pbd=0.5, horizon=3000)


def rec(**kw):
    base = dict(arrivals=0, blocked=0, active_before=0, targeted=0, leader_rank=0, leader_blocked=False,
                leader_useful=0, served_drive=None, served_chunk=None, departures=0, excluded=0)
    base.update(kw)
    return SlotRecord(**base)


def test_record_slot_examples():
    acc = record_slot(MetricsAccumulator.empty(CFG), rec())
    assert acc.slots_counted == 1 and acc.nonempty_slots == 0 and acc.arrivals_total == 0
    acc = record_slot(acc, rec(arrivals=2, blocked=2))
    assert (acc.arrivals_total, acc.blocked_total) == (2, 2)
    acc = record_slot(acc, rec(active_before=4, targeted=4, leader_rank=1, leader_useful=3))
    assert acc.throughput_sum == 1.0
    assert acc.rank_observed[1] == 1 and acc.rank_blocked[1] == 0


def test_from_trace_matches_slot_by_slot():
    tr = simulate(CFG, 0)
    fast = MetricsAccumulator.from_trace(tr, CFG)
    slow = MetricsAccumulator.empty(CFG)
    for row in tr[CFG.warmup_slots:]:
        record_slot(slow, SlotRecord.from_row(row))
    assert fast == slow


def test_merge_identity_and_mismatch():
    a = run_replication(CFG, 0)
    assert merge(a, MetricsAccumulator.empty(CFG)) == a
    assert merge(MetricsAccumulator.empty(CFG), a) == a
    with pytest.raises(MergeError):
        merge(a, MetricsAccumulator.empty(CFG.with_(N=5)))
    with pytest.raises(MergeError):
        merge(a, MetricsAccumulator.empty(CFG.with_(pbd=0.4)))


def test_merging_replications_equals_one_pass():
    accs = [run_replication(CFG, k) for k in range(20)]
    total = MetricsAccumulator.empty(CFG)
    for a in accs:
        total = merge(total, a)
    one = MetricsAccumulator.empty(CFG)
    for k in range(20):
        for row in simulate(CFG, k)[CFG.warmup_slots:]:
            record_slot(one, SlotRecord.from_row(row))
    assert total == one


def _random_acc(rng):
    a = MetricsAccumulator.empty(CFG)
    for _ in range(int(rng.integers(0, 30))):
        active = int(rng.integers(0, 5))
        arrivals = int(rng.integers(0, 4))
        record_slot(a, rec(arrivals=arrivals, blocked=int(rng.integers(0, arrivals + 1)), active_before=active,
                           targeted=int(rng.integers(0, active + 1)), leader_rank=int(rng.integers(0, 4)),
                           leader_blocked=bool(rng.integers(0, 2)) and active > 0,
                           leader_useful=int(rng.integers(0, 5))))
    return a


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_merge_commutative_and_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_acc(rng) for _ in range(3))
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))
    s = merge(a, b)
    assert s.blocked_total <= s.arrivals_total
    assert np.all(s.rank_blocked <= s.rank_observed)


def test_summarize_all_blocked():
    a = MetricsAccumulator.empty(CFG)
    record_slot(a, rec(arrivals=3, blocked=3, active_before=4, targeted=2, leader_useful=2))
    st_ = summarize([a])
    assert st_.ext_block_prob == 1.0
    assert st_.throughput_norm == 0.5 and st_.throughput_raw == 2.0


def test_summarize_no_arrivals():
    with pytest.raises(UndefinedMetricError):
        summarize([MetricsAccumulator.empty(CFG)])
    with pytest.raises(UndefinedMetricError):
        summarize([])


def test_infinite_io_throughput_is_exactly_one():
    c = CFG.with_(mode="UNCODED_INF")
    st_ = summarize([run_replication(c, k) for k in range(3)])
    assert st_.throughput_norm == 1.0
    assert st_.throughput_norm_se == 0.0


def test_standard_error_from_replication_means():
    accs = [run_replication(CFG, k) for k in range(5)]
    st_ = summarize(accs)
    per = np.array([a.blocked_total / a.arrivals_total for a in accs])
    assert st_.ext_block_se == pytest.approx(per.std(ddof=1) / np.sqrt(5))
    assert 0 <= st_.throughput_norm <= 1


def test_leader_curve_suppresses_sparse_ranks():
    st_ = summarize([run_replication(CFG, k) for k in range(2)])
    assert all(p.n_obs >= 100 for p in st_.leader_block_curve.values())
    loose = summarize([run_replication(CFG, k) for k in range(2)], min_obs=1)
    assert set(st_.leader_block_curve) <= set(loose.leader_block_curve)
