import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpsched import sim
from pmpsched.analytics import erlang_blocking
from pmpsched.metrics import UndefinedMetricError, summarize
from pmpsched.sim import (
    ConfigError,
    ScenarioConfig,
    SimState,
    admit,
    broadcast_update,
    depart,
    run_replication,
    run_slot,
    sample_arrivals,
    sample_availability,
    simulate,
)


def cfg(**kw):
    base = dict(T=4, W=2, s=2, N=4, lam=0.5, pbd=0.5, mode="UNCODED_FIN", horizon=2000)
    base.update(kw)
    return ScenarioConfig(**base)


def test_poisson_arrivals():
    rng = np.random.default_rng(5)
    assert all(sample_arrivals(0.0, rng) == 0 for _ in range(100))
    draws = rng.poisson(0.9, size=10**6)
    assert abs(draws.mean() - 0.9) < 0.01
    assert abs((draws == 0).mean() - math.exp(-0.9)) < 0.005
    with pytest.raises(ConfigError):
        sample_arrivals(-1.0, rng)


def test_stream_arrivals_are_poisson():
    st_ = sim.Streams.for_replication(0, 0)
    a, _, _ = st_.draw(10**6, 0.9, 1)
    assert abs(a.mean() - 0.9) < 0.01
    assert abs((a == 0).mean() - math.exp(-0.9)) < 0.005


def test_availability_sampling():
    rng = np.random.default_rng(6)
    assert not sample_availability(8, 0.0, rng).any()
    assert sample_availability(8, 1.0, rng).all()
    rate = np.mean([sample_availability(8, 0.5, rng) for _ in range(10**5)], axis=0)
    assert np.all(np.abs(rate - 0.5) < 0.01)


def test_admit_capacity():
    s = SimState(cfg(N=3))
    assert admit(s, 1) == (1, 0)
    assert admit(s, 2) == (2, 0)
    assert admit(s, 3) == (0, 3)
    s = SimState(cfg(N=3))
    admit(s, 2)
    assert admit(s, 2) == (1, 1)
    assert [u.id for u in s.active] == [0, 1, 2]


def test_broadcast_single_user():
    s = SimState(cfg())
    admit(s, 1)
    assert broadcast_update(s, 3) == 1
    assert s.active[0].rank == 1


def test_broadcast_skips_users_who_have_the_chunk():
    s = SimState(cfg())
    admit(s, 1)
    broadcast_update(s, 1)
    admit(s, 1)
    assert broadcast_update(s, 1) == 1
    assert [u.rank for u in s.active] == [1, 1]


def test_broadcast_unknown_chunk():
    with pytest.raises(KeyError):
        broadcast_update(SimState(cfg()), 99)


def test_coded_broadcast_counts_innovative_users():
    s = SimState(cfg(mode="CODED_FIN", exact_rank=True))
    admit(s, 2)
    assert broadcast_update(s, 0) == 2
    assert broadcast_update(s, 0) == 0


def test_last_chunk_departs_same_slot():
    s = SimState(cfg(T=2, W=1, s=2, N=1, lam=0.0, pbd=0.0))
    admit(s, 1)
    assert run_slot(s).departures == 0
    rec = run_slot(s)
    assert rec.targeted == 1 and rec.departures == 1
    assert s.active == []


def test_idle_slot():
    rec = run_slot(SimState(cfg(lam=0.0)))
    assert rec.targeted == 0 and rec.active_before == 0 and rec.served_drive is None


def test_all_drives_busy():
    s = SimState(cfg(pbd=1.0, lam=0.0))
    admit(s, 2)
    rec = run_slot(s)
    assert rec.leader_blocked and rec.targeted == 0 and rec.excluded == 2
    assert depart(s) == 0


def test_departed_count_matches_depart_helper():
    s = SimState(cfg(T=1, W=1, s=1, lam=0.0, pbd=0.0))
    admit(s, 3)
    broadcast_update(s, 0)
    assert depart(s) == 3 and s.active == []


@pytest.mark.parametrize("mode", ["UNCODED_INF", "UNCODED_FIN", "CODED_FIN"])
def test_single_slot_and_block_runs_agree(mode):
    c = cfg(mode=mode, lam=0.8)
    a = SimState(c, 3).run_slots(500)
    s = SimState(c, 3)
    b = np.array([_row(run_slot(s)) for _ in range(500)])
    assert np.array_equal(a, b)


def _row(rec):
    return [rec.arrivals, rec.blocked, rec.active_before, rec.targeted, rec.leader_rank, int(rec.leader_blocked),
            rec.leader_useful, -1 if rec.served_drive is None else rec.served_drive,
            -1 if rec.served_chunk is None else rec.served_chunk, rec.departures, rec.excluded]


def test_replication_is_deterministic():
    c = cfg(mode="CODED_FIN", horizon=5000)
    assert np.array_equal(simulate(c, 2), simulate(c, 2))
    assert run_replication(c, 2) == run_replication(c, 2)
    assert not np.array_equal(simulate(c, 2), simulate(c, 3))


def test_block_boundary_does_not_change_trace(monkeypatch):
    c = cfg(mode="CODED_FIN", horizon=3000)
    ref = simulate(c, 1)
    monkeypatch.setattr(sim, "BLOCK_SLOTS", 700)
    assert np.array_equal(simulate(c, 1), ref)


def test_exact_rank_and_counting_shortcut_agree_on_mds_layout():
    for policy in ("SPREAD", "RANDOM", "FIRST"):
        c = cfg(T=8, W=2, s=4, N=6, lam=0.9, mode="CODED_FIN", horizon=20000, policy=policy)
        fast = simulate(c.with_(exact_rank=False), 0)
        slow = simulate(c.with_(exact_rank=True), 0)
        assert np.array_equal(fast, slow), policy


def test_coded_mds_serves_every_active_user():
    tr = simulate(cfg(T=6, W=2, s=3, N=5, lam=0.9, mode="CODED_FIN", exact_rank=True, horizon=20000), 0)
    served = tr[:, sim.DRIVE] >= 0
    assert served.any() and tr[served, sim.EXCLUDED].any()
    # everyone except the users set aside as temporary leaders gains a degree of freedom
    assert np.array_equal(tr[served, sim.TARGETED], tr[served, sim.ACTIVE] - tr[served, sim.EXCLUDED])


def test_infinite_io_targets_everyone():
    tr = simulate(cfg(T=10, N=8, lam=0.9, mode="UNCODED_INF", horizon=20000), 0)
    busy = tr[:, sim.ACTIVE] > 0
    assert np.array_equal(tr[busy, sim.TARGETED], tr[busy, sim.ACTIVE])
    assert not tr[:, sim.LEADER_BLOCKED].any()


def test_same_slot_switch():
    on = SimState(cfg(lam=0.0, pbd=0.0))
    off = SimState(cfg(lam=0.0, pbd=0.0, same_slot_service=False))
    on_tr = on.run(np.array([1, 0]), np.ones((2, 4)), np.zeros(2))
    off_tr = off.run(np.array([1, 0]), np.ones((2, 4)), np.zeros(2))
    assert on_tr[0, sim.TARGETED] == 1
    assert off_tr[0, sim.TARGETED] == 0 and off_tr[1, sim.TARGETED] == 1


@pytest.mark.parametrize("N", [1, 2, 4, 8])
def test_blocking_matches_erlang_with_half_slot_holding(N):
    """Each admitted user is served in its arrival slot, so it holds a place
    for T - 1/2 slots on average when arrivals are spread over the slot."""
    c = ScenarioConfig(T=10, W=1, s=1, N=N, lam=0.3, mode="UNCODED_INF", horizon=100_000, replications=10)
    st_ = summarize([run_replication(c, k) for k in range(c.replications)])
    ref = erlang_blocking(0.3, 9.5, N)
    assert abs(st_.ext_block_prob - ref) <= max(3 * st_.ext_block_se, 0.005)


def test_saturation():
    c = ScenarioConfig(T=10, W=1, s=1, N=1, lam=50.0, mode="UNCODED_INF", horizon=5000)
    st_ = summarize([run_replication(c, 0)])
    assert st_.ext_block_prob > 0.99


def test_warmup_equal_to_horizon_is_guarded():
    c = cfg(horizon=100, warmup=100)
    acc = run_replication(c, 0)
    assert acc.slots_counted == 0 and acc.arrivals_total == 0
    with pytest.raises(UndefinedMetricError):
        summarize([acc])


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(N=0).validate()
    with pytest.raises(ConfigError):
        cfg(pbd=1.5).validate()
    with pytest.raises(ConfigError):
        cfg(lam=-1).validate()
    with pytest.raises(ConfigError):
        cfg(horizon=10, warmup=20).validate()
    with pytest.raises(ConfigError):
        cfg(mode="HALF_CODED").validate()
    with pytest.raises(ConfigError):
        cfg(R=5).validate()
    with pytest.raises(ConfigError):
        cfg(T=5, s=2).validate()


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(1, 6), N=st.integers(1, 5), lam=st.floats(0, 3), pbd=st.floats(0, 1),
    mode=st.sampled_from(["UNCODED_INF", "UNCODED_FIN", "CODED_FIN"]), seed=st.integers(0, 2**32),
)
def test_slot_invariants(T, N, lam, pbd, mode, seed):
    s = SimState(ScenarioConfig(T=T, W=2, s=T, N=N, lam=lam, pbd=pbd, mode=mode, master_seed=seed))
    prev = {}
    for _ in range(60):
        rec = run_slot(s)
        assert rec.blocked <= rec.arrivals and rec.targeted <= rec.active_before <= N
        now = {u.id: u.rank for u in s.active}
        assert len(now) <= N
        assert all(0 <= r < T for r in now.values())
        for uid, r in now.items():
            assert r - prev.get(uid, 0) in (0, 1)
        if mode == "UNCODED_INF":
            assert rec.targeted == rec.active_before
        ids = sorted(now)
        assert ids == sorted(set(ids))
        prev = now


FINGERPRINT = """
import hashlib, sys
from pmpsched._jit import backend
from pmpsched.sim import ScenarioConfig, simulate
h = hashlib.sha256()
for mode, gen, exact in [("UNCODED_FIN", "VANDERMONDE", None), ("UNCODED_INF", "VANDERMONDE", None),
                         ("CODED_FIN", "VANDERMONDE", None), ("CODED_FIN", "PER_DRIVE", None),
                         ("CODED_FIN", "VANDERMONDE", True)]:
    for policy in ("SPREAD", "RANDOM", "FIRST"):
        c = ScenarioConfig(T=4, W=2, s=2, N=4, lam=0.9, pbd=0.6, mode=mode, generator=gen, exact_rank=exact,
                           policy=policy, horizon=800, q=257)
        h.update(simulate(c, 1).tobytes())
print(backend(), h.hexdigest())
"""


def _fingerprint(disable):
    env = dict(os.environ, PMPSCHED_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", FINGERPRINT], env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


def test_compiled_and_python_kernels_agree():
    jit_backend, jit_digest = _fingerprint(False)
    py_backend, py_digest = _fingerprint(True)
    assert (jit_backend, py_backend) == ("numba", "python")
    assert jit_digest == py_digest
