"""Per-replication counters and their summary across replications.

Counters are all integers so merging is exact, associative and
commutative.  Per-slot throughput ``|targeted| / |active|`` is kept as a
histogram over (active, targeted) pairs for the same reason.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .sim import ScenarioConfig, SlotRecord

MIN_CURVE_OBS = 100


class MergeError(ValueError):
    """Accumulators from different scenarios."""


class UndefinedMetricError(ValueError):
    """A probability with an empty denominator."""


def config_key(config: ScenarioConfig) -> str:
    d = config.to_dict()
    return json.dumps(d, sort_keys=True)


@dataclass
class MetricsAccumulator:
    N: int
    T: int
    R: int
    key: str = ""
    arrivals_total: int = 0
    blocked_total: int = 0
    departures: int = 0
    slots_counted: int = 0
    nonempty_slots: int = 0
    targeted_total: int = 0
    active_total: int = 0
    ratio_counts: np.ndarray = field(default=None, repr=False)  # [active, targeted]
    rank_blocked: np.ndarray = field(default=None, repr=False)
    rank_observed: np.ndarray = field(default=None, repr=False)
    useful_blocked: np.ndarray = field(default=None, repr=False)
    useful_observed: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.ratio_counts is None:
            self.ratio_counts = np.zeros((self.N + 1, self.N + 1), dtype=np.int64)
        for name, size in (("rank_blocked", self.T), ("rank_observed", self.T),
                           ("useful_blocked", self.R + 1), ("useful_observed", self.R + 1)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(size, dtype=np.int64))

    @classmethod
    def empty(cls, config: ScenarioConfig) -> "MetricsAccumulator":
        return cls(N=config.N, T=config.T, R=config.drives, key=config_key(config))

    @classmethod
    def from_trace(cls, trace: np.ndarray, config: ScenarioConfig) -> "MetricsAccumulator":
        """Accumulate every slot at or after the warmup."""
        acc = cls.empty(config)
        tr = trace[config.warmup_slots:]
        if tr.shape[0] == 0:
            return acc
        acc.slots_counted = int(tr.shape[0])
        acc.arrivals_total = int(tr[:, sim.ARRIVALS].sum())
        acc.blocked_total = int(tr[:, sim.BLOCKED].sum())
        acc.departures = int(tr[:, sim.DEPARTURES].sum())
        active = tr[:, sim.ACTIVE]
        busy = active > 0
        acc.nonempty_slots = int(busy.sum())
        acc.targeted_total = int(tr[:, sim.TARGETED].sum())
        acc.active_total = int(active.sum())
        np.add.at(acc.ratio_counts, (active[busy], tr[busy, sim.TARGETED]), 1)
        lr = tr[busy, sim.LEADER_RANK]
        lb = tr[busy, sim.LEADER_BLOCKED]
        lu = tr[busy, sim.LEADER_USEFUL]
        acc.rank_observed += np.bincount(lr, minlength=acc.T)[: acc.T]
        acc.rank_blocked += np.bincount(lr, weights=lb, minlength=acc.T)[: acc.T].astype(np.int64)
        acc.useful_observed += np.bincount(lu, minlength=acc.R + 1)[: acc.R + 1]
        acc.useful_blocked += np.bincount(lu, weights=lb, minlength=acc.R + 1)[: acc.R + 1].astype(np.int64)
        return acc

    def copy(self) -> "MetricsAccumulator":
        return merge(self, MetricsAccumulator(self.N, self.T, self.R, self.key))

    def as_tuple(self):
        return (self.key, self.arrivals_total, self.blocked_total, self.departures, self.slots_counted,
                self.nonempty_slots, self.targeted_total, self.active_total, self.ratio_counts.tobytes(),
                self.rank_blocked.tobytes(), self.rank_observed.tobytes(), self.useful_blocked.tobytes(),
                self.useful_observed.tobytes())

    def __eq__(self, other):
        return isinstance(other, MetricsAccumulator) and self.as_tuple() == other.as_tuple()

    @property
    def throughput_sum(self) -> float:
        a, t = np.nonzero(self.ratio_counts)
        return float(np.sum(self.ratio_counts[a, t] * (t / a)))


def record_slot(acc: MetricsAccumulator, rec: SlotRecord) -> MetricsAccumulator:
    """Add one post-warmup slot to ``acc`` (in place) and return it."""
    acc.slots_counted += 1
    acc.arrivals_total += rec.arrivals
    acc.blocked_total += rec.blocked
    acc.departures += rec.departures
    acc.targeted_total += rec.targeted
    acc.active_total += rec.active_before
    if rec.active_before > 0:
        acc.nonempty_slots += 1
        acc.ratio_counts[rec.active_before, rec.targeted] += 1
        acc.rank_observed[rec.leader_rank] += 1
        acc.rank_blocked[rec.leader_rank] += int(rec.leader_blocked)
        acc.useful_observed[rec.leader_useful] += 1
        acc.useful_blocked[rec.leader_useful] += int(rec.leader_blocked)
    return acc


def merge(a: MetricsAccumulator, b: MetricsAccumulator) -> MetricsAccumulator:
    if (a.N, a.T, a.R) != (b.N, b.T, b.R) or (a.key and b.key and a.key != b.key):
        raise MergeError("cannot merge accumulators from different scenarios")
    return MetricsAccumulator(
        N=a.N, T=a.T, R=a.R, key=a.key or b.key,
        arrivals_total=a.arrivals_total + b.arrivals_total,
        blocked_total=a.blocked_total + b.blocked_total,
        departures=a.departures + b.departures,
        slots_counted=a.slots_counted + b.slots_counted,
        nonempty_slots=a.nonempty_slots + b.nonempty_slots,
        targeted_total=a.targeted_total + b.targeted_total,
        active_total=a.active_total + b.active_total,
        ratio_counts=a.ratio_counts + b.ratio_counts,
        rank_blocked=a.rank_blocked + b.rank_blocked,
        rank_observed=a.rank_observed + b.rank_observed,
        useful_blocked=a.useful_blocked + b.useful_blocked,
        useful_observed=a.useful_observed + b.useful_observed,
    )


@dataclass
class CurvePoint:
    prob: float
    stderr: float
    n_obs: int


@dataclass
class SummaryStats:
    reps: int
    slots: int
    ext_block_prob: float
    ext_block_se: float
    throughput_norm: float
    throughput_norm_se: float
    throughput_raw: float
    throughput_raw_se: float
    mean_active_users: float
    leader_block_curve: dict[int, CurvePoint]
    useful_block_curve: dict[int, CurvePoint]


def _se(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return math.nan
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def _curve(accs, blocked_attr, observed_attr, min_obs) -> dict[int, CurvePoint]:
    blocked = np.sum([getattr(a, blocked_attr) for a in accs], axis=0)
    observed = np.sum([getattr(a, observed_attr) for a in accs], axis=0)
    out = {}
    for k in np.flatnonzero(observed >= min_obs):
        p = blocked[k] / observed[k]
        per_rep = [getattr(a, blocked_attr)[k] / getattr(a, observed_attr)[k]
                   for a in accs if getattr(a, observed_attr)[k] > 0]
        se = _se(per_rep)
        if math.isnan(se):
            se = math.sqrt(p * (1 - p) / observed[k])
        out[int(k)] = CurvePoint(float(p), float(se), int(observed[k]))
    return out


def summarize(accs: list[MetricsAccumulator], min_obs: int = MIN_CURVE_OBS) -> SummaryStats:
    """Pool the counters; standard errors come from the spread of per-replication means."""
    if not accs:
        raise UndefinedMetricError("no replications to summarize")
    total = accs[0]
    for a in accs[1:]:
        total = merge(total, a)
    if total.arrivals_total == 0:
        raise UndefinedMetricError("no arrivals recorded: external blocking probability undefined")
    ext = total.blocked_total / total.arrivals_total
    ext_reps = [a.blocked_total / a.arrivals_total for a in accs if a.arrivals_total > 0]
    norm_reps = [a.throughput_sum / a.nonempty_slots for a in accs if a.nonempty_slots > 0]
    raw_reps = [a.targeted_total / a.slots_counted for a in accs if a.slots_counted > 0]
    norm = total.throughput_sum / total.nonempty_slots if total.nonempty_slots else math.nan
    raw = total.targeted_total / total.slots_counted if total.slots_counted else math.nan
    return SummaryStats(
        reps=len(accs),
        slots=total.slots_counted,
        ext_block_prob=float(ext),
        ext_block_se=_se(ext_reps),
        throughput_norm=float(norm),
        throughput_norm_se=_se(norm_reps),
        throughput_raw=float(raw),
        throughput_raw_se=_se(raw_reps),
        mean_active_users=total.active_total / total.slots_counted if total.slots_counted else math.nan,
        leader_block_curve=_curve(accs, "rank_blocked", "rank_observed", min_obs),
        useful_block_curve=_curve(accs, "useful_blocked", "useful_observed", min_obs),
    )
