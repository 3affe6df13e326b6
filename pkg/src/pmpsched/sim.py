"""Slotted-time simulation of one server, R drives and a bounded user buffer.

Each slot runs: admit Poisson arrivals (up to the buffer size N), sample
which drives are busy, let the scheduler pick one read, broadcast it to
every active user, and drop users whose rank reached T.

Randomness comes from three Philox substreams per replication (arrivals,
drive availability, tie-breaks) keyed by ``(master_seed, rep_index)``.
Uncoded and coded runs of the same replication therefore see the same
arrivals and the same busy-drive uniforms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._jit import njit
from .gf import insert_row
from .layout import CODED, UNCODED, VANDERMONDE, DriveLayout, LayoutParams, build_layout, verify_mds
from .schedulers import (
    CODED_FIN,
    UNCODED_INF,
    leader_index,
    mode_code,
    policy_code,
    schedule,
    useful_drives,
)

# trace columns
ARRIVALS = 0
BLOCKED = 1
ACTIVE = 2
TARGETED = 3
LEADER_RANK = 4
LEADER_BLOCKED = 5
LEADER_USEFUL = 6
DRIVE = 7
ITEM = 8
DEPARTURES = 9
EXCLUDED = 10
N_COLS = 11
COLUMNS = ("arrivals", "blocked", "active", "targeted", "leader_rank", "leader_blocked",
           "leader_useful", "drive", "item", "departures", "excluded")

PURPOSES = {"arrivals": 0, "availability": 1, "ties": 2}
BLOCK_SLOTS = 1 << 16


class ConfigError(ValueError):
    """Invalid scenario parameters."""


class InvariantError(RuntimeError):
    """A simulated trace broke a model invariant."""


@dataclass(frozen=True)
class ScenarioConfig:
    T: int = 8
    W: int = 2
    s: int | None = 4
    N: int = 8
    lam: float = 0.9
    pbd: float = 0.5
    mode: str = "CODED_FIN"
    R: int | None = None
    q: int = 256
    generator: str = VANDERMONDE
    horizon: int = 100_000
    warmup: int | None = None
    replications: int = 20
    master_seed: int = 0
    policy: str = "SPREAD"
    exact_rank: bool | None = None
    same_slot_service: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode.upper())
        object.__setattr__(self, "policy", self.policy.upper())
        object.__setattr__(self, "generator", self.generator.upper())

    @property
    def warmup_slots(self) -> int:
        """Slots excluded from metrics; 20% of the horizon unless set."""
        return int(0.2 * self.horizon) if self.warmup is None else self.warmup

    @property
    def stripes(self) -> int:
        return self.T if self.s is None else self.s

    @property
    def drives(self) -> int:
        return self.W * self.stripes

    @property
    def coded(self) -> bool:
        return self.mode == "CODED_FIN"

    def layout_params(self) -> LayoutParams:
        return LayoutParams(T=self.T, W=self.W, s=self.stripes, mode=CODED if self.coded else UNCODED,
                            q=self.q, generator=self.generator, seed=self.master_seed)

    def validate(self) -> "ScenarioConfig":
        try:
            mode_code(self.mode)
            policy_code(self.policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigError("lam must be a finite rate >= 0")
        if not 0.0 <= self.pbd <= 1.0:
            raise ConfigError("pbd must lie in [0, 1]")
        if self.horizon < 1 or not 0 <= self.warmup_slots <= self.horizon:
            raise ConfigError("need horizon >= 1 and 0 <= warmup <= horizon")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.R is not None and self.R != self.drives:
            raise ConfigError(f"R={self.R} inconsistent with W*s={self.drives}")
        try:
            self.layout_params().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R"] = self.drives
        d["warmup"] = self.warmup_slots
        return d


@lru_cache(maxsize=64)
def _cached_layout(params: LayoutParams) -> tuple[DriveLayout, bool]:
    lay = build_layout(params)
    mds = False
    if lay.coded and params.generator == VANDERMONDE:
        mds = verify_mds(lay, samples=64)
    return lay, mds


def layout_for(config: ScenarioConfig) -> tuple[DriveLayout, bool]:
    """Layout plus whether the rank shortcut ``rank = #received`` is safe."""
    config.validate()
    lay, mds = _cached_layout(config.layout_params())
    if not lay.coded:
        return lay, False
    exact = (not mds) if config.exact_rank is None else bool(config.exact_rank)
    if not exact and not mds:
        raise ConfigError("exact_rank=False requires an MDS layout")
    return lay, exact


def stream(master_seed: int, rep_index: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(rep_index, PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Streams:
    arrivals: np.random.Generator
    availability: np.random.Generator
    ties: np.random.Generator

    @classmethod
    def for_replication(cls, master_seed: int, rep_index: int) -> "Streams":
        return cls(*(stream(master_seed, rep_index, p) for p in ("arrivals", "availability", "ties")))

    def draw(self, n: int, lam: float, R: int):
        return (self.arrivals.poisson(lam, size=n).astype(np.int64),
                self.availability.random((n, R)),
                self.ties.random(n))


# ---- kernels ---------------------------------------------------------------


@njit
def admit_users(count, uid, arrived, rank, need, drive_need, drive_ptr, ctr):
    """Fill free buffer slots with fresh users.  Returns (admitted, blocked)."""
    admitted = 0
    for m in range(uid.shape[0]):
        if admitted == count:
            break
        if uid[m] < 0:
            uid[m] = ctr[0]
            ctr[0] += 1
            arrived[m] = ctr[1]
            rank[m] = 0
            need[m, :] = 1
            for d in range(drive_need.shape[1]):
                drive_need[m, d] = drive_ptr[d + 1] - drive_ptr[d]
            admitted += 1
    return admitted, count - admitted


@njit
def broadcast(item, coded, exact, uid, rank, need, drive_need, item_ptr, item_drives, coeffs, basis, piv,
              p, ext, mul_tab, inv_tab):
    """Deliver ``item`` to every active user; returns how many gained rank."""
    targeted = 0
    for m in range(uid.shape[0]):
        if uid[m] < 0 or need[m, item] == 0:
            continue
        need[m, item] = 0
        for k in range(item_ptr[item], item_ptr[item + 1]):
            drive_need[m, item_drives[k]] -= 1
        if coded and exact:
            if insert_row(coeffs[item], basis[m], piv[m], rank[m], p, ext, mul_tab, inv_tab):
                rank[m] += 1
                targeted += 1
        else:
            rank[m] += 1
            targeted += 1
    return targeted


@njit
def remove_departed(T, uid, rank):
    gone = 0
    for m in range(uid.shape[0]):
        if uid[m] >= 0 and rank[m] >= T:
            uid[m] = -1
            gone += 1
    return gone


@njit
def run_slots(arrivals, avail_u, tie_u, pbd, mode, policy, exact, same_slot,
              uid, arrived, rank, need, drive_need, basis, piv, reads, ctr,
              drive_ptr, drive_items, item_ptr, item_drives, coeffs, p, ext, mul_tab, inv_tab,
              cand_d, cand_r, score, excl_mask, excl, out):
    n = arrivals.shape[0]
    R = drive_ptr.shape[0] - 1
    T = coeffs.shape[1]
    N = uid.shape[0]
    coded = mode == CODED_FIN
    avail = np.zeros(R, dtype=np.uint8)
    for t in range(n):
        adm = 0
        blk = 0
        if same_slot:
            adm, blk = admit_users(arrivals[t], uid, arrived, rank, need, drive_need, drive_ptr, ctr)
        for d in range(R):
            avail[d] = 1 if (mode != UNCODED_INF and avail_u[t, d] < pbd) else 0
        n_active = 0
        for m in range(N):
            if uid[m] >= 0:
                n_active += 1
        l = leader_index(uid, rank, excl_mask)
        lrank = -1
        luseful = -1
        if l >= 0:
            lrank = rank[l]
            luseful = useful_drives(l, mode, need, drive_need, drive_ptr, drive_items, exact, coeffs, basis,
                                    piv, rank, p, ext, mul_tab)
        d, r, nex = schedule(mode, policy, tie_u[t], uid, rank, need, drive_need, avail, drive_ptr,
                             drive_items, item_ptr, item_drives, reads, exact, coeffs, basis, piv, p, ext,
                             mul_tab, cand_d, cand_r, score, excl_mask, excl)
        tgt = 0
        if d >= 0:
            reads[d] += 1
            tgt = broadcast(r, coded, exact, uid, rank, need, drive_need, item_ptr, item_drives, coeffs,
                            basis, piv, p, ext, mul_tab, inv_tab)
        lblocked = 0
        if l >= 0 and rank[l] == lrank:
            lblocked = 1
        dep = remove_departed(T, uid, rank)
        if not same_slot:
            adm, blk = admit_users(arrivals[t], uid, arrived, rank, need, drive_need, drive_ptr, ctr)
        out[t, 0] = arrivals[t]
        out[t, 1] = blk
        out[t, 2] = n_active
        out[t, 3] = tgt
        out[t, 4] = lrank
        out[t, 5] = lblocked
        out[t, 6] = luseful
        out[t, 7] = d
        out[t, 8] = r
        out[t, 9] = dep
        out[t, 10] = nex
        ctr[1] += 1


# ---- state -----------------------------------------------------------------


@dataclass
class SlotRecord:
    arrivals: int
    blocked: int
    active_before: int
    targeted: int
    leader_rank: int
    leader_blocked: bool
    leader_useful: int
    served_drive: int | None
    served_chunk: int | None
    departures: int
    excluded: int

    @classmethod
    def from_row(cls, row) -> "SlotRecord":
        row = [int(x) for x in row]
        return cls(row[0], row[1], row[2], row[3], row[4], bool(row[5]), row[6],
                   None if row[7] < 0 else row[7], None if row[8] < 0 else row[8], row[9], row[10])


@dataclass
class UserState:
    id: int
    arrival_slot: int
    rank: int
    a: np.ndarray  # 1 = chunk/coded chunk still missing


class SimState:
    """Buffer, per-user progress and drive read counters for one replication.

    Users live in ``N`` buffer slots; ``uid[m] = -1`` marks a free slot.
    ``need[m, i] = 1`` while item ``i`` (file chunk or coded chunk) has not
    reached user ``m``.  In exact-rank mode each user also carries an
    echelon basis of its knowledge space.
    """

    def __init__(self, config: ScenarioConfig, rep_index: int = 0, layout: DriveLayout | None = None,
                 exact: bool | None = None):
        if layout is None:
            layout, exact = layout_for(config)
        self.config = config
        self.layout = layout
        self.mode = mode_code(config.mode)
        self.policy = policy_code(config.policy)
        self.exact = (exact is None or bool(exact)) if layout.coded else False
        N, T, n_items = config.N, layout.T, layout.n_items
        self.uid = np.full(N, -1, dtype=np.int64)
        self.arrived = np.zeros(N, dtype=np.int64)
        self.rank = np.zeros(N, dtype=np.int64)
        self.need = np.ones((N, n_items), dtype=np.uint8)
        self.drive_need = np.zeros((N, layout.R), dtype=np.int64)  # still-needed items per drive
        tb = T if self.exact else 1
        self.basis = np.zeros((N, tb, tb), dtype=np.int64)
        self.piv = np.zeros((N, tb), dtype=np.int64)
        self.reads = np.zeros(layout.R, dtype=np.int64)
        self.ctr = np.zeros(2, dtype=np.int64)  # next user id, slot
        cap = max(n_items, layout.item_drives.shape[0])
        self.scratch = {
            "cand_d": np.zeros(cap, dtype=np.int64),
            "cand_r": np.zeros(cap, dtype=np.int64),
            "score": np.zeros(cap, dtype=np.int64),
            "excluded": np.zeros(N, dtype=np.int64),
            "excl_mask": np.zeros(N, dtype=np.bool_),
        }
        self.streams = Streams.for_replication(config.master_seed, rep_index)

    @property
    def slot(self) -> int:
        return int(self.ctr[1])

    @property
    def active(self) -> list[UserState]:
        idx = sorted((int(self.uid[m]), m) for m in range(self.uid.shape[0]) if self.uid[m] >= 0)
        return [UserState(u, int(self.arrived[m]), int(self.rank[m]), self.need[m].copy()) for u, m in idx]

    def index_of(self, user_id: int) -> int:
        hits = np.flatnonzero(self.uid == user_id)
        if hits.size == 0:
            raise KeyError(f"no active user {user_id}")
        return int(hits[0])

    def run(self, arrivals, avail_u, tie_u) -> np.ndarray:
        n = arrivals.shape[0]
        out = np.zeros((n, N_COLS), dtype=np.int64)
        lay = self.layout
        sc = self.scratch
        p, ext, mt, it = lay.field.params
        cfg = self.config
        run_slots(arrivals, avail_u, tie_u, float(cfg.pbd), self.mode, self.policy, self.exact,
                  bool(cfg.same_slot_service), self.uid, self.arrived, self.rank, self.need,
                  self.drive_need, self.basis, self.piv, self.reads, self.ctr, lay.drive_ptr,
                  lay.drive_items, lay.item_ptr, lay.item_drives, lay.coeffs, p, ext, mt, it,
                  sc["cand_d"], sc["cand_r"], sc["score"], sc["excl_mask"], sc["excluded"], out)
        return out

    def run_slots(self, n: int) -> np.ndarray:
        out = [self.run(*self.streams.draw(k, self.config.lam, self.layout.R))
               for k in _blocks(n)]
        return np.concatenate(out) if out else np.zeros((0, N_COLS), dtype=np.int64)


def _blocks(n: int):
    while n > 0:
        k = min(n, BLOCK_SLOTS)
        yield k
        n -= k


# ---- slot-level operations -------------------------------------------------


def sample_arrivals(lam: float, rng: np.random.Generator) -> int:
    if lam < 0:
        raise ConfigError("arrival rate must be >= 0")
    return int(rng.poisson(lam))


def sample_availability(R: int, pbd: float, rng: np.random.Generator) -> np.ndarray:
    """Busy indicators b(t): 1 = drive busy this slot."""
    return (rng.random(R) < pbd).astype(np.uint8)


def admit(state: SimState, count: int) -> tuple[int, int]:
    """Admit up to the free buffer space; returns (admitted, externally_blocked)."""
    adm, blk = admit_users(int(count), state.uid, state.arrived, state.rank, state.need, state.drive_need,
                           state.layout.drive_ptr, state.ctr)
    return int(adm), int(blk)


def broadcast_update(state: SimState, chunk: int) -> int:
    """Deliver item ``chunk`` to all active users; returns the targeted count."""
    lay = state.layout
    if not 0 <= chunk < lay.n_items:
        raise KeyError(f"chunk {chunk} not in layout")
    p, ext, mt, it = lay.field.params
    return int(broadcast(chunk, lay.coded, state.exact, state.uid, state.rank, state.need, state.drive_need,
                         lay.item_ptr, lay.item_drives, lay.coeffs, state.basis, state.piv, p, ext, mt, it))


def depart(state: SimState) -> int:
    return int(remove_departed(state.layout.T, state.uid, state.rank))


def run_slot(state: SimState, policy: str | None = None) -> SlotRecord:
    """Run one full slot, drawing from the state's own streams."""
    if policy is not None:
        state.policy = policy_code(policy)
    row = state.run(*state.streams.draw(1, state.config.lam, state.layout.R))[0]
    return SlotRecord.from_row(row)


def check_trace(trace: np.ndarray, N: int) -> None:
    """Raise InvariantError if a trace breaks conservation or capacity rules."""
    if trace.size == 0:
        return
    problems = []
    if np.any(trace[:, BLOCKED] > trace[:, ARRIVALS]):
        problems.append("blocked > arrivals")
    if np.any(trace[:, ACTIVE] > N):
        problems.append("active users exceed N")
    if np.any(trace[:, TARGETED] > trace[:, ACTIVE]):
        problems.append("targeted > active")
    if np.any((trace[:, DRIVE] < 0) & (trace[:, TARGETED] > 0)):
        problems.append("users targeted without a read")
    if problems:
        raise InvariantError("; ".join(problems))


def simulate(config: ScenarioConfig, rep_index: int = 0) -> np.ndarray:
    """Full per-slot trace (``horizon`` x ``N_COLS``) of one replication."""
    state = SimState(config, rep_index)
    trace = state.run_slots(config.horizon)
    check_trace(trace, config.N)
    if np.any(state.rank[state.uid >= 0] >= config.T):
        raise InvariantError("active user with full rank")
    return trace


def run_replication(config: ScenarioConfig, rep_index: int = 0):
    """Simulate one replication and accumulate metrics after warmup."""
    from .metrics import MetricsAccumulator

    trace = simulate(config, rep_index)
    return MetricsAccumulator.from_trace(trace, config)
