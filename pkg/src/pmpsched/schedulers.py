"""Leader-based read scheduling for one slot.

A scheduler looks at the active users, picks the user with the highest
rank (earliest arrival on ties) and tries to serve one of that user's
missing chunks from an available drive.  If none of them can be read, the
user is set aside and the next-ranked user is tried.  The same loop serves
three storage modes:

* uncoded, all drives always available (every user gains a chunk each slot);
* uncoded with busy drives: the leader's earliest missing chunk that has a
  free replica;
* coded with busy drives: any coded chunk the leader has not yet received
  (or, in exact-rank mode, that is innovative for it) on a free drive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .gf import KnowledgeMatrix, innovative

UNCODED_INF = 0
UNCODED_FIN = 1
CODED_FIN = 2
MODE_NAMES = {"UNCODED_INF": UNCODED_INF, "UNCODED_FIN": UNCODED_FIN, "CODED_FIN": CODED_FIN}

SPREAD = 0
RANDOM = 1
FIRST = 2
POLICY_NAMES = {"SPREAD": SPREAD, "RANDOM": RANDOM, "FIRST": FIRST}

BRUTE_FORCE_LIMITS = {"users": 8, "drives": 8, "per_drive": 8}


def mode_code(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    try:
        return MODE_NAMES[name.upper()]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}; expected one of {sorted(MODE_NAMES)}") from None


def policy_code(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    try:
        return POLICY_NAMES[name.upper()]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; expected spread, random or first") from None


@dataclass
class Decision:
    drive: int
    chunk: int
    excluded_leaders: list[int] = field(default_factory=list)


# ---- kernels ---------------------------------------------------------------


@njit
def leader_index(uid, rank, excluded):
    """Buffer index of the highest-rank user (earliest id on ties), or -1."""
    best = -1
    for m in range(uid.shape[0]):
        if uid[m] < 0 or excluded[m]:
            continue
        if best < 0 or rank[m] > rank[best] or (rank[m] == rank[best] and uid[m] < uid[best]):
            best = m
    return best


@njit
def choose_index(cand_drive, cand_item, score, n, policy, u):
    """Pick one of the first ``n`` candidates, which arrive sorted by (drive, item).

    SPREAD takes the highest score (first in order on ties), FIRST the first
    candidate, RANDOM a uniform one driven by ``u`` in [0, 1).
    """
    if n <= 0:
        return -1
    if policy == FIRST:
        return 0
    if policy == RANDOM:
        k = int(u * n)
        return k if k < n else n - 1
    best = 0
    for i in range(1, n):
        if score[i] > score[best]:
            best = i
    return best


@njit
def _uncoded_choice(l, mode, policy, u, need, avail, item_ptr, item_drives, reads, cand_d, cand_r, score):
    n_items = item_ptr.shape[0] - 1
    for j in range(n_items):
        if need[l, j] == 0:
            continue
        n = 0
        for k in range(item_ptr[j], item_ptr[j + 1]):
            d = item_drives[k]
            if mode == UNCODED_INF or avail[d] == 0:
                cand_d[n] = d
                cand_r[n] = j
                score[n] = -reads[d]
                n += 1
        if n > 0:
            i = choose_index(cand_d, cand_r, score, n, policy, u)
            return cand_d[i], cand_r[i]
    return -1, -1


@njit
def _coded_choice_counts(l, policy, u, need, avail, drive_ptr, drive_items, drive_need):
    """Coded choice when every unreceived chunk is innovative (MDS layouts).

    Candidates are all unreceived chunks on free drives; SPREAD scores a
    drive by how many of them it holds.
    """
    R = drive_ptr.shape[0] - 1
    total = 0
    best = -1
    for d in range(R):
        c = drive_need[l, d]
        if avail[d] != 0 or c == 0:
            continue
        total += c
        if best < 0 or (policy == SPREAD and c > drive_need[l, best]):
            best = d
    if total == 0:
        return -1, -1
    skip = 0
    if policy == RANDOM:
        k = int(u * total)
        if k >= total:
            k = total - 1
        for d in range(R):
            c = drive_need[l, d]
            if avail[d] != 0 or c == 0:
                continue
            if k < c:
                best = d
                skip = k
                break
            k -= c
    for k in range(drive_ptr[best], drive_ptr[best + 1]):
        r = drive_items[k]
        if need[l, r] != 0:
            if skip == 0:
                return best, r
            skip -= 1
    return -1, -1


@njit
def _coded_choice_exact(l, policy, u, need, avail, drive_ptr, drive_items, coeffs, basis, piv, rank,
                        p, ext, mul_tab, cand_d, cand_r, score):
    """Coded choice by explicit innovation tests against the leader's basis."""
    n = 0
    R = drive_ptr.shape[0] - 1
    for d in range(R):
        if avail[d] != 0:
            continue
        start = n
        for k in range(drive_ptr[d], drive_ptr[d + 1]):
            r = drive_items[k]
            if need[l, r] != 0 and innovative(coeffs[r], basis[l], piv[l], rank[l], p, ext, mul_tab):
                cand_d[n] = d
                cand_r[n] = r
                n += 1
        for i in range(start, n):
            score[i] = n - start
    if n == 0:
        return -1, -1
    i = choose_index(cand_d, cand_r, score, n, policy, u)
    return cand_d[i], cand_r[i]


@njit
def schedule(mode, policy, u, uid, rank, need, drive_need, avail, drive_ptr, drive_items, item_ptr,
             item_drives, reads, exact, coeffs, basis, piv, p, ext, mul_tab, cand_d, cand_r, score,
             excluded, excluded_out):
    """Temporary-leader loop.  Returns (drive, item, n_excluded); drive -1 means no read.

    ``excluded`` is scratch and is cleared on return.
    """
    n_excl = 0
    d = -1
    r = -1
    while True:
        l = leader_index(uid, rank, excluded)
        if l < 0:
            break
        if mode != CODED_FIN:
            d, r = _uncoded_choice(l, mode, policy, u, need, avail, item_ptr, item_drives, reads,
                                   cand_d, cand_r, score)
        elif exact:
            d, r = _coded_choice_exact(l, policy, u, need, avail, drive_ptr, drive_items, coeffs, basis,
                                       piv, rank, p, ext, mul_tab, cand_d, cand_r, score)
        else:
            d, r = _coded_choice_counts(l, policy, u, need, avail, drive_ptr, drive_items, drive_need)
        if d >= 0:
            break
        excluded[l] = True
        excluded_out[n_excl] = uid[l]
        n_excl += 1
    excluded[:] = False
    return d, r, n_excl


@njit
def useful_drives(l, mode, need, drive_need, drive_ptr, drive_items, exact, coeffs, basis, piv, rank,
                  p, ext, mul_tab):
    """Number of drives holding at least one item user ``l`` can still use."""
    R = drive_ptr.shape[0] - 1
    count = 0
    if mode == CODED_FIN and exact:
        for d in range(R):
            for k in range(drive_ptr[d], drive_ptr[d + 1]):
                r = drive_items[k]
                if need[l, r] != 0 and innovative(coeffs[r], basis[l], piv[l], rank[l], p, ext, mul_tab):
                    count += 1
                    break
        return count
    for d in range(R):
        if drive_need[l, d] > 0:
            count += 1
    return count


# ---- python surface --------------------------------------------------------


def select_leader(uids, ranks) -> int | None:
    """Id of the highest-rank user, earliest id on ties; None for an empty set."""
    uids = np.asarray(uids, dtype=np.int64)
    if uids.size == 0:
        return None
    ranks = np.asarray(ranks, dtype=np.int64)
    i = leader_index(uids, ranks, np.zeros(uids.shape[0], dtype=np.bool_))
    return None if i < 0 else int(uids[i])


def choose_among_candidates(candidates, policy="SPREAD", *, scores=None, rng=None) -> tuple[int, int]:
    """Pick one (drive, chunk) pair.

    ``scores`` maps drive -> preference for SPREAD (higher wins: remaining
    unreceived chunks for coded, minus cumulative reads for uncoded); ties
    and FIRST go to the lowest (drive, chunk).  RANDOM draws uniformly.
    """
    cands = sorted((int(d), int(c)) for d, c in candidates)
    if not cands:
        raise ValueError("choose_among_candidates needs at least one candidate")
    pol = policy_code(policy)
    cd = np.array([d for d, _ in cands], dtype=np.int64)
    cr = np.array([c for _, c in cands], dtype=np.int64)
    sc = np.array([0 if scores is None else scores.get(d, 0) for d in cd], dtype=np.int64)
    u = 0.0
    if pol == RANDOM:
        u = float((rng if rng is not None else np.random.default_rng()).random())
    i = choose_index(cd, cr, sc, len(cands), pol, u)
    return cands[i]


def _run_schedule(state, mode: int, b, u: float = 0.0) -> Decision | None:
    lay = state.layout
    avail = np.zeros(lay.R, dtype=np.uint8) if b is None else np.asarray(b, dtype=np.uint8)
    if avail.shape != (lay.R,):
        raise ValueError(f"availability vector must have length {lay.R}")
    sc = state.scratch
    p, ext, mt, _ = lay.field.params
    d, r, n_excl = schedule(mode, state.policy, u, state.uid, state.rank, state.need, state.drive_need,
                            avail, lay.drive_ptr, lay.drive_items, lay.item_ptr, lay.item_drives,
                            state.reads, state.exact, lay.coeffs, state.basis, state.piv, p, ext, mt,
                            sc["cand_d"], sc["cand_r"], sc["score"], sc["excl_mask"], sc["excluded"])
    if d < 0:
        return None
    return Decision(int(d), int(r), sc["excluded"][:n_excl].tolist())


def schedule_uncoded_infinite(state, u: float = 0.0) -> Decision | None:
    """Serve the leader's earliest missing chunk; every drive counts as free."""
    return _run_schedule(state, UNCODED_INF, None, u)


def schedule_uncoded_finite(state, b, u: float = 0.0) -> Decision | None:
    return _run_schedule(state, UNCODED_FIN, b, u)


def schedule_coded_finite(state, b, u: float = 0.0) -> Decision | None:
    return _run_schedule(state, CODED_FIN, b, u)


def user_knowledge(state, m: int) -> KnowledgeMatrix:
    """Rebuild user ``m``'s knowledge space from its received items."""
    lay = state.layout
    km = KnowledgeMatrix(lay.T, lay.field)
    for r in np.flatnonzero(state.need[m] == 0):
        km.append(lay.coeffs[r])
    return km


def brute_force_max_targeted(state, b) -> int:
    """Largest number of active users any single feasible read could serve.

    Tries every stored item on every available drive and counts, per user,
    whether the item's encoding vector is innovative for the user's
    knowledge space (rebuilt from scratch).  Test oracle; small states only.
    """
    lay = state.layout
    active = [m for m in range(state.uid.shape[0]) if state.uid[m] >= 0]
    per_drive = max(len(lay.items_on(d)) for d in range(lay.R))
    lim = BRUTE_FORCE_LIMITS
    if len(active) > lim["users"] or lay.R > lim["drives"] or per_drive > lim["per_drive"]:
        raise ValueError("state too large for brute-force enumeration")
    if b is None:
        b = np.zeros(lay.R, dtype=np.uint8)
    spaces = [user_knowledge(state, m) for m in active]
    best = 0
    for d in range(lay.R):
        if b[d]:
            continue
        for item in lay.items_on(d):
            vec = lay.coeffs[item]
            best = max(best, sum(km.is_innovative(vec) for km in spaces))
    return best


def targeted_by(state, item: int) -> int:
    """How many active users would gain rank if ``item`` were broadcast now."""
    vec = state.layout.coeffs[item]
    return sum(user_knowledge(state, m).is_innovative(vec)
               for m in range(state.uid.shape[0]) if state.uid[m] >= 0)


def random_small_state(rng: np.random.Generator, mode: str = "CODED_FIN"):
    """A reachable simulator state small enough for ``brute_force_max_targeted``.

    Draws T <= 4, R <= 4, N <= 4 and a storage generator, runs the simulator
    for a random number of slots, admits a few more users and returns ``(state, b)`` with a fresh
    availability vector ``b``.
    """
    from .sim import ScenarioConfig, SimState, admit

    T = int(rng.integers(1, 5))
    s = int(rng.choice([d for d in range(1, T + 1) if T % d == 0]))
    W = int(rng.integers(1, 4 // s + 1))
    gen, q = "VANDERMONDE", 256
    if mode == "CODED_FIN":
        gen = str(rng.choice(["VANDERMONDE", "RANDOM", "PER_DRIVE"]))
        if gen == "RANDOM":
            q = int(rng.choice([2, 3, 256]))
    cfg = ScenarioConfig(T=T, W=W, s=s, N=int(rng.integers(1, 5)), lam=float(rng.uniform(0.2, 2.0)),
                         pbd=float(rng.uniform(0.0, 0.9)), mode=mode, q=q, generator=gen,
                         master_seed=int(rng.integers(2**32)), horizon=1, warmup=0,
                         policy=str(rng.choice(list(POLICY_NAMES))), exact_rank=True if mode == "CODED_FIN" else None)
    state = SimState(cfg, int(rng.integers(1000)))
    state.run_slots(int(rng.integers(0, 30)))
    admit(state, int(rng.integers(0, 3)))  # fresh zero-rank users next to older ones
    b = (rng.random(state.layout.R) < rng.uniform(0.0, 1.0)).astype(np.uint8)
    return state, b
