"""Closed-form blocking probabilities.

``erlang_blocking`` is the loss probability of N parallel service units,
each holding a user for T slots, fed by Poisson(lambda) requests.  The
``leader_block_*`` functions give the chance that the highest-rank user
finds every drive still useful to it busy in a slot.
"""

from __future__ import annotations


def erlang_blocking(lam: float, T: float, N: int) -> float:
    """Erlang-B loss probability with offered load rho = lam * T.

    Uses B(0) = 1, B(k) = rho B(k-1) / (k + rho B(k-1)), which never forms
    the factorials of the direct sum.
    """
    if lam < 0 or N < 1:
        raise ValueError("need lam >= 0 and N >= 1")
    rho = lam * T
    b = 1.0
    for k in range(1, N + 1):
        b = rho * b / (k + rho * b)
    return b


def _check_rank(r_ell: int, T: int) -> None:
    if not 0 <= r_ell < T:
        raise ValueError(f"leader rank {r_ell} outside [0, {T})")


def leader_block_single(pbd: float, W: int, T: int, r_ell: int, mode: str) -> float:
    """One chunk per drive, R = W*T drives.

    Coded: W*T - r_ell drives still hold something new for the leader.
    Uncoded: each decoded chunk retires all W of its replicas.
    """
    _check_rank(r_ell, T)
    m = mode.lower()
    if m.startswith("coded"):
        return pbd ** (W * T - r_ell)
    if m.startswith("uncoded"):
        return pbd ** (W * T - W * r_ell)
    raise ValueError(f"mode must be coded or uncoded, got {mode!r}")


def leader_block_striped_uncoded(pbd: float, W: int, s: int, r_sets: int) -> float:
    """Leader has fully decoded ``r_sets`` of the s stripe sets."""
    if not 0 <= r_sets < s:
        raise ValueError(f"completed stripe sets {r_sets} outside [0, {s})")
    return pbd ** (W * s - W * r_sets)


def leader_block_striped_coded_bounds(pbd: float, W: int, s: int, T: int, r_ell: int) -> tuple[float, float]:
    """(lower, upper) for the coded striped layout, T/s coded chunks per drive.

    Worst case: each T/s received chunks used up a whole drive.  Best case:
    reads spread evenly, so no drive is used up before the leader holds
    W*T - W*s chunks, after which each further chunk retires one drive.
    """
    if T % s:
        raise ValueError("s must divide T")
    _check_rank(r_ell, T)
    per = T // s
    upper = pbd ** (W * s - r_ell // per)
    lower = pbd ** (W * s - max(0, r_ell - (W * T - W * s)))
    return lower, upper
