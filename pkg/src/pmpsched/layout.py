"""Placement of uncoded or coded chunks onto drives.

Drive and chunk ids are 0-based throughout.  An uncoded layout with
``s`` stripe sets replicated ``W`` times puts copy ``w`` of stripe set
``k`` on drive ``w*s + k``; with ``s == T`` this is the one-chunk-per-drive
layout.  A coded layout stores ``H = W*T`` coded chunks, ``T/s`` per drive
with consecutive ids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .gf import Field, get_field, rank_of

UNCODED = "UNCODED"
CODED = "CODED"
VANDERMONDE = "VANDERMONDE"
RANDOM = "RANDOM"
PER_DRIVE = "PER_DRIVE"

MDS_ENUMERATION_LIMIT = 10**6


class LayoutError(ValueError):
    """Inconsistent layout parameters."""


@dataclass(frozen=True)
class LayoutParams:
    T: int
    W: int = 1
    s: int | None = None
    mode: str = UNCODED
    q: int = 256
    generator: str = VANDERMONDE
    seed: int = 0

    @property
    def stripes(self) -> int:
        return self.T if self.s is None else self.s

    @property
    def R(self) -> int:
        return self.W * self.stripes

    @property
    def H(self) -> int:
        return self.W * self.T

    def validate(self) -> None:
        T, W, s = self.T, self.W, self.stripes
        if T < 1 or W < 1 or s < 1:
            raise LayoutError(f"T, W, s must be positive (got T={T}, W={W}, s={s})")
        if T % s:
            raise LayoutError(f"s={s} must divide T={T}")
        if self.mode not in (UNCODED, CODED):
            raise LayoutError(f"unknown layout mode {self.mode!r}")
        if self.mode == CODED:
            if self.generator not in (VANDERMONDE, RANDOM, PER_DRIVE):
                raise LayoutError(f"unknown generator {self.generator!r}")
            if self.generator in (VANDERMONDE, PER_DRIVE) and self.q <= self.H:
                raise LayoutError(f"Vandermonde needs q > H (q={self.q}, H={self.H})")


@dataclass(eq=False)
class DriveLayout:
    """Per-drive contents plus the inverse index.

    ``drive_ptr/drive_items`` is a CSR list of item ids per drive and
    ``item_ptr/item_drives`` maps each item back to the drives holding it.
    Items are file chunks (uncoded) or coded chunks; ``coeffs`` holds the
    encoding vector of every item, unit vectors in the uncoded case.
    """

    params: LayoutParams
    drive_ptr: np.ndarray
    drive_items: np.ndarray
    item_ptr: np.ndarray
    item_drives: np.ndarray
    coeffs: np.ndarray
    field: Field

    @property
    def coded(self) -> bool:
        return self.params.mode == CODED

    @property
    def T(self) -> int:
        return self.params.T

    @property
    def R(self) -> int:
        return self.drive_ptr.shape[0] - 1

    @property
    def n_items(self) -> int:
        return self.item_ptr.shape[0] - 1

    def items_on(self, drive: int) -> list[int]:
        return self.drive_items[self.drive_ptr[drive] : self.drive_ptr[drive + 1]].tolist()

    def drives_holding(self, item: int) -> set[int]:
        """Drives storing file chunk ``item`` (uncoded) or coded chunk ``item``."""
        if not 0 <= item < self.n_items:
            raise KeyError(f"unknown chunk id {item}")
        return set(self.item_drives[self.item_ptr[item] : self.item_ptr[item + 1]].tolist())

    def to_dict(self) -> dict:
        doc = {
            "mode": self.params.mode,
            "T": self.T,
            "W": self.params.W,
            "s": self.params.stripes,
            "R": self.R,
            "drives": [{"drive": d, "chunks": self.items_on(d)} for d in range(self.R)],
        }
        if self.coded:
            doc["q"] = self.field.q
            doc["generator"] = self.params.generator
            doc["coefficients"] = self.coeffs.tolist()
        return doc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _csr(groups: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(groups) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(g) for g in groups])
    flat = np.array([x for g in groups for x in g], dtype=np.int64)
    return ptr, flat


def _from_drive_lists(params: LayoutParams, per_drive: list[list[int]], coeffs, fld) -> DriveLayout:
    n_items = coeffs.shape[0]
    holders: list[list[int]] = [[] for _ in range(n_items)]
    for d, items in enumerate(per_drive):
        for it in items:
            holders[it].append(d)
    dptr, ditems = _csr(per_drive)
    iptr, idrives = _csr(holders)
    return DriveLayout(params, dptr, ditems, iptr, idrives, coeffs, fld)


def stripe_sets(T: int, s: int) -> list[list[int]]:
    size = T // s
    return [list(range(k * size, (k + 1) * size)) for k in range(s)]


def build_uncoded(params: LayoutParams) -> DriveLayout:
    params.validate()
    T, W, s = params.T, params.W, params.stripes
    sets = stripe_sets(T, s)
    per_drive = [list(sets[k]) for w in range(W) for k in range(s)]
    fld = get_field(params.q)
    return _from_drive_lists(params, per_drive, np.eye(T, dtype=np.int64), fld)


def vandermonde_rows(points, T: int, fld: Field) -> np.ndarray:
    pts = np.asarray(points, dtype=np.int64)
    out = np.zeros((pts.shape[0], T), dtype=np.int64)
    out[:, 0] = 1
    for k in range(1, T):
        out[:, k] = fld.mul(out[:, k - 1], pts)
    return out


def build_coded(params: LayoutParams, points=None) -> DriveLayout:
    """Coded layout with H = W*T chunks, T/s consecutive ids per drive.

    ``points`` overrides the Vandermonde evaluation points (default 1..H).
    """
    params.validate()
    if params.mode != CODED:
        raise LayoutError("build_coded needs mode=CODED")
    if params.generator == PER_DRIVE:
        return build_per_drive_coded(params, points)
    T, R, H = params.T, params.R, params.H
    fld = get_field(params.q)
    if params.generator == VANDERMONDE:
        pts = np.arange(1, H + 1) if points is None else np.asarray(points)
        if pts.shape != (H,):
            raise LayoutError(f"need {H} Vandermonde points")
        coeffs = vandermonde_rows(pts, T, fld)
    else:
        rng = np.random.default_rng(params.seed)
        coeffs = rng.integers(0, fld.q, size=(H, T), dtype=np.int64)
    per = T // params.stripes
    per_drive = [list(range(d * per, (d + 1) * per)) for d in range(R)]
    return _from_drive_lists(params, per_drive, coeffs, fld)


def build_per_drive_coded(params: LayoutParams, points=None) -> DriveLayout:
    """Coded twin of the striped uncoded layout: each drive's coded chunks
    only combine the file chunks that drive holds in the uncoded layout.

    Every coded chunk gets its own evaluation point, so replicas of a stripe
    set on different drives hold different combinations.  Not MDS in general.
    """
    params.validate()
    unc = build_uncoded(LayoutParams(T=params.T, W=params.W, s=params.s, q=params.q))
    fld = get_field(params.q)
    H = params.H
    pts = np.arange(1, H + 1) if points is None else np.asarray(points)
    coeffs = np.zeros((H, params.T), dtype=np.int64)
    per_drive: list[list[int]] = []
    nxt = 0
    for d in range(unc.R):
        chunks = unc.items_on(d)
        ids = list(range(nxt, nxt + len(chunks)))
        local = vandermonde_rows(pts[ids], len(chunks), fld)
        coeffs[np.ix_(ids, chunks)] = local
        per_drive.append(ids)
        nxt += len(chunks)
    return _from_drive_lists(params, per_drive, coeffs, fld)


def build_layout(params: LayoutParams) -> DriveLayout:
    return build_coded(params) if params.mode == CODED else build_uncoded(params)


def verify_mds(layout: DriveLayout, max_subsets: int = MDS_ENUMERATION_LIMIT, samples: int = 2000, seed: int = 0) -> bool:
    """True iff every T-subset of encoding vectors has rank T.

    Enumerates when C(H, T) <= ``max_subsets``, otherwise checks ``samples``
    random subsets.
    """
    if not layout.coded:
        raise LayoutError("verify_mds applies to coded layouts only")
    T, H = layout.T, layout.n_items
    if H < T:
        return False
    params = layout.field.params
    vecs = layout.coeffs
    if math.comb(H, T) <= max_subsets:
        subsets = combinations(range(H), T)
    else:
        rng = np.random.default_rng(seed)
        subsets = (rng.choice(H, size=T, replace=False) for _ in range(samples))
    for idx in subsets:
        if rank_of(vecs[list(idx)], *params) != T:
            return False
    return True


def drives_holding(layout: DriveLayout, chunk: int) -> set[int]:
    return layout.drives_holding(chunk)


def layout_from_lists(T: int, per_drive: list[list[int]], coeffs=None, q: int = 256) -> DriveLayout:
    """Hand-specified layout.  Without ``coeffs`` the items are file chunks
    (uncoded); otherwise row ``r`` of ``coeffs`` encodes item ``r``."""
    fld = get_field(q)
    if coeffs is None:
        params = LayoutParams(T=T, mode=UNCODED, q=q)
        coeffs = np.eye(T, dtype=np.int64)
    else:
        params = LayoutParams(T=T, mode=CODED, q=q, generator="CUSTOM")
        coeffs = np.asarray(coeffs, dtype=np.int64)
        if coeffs.ndim != 2 or coeffs.shape[1] != T:
            raise LayoutError(f"coefficients must have shape (items, {T})")
        fld.check(coeffs)
    n_items = coeffs.shape[0]
    if any(not 0 <= i < n_items for items in per_drive for i in items):
        raise LayoutError("drive list names an unknown item")
    return _from_drive_lists(params, [list(map(int, items)) for items in per_drive], coeffs, fld)
