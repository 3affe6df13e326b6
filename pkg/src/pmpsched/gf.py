"""Finite-field arithmetic and linear algebra over encoding vectors.

Two field families are supported: GF(256) with log/antilog tables
(reduction polynomial x^8 + x^4 + x^3 + x + 1, generator 0x03) and prime
fields GF(p) with plain modular arithmetic.  Elements are plain ints in
``range(q)``; vectors are int64 numpy arrays.

The ``_kernel`` functions below take the field as ``(p, ext, mul_tab,
inv_tab)`` so the simulator can call them from compiled code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from ._jit import njit

GF256_MODULUS = 0x11B
GF256_GENERATOR = 0x03
MAX_PRIME = 1 << 16


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


@dataclass(frozen=True, eq=False)
class Field:
    """A finite field GF(q), either GF(256) or a prime field."""

    q: int
    p: int
    ext: bool
    mul_table: np.ndarray = field(repr=False)
    inv_table: np.ndarray = field(repr=False)

    @property
    def params(self):
        return self.p, self.ext, self.mul_table, self.inv_table

    def __eq__(self, other):
        return isinstance(other, Field) and other.q == self.q

    def __hash__(self):
        return hash(self.q)

    def check(self, a) -> None:
        arr = np.asarray(a)
        if arr.size and (arr.min() < 0 or arr.max() >= self.q):
            raise ValueError(f"element outside GF({self.q})")

    def add(self, a, b):
        if self.ext:
            return np.bitwise_xor(a, b)
        return (np.asarray(a) + b) % self.p

    def sub(self, a, b):
        if self.ext:
            return np.bitwise_xor(a, b)
        return (np.asarray(a) - b) % self.p

    def mul(self, a, b):
        if self.ext:
            return self.mul_table[a, b]
        return (np.asarray(a, dtype=np.int64) * b) % self.p

    def inv(self, a):
        if np.any(np.asarray(a) == 0):
            raise ZeroDivisionError(f"0 has no inverse in GF({self.q})")
        return self.inv_table[a]


def _gf256_tables():
    exp = np.zeros(510, dtype=np.int64)
    log = np.full(256, -1, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        # multiply by the generator 0x03 = x + 1
        y = x << 1
        if y & 0x100:
            y ^= GF256_MODULUS
        x = y ^ x
    exp[255:] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.int64)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[log[nz][:, None] + log[nz][None, :]]
    inv = np.zeros(256, dtype=np.int64)
    inv[1:] = exp[(255 - log[nz]) % 255]
    return mul, inv


@lru_cache(maxsize=None)
def get_field(q: int = 256) -> Field:
    """Return GF(q) for q = 256 or a prime q < 2**16."""
    if q == 256:
        mul, inv = _gf256_tables()
        return Field(q=256, p=2, ext=True, mul_table=mul, inv_table=inv)
    if not _is_prime(q) or q > MAX_PRIME + 1:
        raise ValueError(f"unsupported field order {q}: use 256 or a prime <= {MAX_PRIME + 1}")
    inv = np.zeros(q, dtype=np.int64)
    for a in range(1, q):
        inv[a] = pow(a, q - 2, q)
    return Field(q=q, p=q, ext=False, mul_table=np.zeros((1, 1), dtype=np.int64), inv_table=inv)


GF256 = get_field(256)


def field_add(a: int, b: int, fld: Field = GF256) -> int:
    fld.check([a, b])
    return int(fld.add(a, b))


def field_mul(a: int, b: int, fld: Field = GF256) -> int:
    fld.check([a, b])
    return int(fld.mul(a, b))


def field_mul_inv(a: int, fld: Field = GF256) -> int:
    fld.check([a])
    return int(fld.inv(a))


# ---- compiled kernels ------------------------------------------------------


@njit
def _fmul(a, b, p, ext, mul_tab):
    if ext:
        return mul_tab[a, b]
    return (a * b) % p


@njit
def _axpy_sub(vec, row, c, p, ext, mul_tab):
    """vec -= c * row, in place."""
    for k in range(vec.shape[0]):
        r = row[k]
        if r != 0:
            m = _fmul(c, r, p, ext, mul_tab)
            if ext:
                vec[k] = vec[k] ^ m
            else:
                vec[k] = (vec[k] - m) % p


@njit
def reduce_against(vec, basis, piv, nrows, p, ext, mul_tab):
    """Eliminate ``vec`` (in place) against the first ``nrows`` echelon rows.

    Rows are normalised (1 at their pivot) and each row is zero at the
    pivots of all earlier rows, so a single pass in insertion order clears
    every pivot column.  Returns the first nonzero column, or -1.
    """
    for i in range(nrows):
        c = vec[piv[i]]
        if c != 0:
            _axpy_sub(vec, basis[i], c, p, ext, mul_tab)
    for k in range(vec.shape[0]):
        if vec[k] != 0:
            return k
    return -1


@njit
def insert_row(vec, basis, piv, nrows, p, ext, mul_tab, inv_tab):
    """Reduce a copy of ``vec``; append it if innovative.  Returns True if rank grew."""
    work = vec.copy()
    lead = reduce_against(work, basis, piv, nrows, p, ext, mul_tab)
    if lead < 0:
        return False
    s = inv_tab[work[lead]]
    for k in range(work.shape[0]):
        if work[k] != 0:
            work[k] = _fmul(work[k], s, p, ext, mul_tab)
    basis[nrows, :] = work
    piv[nrows] = lead
    return True


@njit
def innovative(vec, basis, piv, nrows, p, ext, mul_tab):
    work = vec.copy()
    return reduce_against(work, basis, piv, nrows, p, ext, mul_tab) >= 0


@njit
def rank_of(rows, p, ext, mul_tab, inv_tab):
    T = rows.shape[1]
    basis = np.zeros((T, T), dtype=np.int64)
    piv = np.zeros(T, dtype=np.int64)
    r = 0
    for i in range(rows.shape[0]):
        if r == T:
            break
        if insert_row(rows[i], basis, piv, r, p, ext, mul_tab, inv_tab):
            r += 1
    return r


# ---- python surface --------------------------------------------------------


def _as_rows(rows, T: int | None = None) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        arr = rows.astype(np.int64, copy=False)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, T or 0)
        if arr.ndim != 2:
            raise ValueError("expected a 2-d array of rows")
        return arr
    rows = [list(r) for r in rows]
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise ValueError(f"ragged rows: lengths {sorted(lengths)}")
    width = lengths.pop() if lengths else (T or 0)
    return np.array(rows, dtype=np.int64).reshape(len(rows), width)


def unit_vector(j: int, T: int) -> np.ndarray:
    e = np.zeros(T, dtype=np.int64)
    e[j] = 1
    return e


class KnowledgeMatrix:
    """One user's received encoding vectors, kept as an incremental echelon basis.

    Appending is O(T * rank); ``rank`` is cached.
    """

    def __init__(self, T: int, fld: Field = GF256, rows=()):
        self.T = T
        self.field = fld
        self.basis = np.zeros((T, T), dtype=np.int64)
        self.piv = np.zeros(T, dtype=np.int64)
        self.rank = 0
        self.received = 0
        for r in rows:
            self.append(r)

    def _vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.int64)
        if v.shape != (self.T,):
            raise ValueError(f"encoding vector must have length {self.T}, got shape {v.shape}")
        self.field.check(v)
        return v

    def is_innovative(self, v) -> bool:
        if self.rank == self.T:
            return False
        p, ext, mt, _ = self.field.params
        return bool(innovative(self._vec(v), self.basis, self.piv, self.rank, p, ext, mt))

    def append(self, v) -> bool:
        """Add a received vector; returns True if it was a new degree of freedom."""
        v = self._vec(v)
        self.received += 1
        if self.rank == self.T:
            return False
        if insert_row(v, self.basis, self.piv, self.rank, *self.field.params):
            self.rank += 1
            return True
        return False

    def echelon(self) -> np.ndarray:
        return self.basis[: self.rank].copy()

    def decode(self) -> set[int]:
        return decode(self.echelon(), self.field)


def rank(rows, fld: Field = GF256) -> int:
    """Row rank over the field, by Gaussian elimination."""
    if isinstance(rows, KnowledgeMatrix):
        return rows.rank
    arr = _as_rows(rows)
    if arr.shape[0] == 0:
        return 0
    fld.check(arr)
    return int(rank_of(arr, *fld.params))


def is_innovative(rows, v, fld: Field = GF256) -> bool:
    """True iff appending ``v`` raises the rank of ``rows`` by one."""
    if isinstance(rows, KnowledgeMatrix):
        return rows.is_innovative(v)
    v = np.asarray(v, dtype=np.int64)
    arr = _as_rows(rows, T=v.shape[0])
    if arr.shape[0] and arr.shape[1] != v.shape[0]:
        raise ValueError("vector length does not match rows")
    km = KnowledgeMatrix(v.shape[0], fld, arr)
    return km.is_innovative(v)


def rref(rows, fld: Field = GF256) -> tuple[np.ndarray, list[int]]:
    """Reduced row-echelon form; returns (nonzero rows, pivot columns)."""
    R = _as_rows(rows).copy()
    m, n = R.shape
    pivots: list[int] = []
    r = 0
    for col in range(n):
        if r == m:
            break
        nz = np.nonzero(R[r:, col])[0]
        if nz.size == 0:
            continue
        k = r + int(nz[0])
        if k != r:
            R[[r, k]] = R[[k, r]]
        R[r] = fld.mul(R[r], int(fld.inv(int(R[r, col]))))
        for i in range(m):
            if i != r and R[i, col] != 0:
                R[i] = fld.sub(R[i], fld.mul(R[r], int(R[i, col])))
        pivots.append(col)
        r += 1
    return R[:r], pivots


def decode(rows, fld: Field = GF256) -> set[int]:
    """Indices j (0-based) whose unit vector e_j lies in the row span."""
    if isinstance(rows, KnowledgeMatrix):
        return rows.decode()
    R, pivots = rref(rows, fld)
    return {col for row, col in zip(R, pivots) if np.count_nonzero(row) == 1}


def all_subsets_full_rank(vectors: np.ndarray, T: int, fld: Field, subsets=None) -> bool:
    """Check that every T-subset of ``vectors`` (or every given subset) has rank T."""
    if subsets is None:
        subsets = combinations(range(vectors.shape[0]), T)
    params = fld.params
    for idx in subsets:
        if rank_of(vectors[list(idx)], *params) != T:
            return False
    return True
