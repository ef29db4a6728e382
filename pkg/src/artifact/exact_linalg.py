"""Exact integer/rational matrix helpers and small-dimension lattice reduction.

Integer matrices are numpy arrays of dtype object (Python ints), so products
never overflow.  Rational symmetric matrices hold ``fractions.Fraction``
entries.  Floating symmetric matrices are plain float64 arrays.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class StructuralError(ValueError):
    pass


class DomainError(ValueError):
    pass


def int_matrix(a) -> np.ndarray:
    """Copy ``a`` into an object array of Python ints (exact arithmetic)."""
    arr = np.array(a, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        iv = int(v)
        if iv != v:
            raise DomainError(f"non-integer entry {v!r}")
        out[idx] = iv
    return out


def int_eye(n: int) -> np.ndarray:
    out = np.zeros((n, n), dtype=object)
    for i in range(n):
        out[i, i] = 1
    return out


def int_zeros(r: int, c: int) -> np.ndarray:
    out = np.empty((r, c), dtype=object)
    out[...] = 0
    return out


def exact_det(M) -> Fraction:
    """Determinant by fraction-free elimination (Bareiss); exact for int or Fraction input."""
    A = [[Fraction(x) for x in row] for row in np.asarray(M, dtype=object)]
    n = len(A)
    if any(len(r) != n for r in A):
        raise StructuralError("determinant of a non-square matrix")
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if A[k][k] == 0:
            for i in range(k + 1, n):
                if A[i][k] != 0:
                    A[k], A[i] = A[i], A[k]
                    sign = -sign
                    break
            else:
                return Fraction(0)
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) / prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1] if n else Fraction(1)


def exact_inverse(M) -> np.ndarray:
    """Inverse over the rationals (object array of Fractions) by Gauss-Jordan."""
    A = [[Fraction(x) for x in row] for row in np.asarray(M, dtype=object)]
    n = len(A)
    aug = [row + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(A)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise DomainError("singular matrix")
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [x / p for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return np.array([row[n:] for row in aug], dtype=object)


def int_inverse(M) -> np.ndarray:
    """Inverse of a unimodular integer matrix, returned as ints."""
    inv = exact_inverse(M)
    if any(x.denominator != 1 for x in inv.flat):
        raise DomainError("matrix is not unimodular")
    return int_matrix([[int(x) for x in row] for row in inv])


@dataclass(frozen=True)
class RationalSymMatrix:
    """Exact symmetric matrix over Q; symmetry is checked on construction."""
    entries: tuple

    def __post_init__(self):
        rows = tuple(tuple(Fraction(x) for x in r) for r in self.entries)
        n = len(rows)
        for i in range(n):
            if len(rows[i]) != n:
                raise StructuralError("matrix is not square")
            for j in range(i):
                if rows[i][j] != rows[j][i]:
                    raise StructuralError("matrix is not symmetric")
        object.__setattr__(self, "entries", rows)

    @property
    def n(self) -> int:
        return len(self.entries)

    def as_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=object)

    def to_float(self) -> np.ndarray:
        return np.array([[float(x) for x in r] for r in self.entries])

    def trace_pair(self, S) -> Fraction:
        """tr(self * S) for an integer or rational matrix S."""
        S = np.asarray(S, dtype=object)
        n = self.n
        return sum((self.entries[i][j] * Fraction(S[j, i]) for i in range(n) for j in range(n)), Fraction(0))


@dataclass
class PDWitness:
    positive: bool
    minors: list = field(default_factory=list)
    cholesky: np.ndarray | None = None

    def __bool__(self):
        return self.positive


def is_positive_definite(M) -> PDWitness:
    """Positive-definiteness with a witness.

    Exact (leading principal minors) for int/Fraction/RationalSymMatrix input,
    Cholesky factor for floating input.
    """
    if isinstance(M, RationalSymMatrix):
        A = M.as_array()
    else:
        A = np.asarray(M)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if A.dtype == object or np.issubdtype(A.dtype, np.integer):
        for i in range(n):
            for j in range(i):
                if Fraction(A[i, j]) != Fraction(A[j, i]):
                    raise StructuralError("matrix is not symmetric")
        minors = [exact_det(A[:i, :i]) for i in range(1, n + 1)]
        return PDWitness(all(m > 0 for m in minors), minors)
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-300):
        raise StructuralError("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return PDWitness(False)
    return PDWitness(True, [float(np.prod(np.diag(L)[:i]) ** 2) for i in range(1, n + 1)], L)


def hnf_rows(M) -> np.ndarray:
    """Row-style Hermite normal form of an integer matrix (full row rank not required).

    Pivots positive, entries above each pivot reduced into [0, pivot).  Zero rows
    are dropped.  Two matrices have the same HNF iff they are related by a left
    GL(Z) multiplication.
    """
    A = [list(map(int, r)) for r in np.asarray(M, dtype=object)]
    rows, cols = len(A), len(A[0]) if A else 0
    r = 0
    for c in range(cols):
        if r == rows:
            break
        while True:
            nz = [i for i in range(r, rows) if A[i][c] != 0]
            if not nz:
                break
            p = min(nz, key=lambda i: abs(A[i][c]))
            A[r], A[p] = A[p], A[r]
            done = True
            for i in range(r + 1, rows):
                if A[i][c]:
                    q = A[i][c] // A[r][c]
                    A[i] = [x - q * y for x, y in zip(A[i], A[r])]
                    if A[i][c]:
                        done = False
            if done:
                break
        if r < rows and A[r][c] != 0:
            if A[r][c] < 0:
                A[r] = [-x for x in A[r]]
            for i in range(r):
                q = A[i][c] // A[r][c]
                if q:
                    A[i] = [x - q * y for x, y in zip(A[i], A[r])]
            r += 1
    return int_matrix(A[:r]) if r else int_zeros(0, cols)


def gcd_of_minors(M) -> int:
    """gcd of the maximal minors of an r x c integer matrix (r <= c)."""
    A = np.asarray(M, dtype=object)
    r, c = A.shape
    g = 0
    for cols in itertools.combinations(range(c), r):
        g = math.gcd(g, int(exact_det(A[:, cols])))
        if g == 1:
            return 1
    return g


# ---------------------------------------------------------------------------
# short vectors and Minkowski reduction

def short_vectors(G, bound: float, include_zero: bool = False) -> np.ndarray:
    """All integer v (one of each +/- pair) with v^t G v <= bound, G positive definite.

    Fincke-Pohst enumeration on the Cholesky factor; returns an int64 array
    of shape (m, n), first nonzero entry of each row positive.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    # Q[i,i] and Q[i,j] of the completed-square form
    L = np.linalg.cholesky(G)
    R = L.T
    q = np.diag(R) ** 2
    mu = R / np.diag(R)[:, None]
    out = []
    eps = 1e-9 * max(bound, 1.0)
    x = [0] * n

    def rec(i, rem):
        c = -sum(mu[i, j] * x[j] for j in range(i + 1, n))
        r = math.sqrt(max(rem, 0.0) / q[i])
        for v in range(math.ceil(c - r - 1e-9), math.floor(c + r + 1e-9) + 1):
            t = q[i] * (v - c) ** 2
            if t > rem + eps:
                continue
            x[i] = v
            if i == 0:
                out.append(tuple(x))
            else:
                rec(i - 1, rem - t)
        x[i] = 0

    rec(n - 1, bound)
    vecs = []
    for v in out:
        nz = next((a for a in v if a != 0), 0)
        if nz > 0 or (nz == 0 and include_zero):
            vecs.append(v)
    return np.array(vecs, dtype=np.int64).reshape(-1, n)


def _tie_key(v):
    # ties: smaller L1 norm, then earlier coordinates carry the weight
    return (int(np.abs(v).sum()), tuple(-abs(int(a)) for a in v))


def _extends(basis, v, n) -> bool:
    M = np.array(basis + [list(v)], dtype=object)
    return gcd_of_minors(M) == 1


def minkowski_reduce(Y, rtol: float = 1e-12):
    """Minkowski reduction for n <= 3 by greedy successive minima.

    Returns (Y_red, U) with Y_red = U^t Y U and U unimodular.  Ties between
    equally short vectors are broken by the smaller L1 norm and then by the
    earlier coordinate; the first nonzero entry of each column of U is positive.
    For n > 3 a weak normal form (sorted diagonal + size reduction, not
    Minkowski reduced) is returned.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if Y.shape != (n, n):
        raise StructuralError("expected a square matrix")
    if not is_positive_definite(Y):
        raise DomainError("minkowski_reduce needs a positive definite matrix")
    if n == 1:
        return Y.copy(), int_eye(1)
    if n > 3:
        return _weak_reduce(Y)
    basis = []
    bound = float(np.max(np.diag(Y))) * (1 + 1e-9)
    while len(basis) < n:
        vecs = short_vectors(Y, bound)
        norms = np.einsum("ij,jk,ik->i", vecs, Y, vecs)
        order = np.argsort(norms, kind="stable")
        picked = None
        best = None
        for idx in order:
            v = vecs[idx]
            nv = norms[idx]
            if best is not None and nv > best * (1 + rtol) + 1e-300:
                break
            if not _extends(basis, v, n):
                continue
            if best is None:
                best, picked = nv, v
            elif _tie_key(v) < _tie_key(picked):
                picked = v
        if picked is None:
            bound *= 2.0
            continue
        basis.append([int(a) for a in picked])
    U = int_matrix(np.array(basis).T)
    Uf = U.astype(float)
    Yr = Uf.T @ Y @ Uf
    Yr = (Yr + Yr.T) / 2
    return Yr, U


def _weak_reduce(Y):
    n = Y.shape[0]
    U = np.eye(n, dtype=np.int64)
    Yw = Y.copy()
    for _ in range(50):
        changed = False
        order = np.argsort(np.diag(Yw), kind="stable")
        if np.any(order != np.arange(n)):
            U = U[:, order]
            Yw = Yw[np.ix_(order, order)]
            changed = True
        for j in range(1, n):
            for i in range(j):
                r = round(Yw[i, j] / Yw[i, i])
                if r:
                    E = np.eye(n, dtype=np.int64)
                    E[i, j] = -r
                    U = U @ E
                    Yw = E.T @ Yw @ E
                    changed = True
        if not changed:
            break
    return (Yw + Yw.T) / 2, int_matrix(U)


def is_minkowski_reduced(Y, tol: float = 1e-12) -> bool:
    """Checks the n <= 2 conditions exactly and, for n = 3, against short vectors."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    d = np.diag(Y)
    if np.any(np.diff(d) < -tol * d.max()):
        return False
    for i in range(n):
        for j in range(i + 1, n):
            if 2 * abs(Y[i, j]) > Y[i, i] * (1 + tol):
                return False
    if n == 3:
        vecs = short_vectors(Y, d.max() * (1 + 1e-9))
        for v in vecs:
            nv = v @ Y @ v
            for k in range(n):
                if math.gcd(*[int(a) for a in v[k:]]) == 1 and nv < Y[k, k] * (1 - tol):
                    return False
    return True
