"""Integral symplectic matrices, their action on the Siegel half space and coset systems."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exact_linalg import (
    DomainError,
    StructuralError,
    exact_det,
    gcd_of_minors,
    int_eye,
    int_inverse,
    int_matrix,
    int_zeros,
    is_positive_definite,
)


class PrecisionError(ArithmeticError):
    pass


class CapabilityError(NotImplementedError):
    pass


def _jform(n):
    J = int_zeros(2 * n, 2 * n)
    J[:n, n:] = -int_eye(n)
    J[n:, :n] = int_eye(n)
    return J


def is_symplectic(g) -> bool:
    """Exact test of g^t J g = J with J = (0 -1; 1 0)."""
    M = int_matrix(g)
    r, c = M.shape
    if r != c or r % 2:
        raise StructuralError(f"symplectic test needs an even square matrix, got {M.shape}")
    J = _jform(r // 2)
    return bool(np.all(M.T.dot(J).dot(M) == J))


@dataclass(frozen=True)
class SymplecticElement:
    """2n x 2n integral symplectic matrix, checked exactly on construction."""
    M: np.ndarray

    def __post_init__(self):
        M = int_matrix(self.M)
        if not is_symplectic(M):
            raise DomainError("matrix is not symplectic")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def n(self) -> int:
        return self.M.shape[0] // 2

    @property
    def A(self):
        return self.M[: self.n, : self.n]

    @property
    def B(self):
        return self.M[: self.n, self.n:]

    @property
    def C(self):
        return self.M[self.n:, : self.n]

    @property
    def D(self):
        return self.M[self.n:, self.n:]

    def __matmul__(self, other: "SymplecticElement") -> "SymplecticElement":
        return SymplecticElement(self.M.dot(other.M))

    def inverse(self) -> "SymplecticElement":
        A, B, C, D = self.A, self.B, self.C, self.D
        return SymplecticElement(np.block([[D.T, -B.T], [-C.T, A.T]]))

    def __eq__(self, other):
        return isinstance(other, SymplecticElement) and bool(np.all(self.M == other.M))

    def __hash__(self):
        return hash(tuple(int(x) for x in self.M.flat))

    def tolist(self):
        return [[int(x) for x in row] for row in self.M]


def from_blocks(A, B, C, D) -> SymplecticElement:
    return SymplecticElement(np.block([[int_matrix(A), int_matrix(B)], [int_matrix(C), int_matrix(D)]]))


def identity(n: int) -> SymplecticElement:
    return SymplecticElement(int_eye(2 * n))


def m_of(U) -> SymplecticElement:
    """m(U) = diag(U^t, U^{-1})."""
    U = int_matrix(U)
    n = U.shape[0]
    Z = int_zeros(n, n)
    return from_blocks(U.T, Z, Z, int_inverse(U))


def n_of(S) -> SymplecticElement:
    """n(S) = (1 S; 0 1) for symmetric integral S."""
    S = int_matrix(S)
    n = S.shape[0]
    return from_blocks(int_eye(n), S, int_zeros(n, n), int_eye(n))


def inversion(n: int) -> SymplecticElement:
    return SymplecticElement(_jform(n))


def w_j(j: int, n: int = 2) -> SymplecticElement:
    """Partial inversion in the first j coordinates."""
    if not 0 <= j <= n:
        raise DomainError("need 0 <= j <= n")
    M = int_zeros(2 * n, 2 * n)
    for i in range(n):
        if i < j:
            M[i, n + i] = -1
            M[n + i, i] = 1
        else:
            M[i, i] = 1
            M[n + i, n + i] = 1
    return SymplecticElement(M)


# ---------------------------------------------------------------------------
# action on H_n

@dataclass(frozen=True)
class SiegelPoint:
    """Z = X + iY with X symmetric and Y positive definite."""
    Z: np.ndarray

    def __post_init__(self):
        Z = np.array(self.Z, dtype=complex)
        if Z.ndim == 0:
            Z = Z.reshape(1, 1)
        if Z.shape[0] != Z.shape[1]:
            raise StructuralError("Z must be square")
        if not np.allclose(Z, Z.T, rtol=1e-12, atol=1e-14):
            raise StructuralError("Z must be symmetric")
        Z = (Z + Z.T) / 2
        if not is_positive_definite(Z.imag):
            raise DomainError("Im Z is not positive definite")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def X(self):
        return self.Z.real

    @property
    def Y(self):
        return self.Z.imag

    @classmethod
    def from_xy(cls, X, Y):
        return cls(np.asarray(X, float) + 1j * np.asarray(Y, float))


def _as_point(Z) -> SiegelPoint:
    return Z if isinstance(Z, SiegelPoint) else SiegelPoint(Z)


def _blocks_float(g):
    M = np.asarray(g.M if isinstance(g, SymplecticElement) else g, dtype=float)
    n = M.shape[0] // 2
    return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]


def automorphy_factor(g, Z) -> complex:
    """J(g, Z) = det(CZ + D)."""
    Z = _as_point(Z).Z
    _, _, C, D = _blocks_float(g)
    return complex(np.linalg.det(C @ Z + D))


def act(g, Z, cond_max: float = 1e12) -> SiegelPoint:
    """g<Z> = (AZ + B)(CZ + D)^{-1}."""
    Z = _as_point(Z).Z
    A, B, C, D = _blocks_float(g)
    Q = C @ Z + D
    if np.linalg.cond(Q) > cond_max:
        raise PrecisionError("CZ + D is numerically singular")
    W = np.linalg.solve(Q.T, (A @ Z + B).T).T
    return SiegelPoint((W + W.T) / 2)


# ---------------------------------------------------------------------------
# completion of coprime symmetric pairs

def _row_hnf_transform(M):
    """Row reduction W @ M = H with W unimodular; M is m x n of full column rank."""
    H = [list(map(int, r)) for r in M]
    m = len(H)
    W = [[int(i == j) for j in range(m)] for i in range(m)]
    ncol = len(H[0])
    r = 0
    for c in range(ncol):
        while True:
            nz = [i for i in range(r, m) if H[i][c] != 0]
            if not nz:
                raise DomainError("pair is not coprime (rank deficient)")
            p = min(nz, key=lambda i: abs(H[i][c]))
            H[r], H[p] = H[p], H[r]
            W[r], W[p] = W[p], W[r]
            done = True
            for i in range(r + 1, m):
                if H[i][c]:
                    q = H[i][c] // H[r][c]
                    H[i] = [x - q * y for x, y in zip(H[i], H[r])]
                    W[i] = [x - q * y for x, y in zip(W[i], W[r])]
                    if H[i][c]:
                        done = False
            if done:
                break
        r += 1
    return H, W


def check_pair(C, D):
    C, D = int_matrix(C), int_matrix(D)
    n = C.shape[0]
    if C.shape != (n, n) or D.shape != (n, n):
        raise StructuralError("C and D must be n x n")
    P = C.dot(D.T)
    if not np.all(P == P.T):
        raise DomainError("C D^t is not symmetric")
    if gcd_of_minors(np.hstack([C, D])) != 1:
        raise DomainError("(C D) is not primitive: the pair is not coprime")
    return C, D


def complete_pair(C, D) -> SymplecticElement:
    """Symplectic matrix with bottom blocks exactly (C, D).

    A left inverse (A' B') of (D^t; -C^t) comes from integer row reduction;
    the correction A = A' + R C, B = B' + R D with R the strict upper part of
    A'B'^t - B'A'^t makes AB^t symmetric.
    """
    C, D = check_pair(C, D)
    n = C.shape[0]
    stack = np.vstack([D.T, -C.T])
    H, W = _row_hnf_transform(stack)
    Htop = int_matrix([row for row in H[:n]])
    if abs(exact_det(Htop)) != 1:
        raise DomainError("(C D) is not primitive: the pair is not coprime")
    L = int_inverse(Htop).dot(int_matrix(W[:n]))
    A1, B1 = L[:, :n], L[:, n:]
    K = A1.dot(B1.T) - B1.dot(A1.T)
    R = int_zeros(n, n)
    for i in range(n):
        for j in range(i + 1, n):
            R[i, j] = K[i, j]
    A = A1 + R.dot(C)
    B = B1 + R.dot(D)
    # keep the top blocks small: reduce by n(S) with S symmetric near -A C^{-1}
    return from_blocks(A, B, C, D)


# ---------------------------------------------------------------------------
# coset classes

@dataclass(frozen=True)
class CosetClass:
    """Bottom pair (C, D), a completion g and translation offsets S with n(S) g in the group."""
    C: np.ndarray
    D: np.ndarray
    g: SymplecticElement
    offsets: tuple

    def key(self):
        return tuple(int(x) for x in np.hstack([self.C, self.D]).flat)


def _canonical_sign_row(c, d):
    return (c, d) if (c > 0 or (c == 0 and d > 0)) else (-c, -d)


def _classes_degree1(H, modulo_sign=True):
    rows = []
    for c in range(0, H + 1):
        for d in range(-H, H + 1):
            if math.gcd(c, d) != 1:
                continue
            if c == 0 and d < 0 and modulo_sign:
                continue
            rows.append((c, d))
            if not modulo_sign and c > 0:
                rows.append((-c, -d))
    if (0, 1) not in rows:
        rows.insert(0, (0, 1))
    if not modulo_sign:
        rows.append((0, -1))
    return rows


def _hnf2x4_batch(M):
    """Vectorised row HNF for a batch of 2 x 4 integer matrices of rank 2 (int64)."""
    M = M.copy()
    N = M.shape[0]
    r = np.zeros(N, dtype=np.int64)  # next pivot row per matrix
    piv = np.full((N, 2), -1)
    for c in range(4):
        active = r < 2
        # Euclid on column c between rows r..1
        both = active & (r == 0)
        for _ in range(200):
            a = M[:, 0, c]
            b = M[:, 1, c]
            m = both & (b != 0)
            if not m.any():
                break
            swap = m & ((a == 0) | (np.abs(b) < np.abs(a)))
            M[swap] = M[swap][:, ::-1, :]
            a = M[:, 0, c]
            b = M[:, 1, c]
            m = both & (b != 0)
            q = np.zeros(N, dtype=np.int64)
            q[m] = b[m] // a[m]
            M[:, 1, :] -= q[:, None] * M[:, 0, :]
        # matrices where row r has a nonzero in column c get a pivot
        idx = np.arange(N)
        rr = np.minimum(r, 1)
        val = M[idx, rr, c]
        has = active & (val != 0)
        neg = has & (val < 0)
        M[neg, rr[neg], :] *= -1
        h1 = has & (r == 1)
        # reduce the row above the second pivot
        if h1.any():
            p = M[h1, 1, c]
            q = M[h1, 0, c] // p
            M[h1, 0, :] -= q[:, None] * M[h1, 1, :]
        piv[has, rr[has]] = c
        r[has] += 1
    return M


@lru_cache(maxsize=8)
def _pair_classes_degree2(H: int, level: int = 1):
    """GL_2(Z)-classes of coprime symmetric pairs with some representative of height <= H.

    Returns an int64 array (m, 2, 4) of HNF representatives (rows of (C D)).
    Only pairs with C = 0 mod level are kept.
    """
    rng = np.arange(-H, H + 1)
    allm = np.array(list(itertools.product(rng, repeat=4)), dtype=np.int64).reshape(-1, 2, 2)
    Cs = allm[np.all(allm % level == 0, axis=(1, 2))]
    Ds = allm
    keys = []
    for C in Cs:
        # symmetric C D^t: c11 d21 + c12 d22 == c21 d11 + c22 d12
        lhs = C[0, 0] * Ds[:, 1, 0] + C[0, 1] * Ds[:, 1, 1]
        rhs = C[1, 0] * Ds[:, 0, 0] + C[1, 1] * Ds[:, 0, 1]
        D = Ds[lhs == rhs]
        if len(D) == 0:
            continue
        M = np.concatenate([np.broadcast_to(C, D.shape), D], axis=2)  # rows (C_i D_i)
        # gcd of the six 2x2 minors must be 1
        g = np.zeros(len(M), dtype=np.int64)
        for a, b in itertools.combinations(range(4), 2):
            g = np.gcd(g, M[:, 0, a] * M[:, 1, b] - M[:, 0, b] * M[:, 1, a])
        M = M[g == 1]
        if len(M) == 0:
            continue
        keys.append(_hnf2x4_batch(M).reshape(-1, 8))
    # the parabolic class (0, 1) is present at every height
    keys.append(np.array([[0, 0, 1, 0, 0, 0, 0, 1]], dtype=np.int64))
    allk = np.unique(np.concatenate(keys), axis=0)
    return allk.reshape(-1, 2, 4)


def enumerate_cosets(group, H: int):
    """Classes of Gamma_{0,inf} \\ Gamma whose bottom blocks have entries bounded by H.

    Degree 1: rows (c, d) up to the sign if -1 lies in the group.  Degree 2:
    supported for groups whose unit group is all of GL_2(Z) (full, Gamma0,
    GammaUpper0, Gamma0Upper0); pairs are taken up to the left GL_2(Z) action
    with the row Hermite normal form as canonical representative.
    """
    from .subgroups import contains, translation_offsets, unit_group_is_full

    n = group.n
    if n == 1:
        minus = contains(group, from_blocks([[-1]], [[0]], [[0]], [[-1]]))
        out = []
        for c, d in _classes_degree1(H, modulo_sign=minus):
            g0 = complete_pair([[c]], [[d]])
            offs = translation_offsets(group, g0)
            if offs:
                out.append(CosetClass(g0.C, g0.D, g0, tuple(offs)))
        return out
    if n == 2:
        if not unit_group_is_full(group):
            raise CapabilityError("degree-2 cosets need a group containing all of m(GL_2(Z))")
        out = []
        for rep in _pair_classes_degree2(H):
            C, D = int_matrix(rep[:, :2]), int_matrix(rep[:, 2:])
            g0 = complete_pair(C, D)
            offs = translation_offsets(group, g0)
            if offs:
                out.append(CosetClass(g0.C, g0.D, g0, tuple(offs)))
        out.sort(key=lambda cl: (int(np.abs(cl.C.astype(np.int64)).max()), cl.key()))
        return out
    raise CapabilityError(f"coset enumeration is implemented for degree 1 and 2, not {n}")


def gamma0p_cosets_sp2(p: int):
    """Right coset representatives of Gamma_0^{(2)}(p) in Sp_2(Z), grouped R(0), R(1), R(2).

    Returns a list of (j, g) with g = w_j n(B_j) m(A^{-1}); taking m(A^t) instead
    makes distinct A land in the same coset.
    """
    if p < 2 or any(p % q == 0 for q in range(2, int(math.isqrt(p)) + 1)):
        raise DomainError(f"{p} is not prime")
    Z2 = [[0, 0], [0, 0]]
    out = [(0, identity(2))]
    Areps = [[[1, 0], [0, 1]]] + [[[0, 1], [-1, x]] for x in range(p)]
    w1, w2 = w_j(1), w_j(2)
    for A in Areps:
        Ai = int_inverse(int_matrix(A))
        for b in range(p):
            g = w1 @ n_of([[b, 0], [0, 0]]) @ m_of(Ai)
            out.append((1, g))
    for b11, b12, b22 in itertools.product(range(p), repeat=3):
        out.append((2, w2 @ n_of([[b11, b12], [b12, b22]])))
    return out
