"""Congruence subgroup descriptors, membership, cusp widths at infinity and unit groups."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exact_linalg import DomainError, RationalSymMatrix, int_eye, int_matrix, int_zeros, short_vectors
from .symplectic import SymplecticElement, identity, m_of, n_of

FAMILIES = ("full", "Gamma0", "GammaUpper0", "Gamma1", "Principal", "Gamma0Upper0")


@dataclass(frozen=True)
class GroupDescriptor:
    """A congruence subgroup of Sp_n(Z); with a conjugator h it stands for h^{-1} Gamma h."""
    n: int
    family: str = "full"
    N: int = 1
    conjugator: SymplecticElement | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.N < 1:
            raise DomainError("level must be positive")
        if self.N == 1 and self.family != "full":
            object.__setattr__(self, "family", "full")
        if self.family == "full" and self.N != 1:
            raise DomainError("the full group has level 1")
        if self.conjugator is not None and self.conjugator.n != self.n:
            raise DomainError("conjugator degree mismatch")

    def conjugate(self, h: SymplecticElement) -> "GroupDescriptor":
        """Descriptor of h^{-1} Gamma h (composes with an existing conjugator)."""
        if self.conjugator is None:
            return GroupDescriptor(self.n, self.family, self.N, h)
        return GroupDescriptor(self.n, self.family, self.N, self.conjugator @ h)

    def label(self) -> str:
        base = "Sp" if self.family == "full" else f"{self.family}({self.N})"
        return base + ("" if self.conjugator is None else "^conj")

    def to_dict(self):
        return {"n": self.n, "family": self.family, "N": self.N,
                "conjugator": None if self.conjugator is None else self.conjugator.tolist()}


def full_group(n: int) -> GroupDescriptor:
    return GroupDescriptor(n)


def _base_contains(family, N, M) -> bool:
    if family == "full":
        return True
    n = M.shape[0] // 2
    A, B, C, D = M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]
    I = int_eye(n)
    zero = lambda X: all(int(x) % N == 0 for x in X.flat)
    if family == "Gamma0":
        return zero(C)
    if family == "GammaUpper0":
        return zero(B)
    if family == "Gamma0Upper0":
        return zero(B) and zero(C)
    if family == "Gamma1":
        return zero(C) and zero(A - I)
    if family == "Principal":
        return zero(B) and zero(C) and zero(A - I) and zero(D - I)
    raise DomainError(family)


def contains(group: GroupDescriptor, g) -> bool:
    """Exact membership; a conjugated descriptor tests h g h^{-1} against the base family."""
    M = g.M if isinstance(g, SymplecticElement) else int_matrix(g)
    if M.shape[0] != 2 * group.n:
        raise DomainError("degree mismatch")
    if group.conjugator is not None:
        h = group.conjugator
        M = h.M.dot(M).dot(h.inverse().M)
    return _base_contains(group.family, group.N, M)


def contains_batch(group: GroupDescriptor, Ms: np.ndarray) -> np.ndarray:
    """Vectorised membership for an int64 array of shape (m, 2n, 2n) (small entries only)."""
    Ms = np.asarray(Ms, dtype=np.int64)
    if group.conjugator is not None:
        h = group.conjugator.M.astype(np.int64)
        hi = group.conjugator.inverse().M.astype(np.int64)
        Ms = h @ Ms @ hi
    n = group.n
    N = group.N
    if group.family == "full":
        return np.ones(len(Ms), dtype=bool)
    A, B, C, D = Ms[:, :n, :n], Ms[:, :n, n:], Ms[:, n:, :n], Ms[:, n:, n:]
    I = np.eye(n, dtype=np.int64)
    z = lambda X: np.all(X % N == 0, axis=(1, 2))
    fam = group.family
    if fam == "Gamma0":
        return z(C)
    if fam == "GammaUpper0":
        return z(B)
    if fam == "Gamma0Upper0":
        return z(B) & z(C)
    if fam == "Gamma1":
        return z(C) & z(A - I)
    return z(B) & z(C) & z(A - I) & z(D - I)


def elementary_sym(n: int, i: int, j: int):
    E = int_zeros(n, n)
    E[i, j] = 1
    E[j, i] = 1
    return E


# ---------------------------------------------------------------------------
# cusp widths

@dataclass(frozen=True)
class CuspData:
    widths: tuple
    omega: int
    latticeIndex: int

    def config(self):
        """(n11, n12, n22) for degree 2, (n11,) for degree 1, upper triangle otherwise."""
        n = len(self.widths)
        return tuple(self.widths[i][j] for i in range(n) for j in range(i, n))

    def to_dict(self):
        return {"widths": [list(r) for r in self.widths], "omega": self.omega, "latticeIndex": self.latticeIndex}


def _divisors(N):
    return [d for d in range(1, N + 1) if N % d == 0]


def cusp_width_config(group: GroupDescriptor) -> CuspData:
    """n_ij = least t >= 1 with n(t E_ij) in the group; only divisors of N are tried."""
    n = group.n
    W = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            E = elementary_sym(n, i, j)
            for t in _divisors(group.N):
                if contains(group, n_of(t * E)):
                    W[i][j] = W[j][i] = t
                    break
    omega = 1
    index = 1
    for i in range(n):
        for j in range(i, n):
            omega = omega * W[i][j] // math.gcd(omega, W[i][j])
            index *= W[i][j]
    return CuspData(tuple(tuple(r) for r in W), omega, index)


@dataclass(frozen=True)
class DualLatticeDescriptor:
    """Translation lattice S_Gamma (by generators) and membership test for its dual."""
    n: int
    generators: tuple
    widths: tuple = field(default=())

    @property
    def index(self) -> int:
        idx = 1
        for i in range(self.n):
            for j in range(i, self.n):
                idx *= self.widths[i][j]
        return idx

    @property
    def omega(self) -> int:
        om = 1
        for r in self.widths:
            for w in r:
                om = om * w // math.gcd(om, w)
        return om


def dual_lattice(group_or_cusp) -> DualLatticeDescriptor:
    cd = group_or_cusp if isinstance(group_or_cusp, CuspData) else cusp_width_config(group_or_cusp)
    n = len(cd.widths)
    gens = tuple(cd.widths[i][j] * elementary_sym(n, i, j) for i in range(n) for j in range(i, n))
    return DualLatticeDescriptor(n, gens, cd.widths)


def full_lattice(n: int) -> DualLatticeDescriptor:
    return dual_lattice(CuspData(tuple(tuple(1 for _ in range(n)) for _ in range(n)), 1, 1))


def dual_lattice_contains(desc: DualLatticeDescriptor, T) -> bool:
    """T in the dual of S_Gamma iff tr(T S) is an integer for every generator S."""
    if not isinstance(T, RationalSymMatrix):
        T = RationalSymMatrix(T)
    if T.n != desc.n:
        raise DomainError("dimension mismatch")
    return all(T.trace_pair(S).denominator == 1 for S in desc.generators)


def translation_offsets(group: GroupDescriptor, g0: SymplecticElement):
    """Symmetric S (one per class mod S_Gamma) with n(S) g0 in the group.

    Scans Sym_n(Z/N); at most one class survives because two solutions differ
    by a translation of the group.
    """
    n = group.n
    if contains(group, g0):
        return [int_zeros(n, n)]
    N = group.N
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    for vals in itertools.product(range(N), repeat=len(idx)):
        S = int_zeros(n, n)
        for (i, j), v in zip(idx, vals):
            S[i, j] = S[j, i] = v
        if contains(group, n_of(S).__matmul__(g0)):
            return [S]
    return []


# ---------------------------------------------------------------------------
# unit groups

def unit_group_is_full(group: GroupDescriptor) -> bool:
    """True when m(U) lies in the group for every U in GL_n(Z)."""
    if group.conjugator is None and group.family in ("full", "Gamma0", "GammaUpper0", "Gamma0Upper0"):
        return True
    n = group.n
    gens = [np.diag([-1] + [1] * (n - 1))]
    if n >= 2:
        P = np.eye(n, dtype=int)
        P[[0, 1]] = P[[1, 0]]
        E = np.eye(n, dtype=int)
        E[0, 1] = 1
        gens += [P, E, np.roll(np.eye(n, dtype=int), 1, axis=0)]
    return all(contains(group, m_of(U)) for U in gens)


def gl_units(n: int, normBound: float) -> np.ndarray:
    """All U in GL_n(Z) with tr(U^t U) <= normBound, as an int64 array (m, n, n)."""
    cols = short_vectors(np.eye(n), normBound)
    cols = np.concatenate([cols, -cols])
    norms = (cols ** 2).sum(1)
    out = []
    for combo in itertools.product(range(len(cols)), repeat=n):
        if norms[list(combo)].sum() > normBound + 1e-9:
            continue
        U = cols[list(combo)].T
        if abs(round(np.linalg.det(U))) == 1:
            out.append(U)
    if not out:
        return np.zeros((0, n, n), dtype=np.int64)
    return np.array(out, dtype=np.int64)


def unit_group_elements(group: GroupDescriptor, normBound: float) -> np.ndarray:
    """U in GL_n(Z) with tr(U^t U) <= normBound and m(U) in the group."""
    if normBound < group.n:
        raise DomainError("normBound must be at least n")
    U = gl_units(group.n, normBound)
    if unit_group_is_full(group):
        return U
    keep = [i for i in range(len(U)) if contains(group, m_of(U[i]))]
    return U[keep]
