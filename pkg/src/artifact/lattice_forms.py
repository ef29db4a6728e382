"""Positive (half-)integral forms: enumeration under a trace bound, automorphs and the
unit theta tail H(T, Y)."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exact_linalg import DomainError, RationalSymMatrix, exact_det, is_positive_definite, short_vectors
from .subgroups import (
    DualLatticeDescriptor,
    GroupDescriptor,
    contains,
    dual_lattice_contains,
    full_lattice,
    unit_group_is_full,
)
from .symplectic import CapabilityError, m_of


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class HalfIntegralForm:
    """T = G / (2 w) with G an integer symmetric matrix; w = 1 gives T in Lambda_n."""
    G: tuple
    w: int = 1

    def __post_init__(self):
        G = tuple(tuple(int(x) for x in r) for r in np.asarray(self.G, dtype=object).reshape(len(self.G), -1))
        n = len(G)
        for i in range(n):
            for j in range(i):
                if G[i][j] != G[j][i]:
                    raise DomainError("form is not symmetric")
        object.__setattr__(self, "G", G)
        if not is_positive_definite(np.array(G, dtype=object)):
            raise DomainError("form is not positive definite")

    @property
    def n(self):
        return len(self.G)

    @classmethod
    def from_T(cls, T, w: int = 1) -> "HalfIntegralForm":
        T = RationalSymMatrix(T)
        G = [[2 * w * x for x in r] for r in T.entries]
        if any(Fraction(x).denominator != 1 for r in G for x in r):
            raise DomainError(f"T is not in (1/{w}) Lambda*")
        return cls(tuple(tuple(int(x) for x in r) for r in G), w)

    def T(self) -> RationalSymMatrix:
        return RationalSymMatrix([[Fraction(x, 2 * self.w) for x in r] for r in self.G])

    def to_float(self) -> np.ndarray:
        return np.array(self.G, dtype=float) / (2 * self.w)

    def det(self) -> Fraction:
        return exact_det(self.T().as_array())

    def trace(self) -> Fraction:
        return sum((Fraction(self.G[i][i], 2 * self.w) for i in range(self.n)), Fraction(0))


def form(T, w: int = 1) -> HalfIntegralForm:
    if np.ndim(T) == 0:
        T = [[T]]
    return HalfIntegralForm.from_T(T, w)


@dataclass
class FormEnumeration:
    lattice: DualLatticeDescriptor
    Y: np.ndarray
    bound: float
    forms: list = field(default_factory=list)

    def arrays(self):
        """(m, n, n) float array of the T's and the exact determinants as floats."""
        Ts = np.array([f.to_float() for f in self.forms]).reshape(-1, self.lattice.n, self.lattice.n)
        return Ts

    def to_json(self):
        return [[list(r) for r in f.G] for f in self.forms]


def _dual_steps(lattice: DualLatticeDescriptor):
    """Entry steps of the dual lattice: t_ii in (1/n_ii) Z, t_ij in (1/2n_ij) Z."""
    n = lattice.n
    W = lattice.widths
    return [[Fraction(1, W[i][j]) if i == j else Fraction(1, 2 * W[i][j]) for j in range(n)] for i in range(n)]


def enumerate_forms_array(lattice: DualLatticeDescriptor, Y, bound: float):
    """Vectorised enumeration; returns (G int64 (m,n,n), w) with T = G/(2w), tr(TY) <= bound, T > 0."""
    Y = np.asarray(Y, dtype=float)
    n = lattice.n
    if n not in (1, 2, 3):
        raise CapabilityError("form enumeration is implemented for n <= 3")
    w = lattice.omega
    lam = float(np.linalg.eigvalsh(Y)[0])
    steps = _dual_steps(lattice)
    # G = 2 w T: diagonal step 2w/n_ii, off-diagonal step w/n_ij
    gs = [[int(2 * w * steps[i][j]) for j in range(n)] for i in range(n)]
    tmax = bound / lam
    diag_ranges = [np.arange(gs[i][i], int(math.floor(2 * w * tmax + 1e-9)) + 1, gs[i][i]) for i in range(n)]
    if any(len(r) == 0 for r in diag_ranges):
        return np.zeros((0, n, n), dtype=np.int64), w
    grids = np.meshgrid(*diag_ranges, indexing="ij")
    diag = np.stack([g.ravel() for g in grids], axis=1)
    # diagonal entries obey t_ii <= bound / lam_min(Y); the trace bound is applied exactly below
    out = []
    if n == 1:
        G = diag.reshape(-1, 1, 1)
        keep = G[:, 0, 0] * Y[0, 0] <= 2 * w * bound * (1 + 1e-12)
        return G[keep].astype(np.int64), w
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for d in diag:
        ranges = []
        for i, j in pairs:
            # positivity forces g_ij^2 < g_ii g_jj
            lim = math.isqrt(int(d[i] * d[j]))
            st = gs[i][j]
            ranges.append(np.arange(-(lim // st) * st, lim + 1, st))
        offs = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
        G = np.zeros((len(offs), n, n), dtype=np.int64)
        for i in range(n):
            G[:, i, i] = d[i]
        for c, (i, j) in enumerate(pairs):
            G[:, i, j] = offs[:, c]
            G[:, j, i] = offs[:, c]
        tr = np.einsum("mij,ji->m", G.astype(float), Y)
        G = G[tr <= 2 * w * bound * (1 + 1e-12)]
        if len(G):
            out.append(G)
    if not out:
        return np.zeros((0, n, n), dtype=np.int64), w
    G = np.concatenate(out)
    # exact positivity on integer minors
    m2 = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    keep = m2 > 0
    if n == 3:
        det3 = np.array([int(exact_det(g)) for g in G.astype(object)]) if len(G) < 2000 else np.rint(np.linalg.det(G.astype(float))).astype(np.int64)
        keep &= det3 > 0
    return G[keep], w


def enumerate_forms(lattice: DualLatticeDescriptor, Y, bound: float) -> FormEnumeration:
    """All T > 0 in the dual lattice with tr(TY) <= bound (n <= 3)."""
    if bound <= 0:
        raise DomainError("bound must be positive")
    Y = np.asarray(Y, dtype=float).reshape(lattice.n, lattice.n)
    if not is_positive_definite(Y):
        raise DomainError("Y must be positive definite")
    G, w = enumerate_forms_array(lattice, Y, bound)
    return FormEnumeration(lattice, Y, bound, [HalfIntegralForm(tuple(map(tuple, g)), w) for g in G])


# ---------------------------------------------------------------------------
# units

def units_in_box(n: int, Ygram, bound: float) -> np.ndarray:
    """U in GL_n(Z) with tr(U^t Ygram U) <= bound (int64, shape (m, n, n)); both signs kept."""
    Ygram = np.asarray(Ygram, dtype=float)
    cols = short_vectors(Ygram, bound)
    if len(cols) == 0:
        return np.zeros((0, n, n), dtype=np.int64)
    cols = np.concatenate([cols, -cols])
    norms = np.einsum("ij,jk,ik->i", cols, Ygram, cols)
    order = np.argsort(norms)
    cols, norms = cols[order], norms[order]
    out = []
    if n == 1:
        return cols[np.abs(cols[:, 0]) == 1].reshape(-1, 1, 1)
    if n == 2:
        i, j = np.nonzero(norms[:, None] + norms[None, :] <= bound * (1 + 1e-12))
        det = cols[i, 0] * cols[j, 1] - cols[i, 1] * cols[j, 0]
        ok = np.abs(det) == 1
        U = np.stack([cols[i[ok]], cols[j[ok]]], axis=2)
        return U.astype(np.int64)
    for combo in itertools.product(range(len(cols)), repeat=n):
        if norms[list(combo)].sum() > bound * (1 + 1e-12):
            continue
        U = cols[list(combo)].T
        if abs(round(np.linalg.det(U))) == 1:
            out.append(U)
    return np.array(out, dtype=np.int64).reshape(-1, n, n)


def required_unit_norm(T: HalfIntegralForm, T2: HalfIntegralForm) -> float:
    """T[U] = T2 forces tr(U^t U) <= tr(T2) / lambda_min(T)."""
    lam = float(np.linalg.eigvalsh(T.to_float())[0])
    return float(T2.trace()) / lam * (1 + 1e-9) + 1e-9


def automorphism_count(T: HalfIntegralForm, T2: HalfIntegralForm, units=None, normBound=None) -> int:
    """#{U in units : U^t T U = T2}.  Units default to all of GL_n(Z) up to the forced norm."""
    need = required_unit_norm(T, T2)
    if units is None:
        units = units_in_box(T.n, np.eye(T.n), need)
    elif normBound is not None and normBound < need:
        raise ParameterError(f"unit list norm bound {normBound} below the required {need:.3f}")
    if T.w != T2.w:
        return 0
    G = np.array(T.G, dtype=np.int64)
    G2 = np.array(T2.G, dtype=np.int64)
    U = np.asarray(units, dtype=np.int64)
    img = np.einsum("mji,jk,mkl->mil", U, G, U)
    return int(np.all(img == G2, axis=(1, 2)).sum())


def group_units(group: GroupDescriptor, Ygram, bound: float) -> np.ndarray:
    U = units_in_box(group.n, Ygram, bound)
    if unit_group_is_full(group):
        return U
    keep = [i for i in range(len(U)) if contains(group, m_of(U[i]))]
    return U[keep]


def _theta1(s: float) -> float:
    m = np.arange(1, 200)
    return 1.0 + 2.0 * float(np.exp(-s * m * m).sum())


@dataclass
class ThetaTail:
    value: float
    tail_bound: float
    shell: float
    count: int


def theta_tail(group: GroupDescriptor, T, Y, tailTol: float = 1e-15) -> ThetaTail:
    """H(T, Y) = sum over U in the unit group of exp(-2 pi tr(T Y[U])).

    Units are taken in shells tr(Y[U]) <= R; the remainder is bounded by
    exp(-a R / 2) theta(a lam_Y / 2)^(n^2) with a = 2 pi lam_min(T), which is
    increased until it drops below tailTol.
    """
    Tf = T.to_float() if isinstance(T, HalfIntegralForm) else np.atleast_2d(np.asarray(T, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    if not is_positive_definite(Y) or not is_positive_definite(Tf):
        raise DomainError("T and Y must be positive definite")
    a = 2 * math.pi * float(np.linalg.eigvalsh(Tf)[0])
    lamY = float(np.linalg.eigvalsh(Y)[0])
    th = _theta1(a * lamY / 2) ** (n * n)
    R = max(float(np.trace(Y)), 1.0)
    while math.exp(-a * R / 2) * th > tailTol:
        R *= 1.25
    U = group_units(group, Y, R)
    YU = np.einsum("mji,jk,mkl->mil", U, Y, U)
    ex = np.einsum("ij,mji->m", Tf, YU)
    vals = np.exp(-2 * math.pi * ex)
    val = float(math.fsum(np.sort(vals)))
    return ThetaTail(val, math.exp(-a * R / 2) * th, R, len(U))
