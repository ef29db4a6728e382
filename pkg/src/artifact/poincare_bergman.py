"""Siegel Poincare series, Bergman kernel and related lattice sums for degree 1 and 2.

All det^k and Gamma factors are combined in log space; coset and unit sums are
vectorised over numpy arrays.  Every evaluator returns a value together with an
a-posteriori tail estimate.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .exact_linalg import DomainError, is_minkowski_reduced, is_positive_definite, minkowski_reduce
from .lattice_forms import (
    HalfIntegralForm,
    ParameterError,
    automorphism_count,
    enumerate_forms_array,
    form,
    theta_tail,
    units_in_box,
)
from .subgroups import (
    DualLatticeDescriptor,
    GroupDescriptor,
    contains,
    cusp_width_config,
    dual_lattice,
    full_group,
    unit_group_is_full,
)
from .symplectic import (
    CapabilityError,
    SiegelPoint,
    _pair_classes_degree2,
    complete_pair,
    enumerate_cosets,
)


class ConvergenceError(ValueError):
    pass


class TruncationFailure(ArithmeticError):
    pass


EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# constants

def log_gamma_n(n: int, s: float) -> float:
    """log Gamma_n(s) = n(n-1)/4 log pi + sum_j log Gamma(s - (j-1)/2)."""
    args = [s - (j - 1) / 2 for j in range(1, n + 1)]
    if min(args) <= 0:
        raise DomainError(f"Gamma_{n}({s}) hits a pole or negative argument")
    return n * (n - 1) / 4 * math.log(math.pi) + float(sum(gammaln(a) for a in args))


@dataclass(frozen=True)
class SpectralConstants:
    n: int
    k: int
    logA: float
    logB: float  # log |b_{n,k}|
    phaseB: complex  # b_{n,k} / |b_{n,k}|
    logC: float

    def logGammaN(self, s):
        return log_gamma_n(self.n, s)

    @property
    def a(self):
        return math.exp(self.logA)

    @property
    def b(self):
        return math.exp(self.logB) * self.phaseB

    @property
    def c(self):
        return math.exp(self.logC)


def constants(n: int, k: int) -> SpectralConstants:
    args = [k - (v - 1) / 2 for v in range(1, n + 1)] + [k - (v + n) / 2 for v in range(1, n + 1)]
    args += [k - nu / 2 for nu in range(n)] + [k - (n + 1) / 2 - (j - 1) / 2 for j in range(1, n + 1)]
    if min(args) <= 0:
        raise DomainError(f"weight {k} too small for degree {n}: a Gamma factor has a pole")
    logA = -n * (n + 3) / 2 * math.log(2) - n * (n + 1) / 2 * math.log(math.pi)
    logA += sum(gammaln(k - (v - 1) / 2) - gammaln(k - (v + n) / 2) for v in range(1, n + 1))
    # (2 sqrt(pi))^{+n(n-1)/2}: the sign that makes the Lipschitz formula hold for n >= 2
    logB = n * (n - 1) / 2 * math.log(2 * math.sqrt(math.pi)) - n * k * math.log(2 * math.pi)
    logB += sum(gammaln(k - nu / 2) for nu in range(n))
    # (-2 pi i)^{-nk} has phase i^{nk}
    phaseB = 1j ** ((n * k) % 4)
    logC = n * (n - 1) / 4 * math.log(math.pi) + (n * (n + 1) / 2 - n * k) * math.log(4 * math.pi)
    logC += log_gamma_n(n, k - (n + 1) / 2)
    return SpectralConstants(n, k, float(logA), float(logB), phaseB, float(logC))


@dataclass(frozen=True)
class TruncationParams:
    """Cutoffs for the numeric evaluators.

    cosetHeight: entries of the bottom blocks (C, D); latticeTraceBound: None
    means automatic from the weight; quadratureGrid: points per coordinate of
    the X-grid; tailTol: relative pruning level; cMax: degree-one c-sums.
    """
    cosetHeight: int = 30
    latticeTraceBound: float | None = None
    quadratureGrid: int = 8
    tailTol: float = 1e-14
    cMax: int = 2000
    unitNorm: float = 24.0
    precision: str = "double"

    def __post_init__(self):
        for name in ("cosetHeight", "quadratureGrid", "cMax"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.tailTol <= 0:
            raise DomainError("tailTol must be positive")

    def doubled(self) -> "TruncationParams":
        return replace(
            self,
            cosetHeight=2 * self.cosetHeight,
            latticeTraceBound=None if self.latticeTraceBound is None else 2 * self.latticeTraceBound,
            quadratureGrid=2 * self.quadratureGrid,
            tailTol=self.tailTol / 2,
            cMax=2 * self.cMax,
            unitNorm=2 * self.unitNorm,
        )


def default_trunc(n: int) -> TruncationParams:
    if n == 1:
        return TruncationParams(cosetHeight=30)
    return TruncationParams(cosetHeight=2, unitNorm=8.0, tailTol=1e-6)


@dataclass
class Evaluation:
    value: complex | float
    tail: float
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# coset tables

@dataclass
class CosetTable:
    """Group elements representing Gamma_{0,inf} \\ Gamma up to the unit action (float blocks)."""
    n: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    height: np.ndarray  # sup-norm of (C, D) per row
    units_full: bool

    def __len__(self):
        return len(self.A)


@lru_cache(maxsize=32)
def coset_table(group: GroupDescriptor, H: int) -> CosetTable:
    n = group.n
    if n == 1:
        classes = enumerate_cosets(group, H)
        mats = []
        for cl in classes:
            for S in cl.offsets:
                g = cl.g.M.astype(np.int64).copy()
                g[0, 0] += int(S[0, 0]) * g[1, 0]
                g[0, 1] += int(S[0, 0]) * g[1, 1]
                mats.append(g)
        M = np.array(mats, dtype=float).reshape(-1, 2, 2)
        return CosetTable(1, M[:, :1, :1], M[:, :1, 1:], M[:, 1:, :1], M[:, 1:, 1:],
                          np.abs(M[:, 1, :]).max(1), True)
    if n == 2:
        if not unit_group_is_full(group):
            raise CapabilityError("degree-2 evaluation needs a group containing m(GL_2(Z))")
        reps = _pair_classes_degree2(H)
        mats = []
        for rep in reps:
            C, D = rep[:, :2], rep[:, 2:]
            if group.family in ("Gamma0", "Gamma0Upper0") and np.any(C % group.N):
                continue
            g = complete_pair(C.astype(object), D.astype(object))
            if not contains(group, g):
                # Gamma^0-type groups: look for a translate n(S) g inside the group
                from .subgroups import translation_offsets
                offs = translation_offsets(group, g)
                if not offs:
                    continue
                from .symplectic import n_of
                g = n_of(offs[0]) @ g
            mats.append(g.M.astype(np.int64))
        M = np.array(mats, dtype=float)
        return CosetTable(2, M[:, :2, :2], M[:, :2, 2:], M[:, 2:, :2], M[:, 2:, 2:],
                          np.abs(M[:, 2:, :]).max(axis=(1, 2)), True)
    raise CapabilityError(f"evaluation is implemented for degree 1 and 2, not {n}")


def _det(M):
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def _inv(M):
    if M.shape[-1] == 1:
        return 1.0 / M
    d = _det(M)
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out / d[..., None, None]


def apply_table(table: CosetTable, Z: np.ndarray):
    """J(g, Z) and g<Z> for every row of the table."""
    Q = table.C @ Z + table.D
    J = _det(Q)
    W = (table.A @ Z + table.B) @ _inv(Q)
    W = (W + np.swapaxes(W, -1, -2)) / 2
    return J, W


def gauss_reduce_batch(Y: np.ndarray, max_iter: int = 200):
    """Vectorised Lagrange-Gauss reduction of 2x2 positive forms.

    Returns V (int64, det +-1) with V^t Y V reduced: |2 y12| <= y11 <= y22.
    """
    m = len(Y)
    a = Y[:, 0, 0].copy()
    b = Y[:, 0, 1].copy()
    c = Y[:, 1, 1].copy()
    V = np.zeros((m, 2, 2), dtype=np.int64)
    V[:, 0, 0] = 1
    V[:, 1, 1] = 1
    for _ in range(max_iter):
        # size reduce: e2 -> e2 - r e1
        r = np.rint(b / a)
        active = r != 0
        if active.any():
            c = c - 2 * r * b + r * r * a
            b = b - r * a
            ri = r.astype(np.int64)
            V[:, :, 1] -= ri[:, None] * V[:, :, 0]
        sw = c < a * (1 - 1e-15)
        if sw.any():
            a[sw], c[sw] = c[sw], a[sw].copy()
            V[sw] = V[sw][:, :, ::-1]
        if not active.any() and not sw.any():
            break
    return V


def _units_mod_sign(R: float) -> np.ndarray:
    U = units_in_box(2, np.eye(2), R)
    # one of each +-U pair: first nonzero of the flattened matrix positive
    flat = U.reshape(len(U), -1)
    first = flat[np.arange(len(flat)), (flat != 0).argmax(1)]
    U = U[first > 0]
    norms = (U ** 2).sum(axis=(1, 2))
    return U[np.argsort(norms, kind="stable")]


@lru_cache(maxsize=8)
def units_mod_sign(R: float) -> np.ndarray:
    return _units_mod_sign(R)


# ---------------------------------------------------------------------------
# lattice exponential sums  L(W) = sum_T det(T)^kappa e(tr T W)

def _trace_cutoff(n: int, kappa: float, tol: float) -> float:
    """s with n kappa log(s/s*) - 2 pi (s - s*) below log(tol) minus a counting margin."""
    s_star = max(n * kappa / (2 * math.pi), 1e-3)
    s = s_star
    target = math.log(tol)
    while True:
        s += 0.25
        f = n * kappa * math.log(s / s_star) - 2 * math.pi * (s - s_star)
        if f < target - (n * (n + 1) / 2) * math.log(s + 2):
            return s


@dataclass
class FormTable:
    G: np.ndarray
    w: int
    coeffs: np.ndarray  # (m, n(n+1)/2) coefficients of (w11, w12, w22) in tr(T W)
    logdet: np.ndarray

    def __len__(self):
        return len(self.G)


def form_table(group: GroupDescriptor, Y: np.ndarray, bound: float) -> FormTable:
    lat = dual_lattice(group)
    G, w = enumerate_forms_array(lat, Y, bound)
    T = G.astype(float) / (2 * w)
    n = group.n
    if n == 1:
        coeffs = T.reshape(-1, 1)
        logdet = np.log(T[:, 0, 0])
    else:
        coeffs = np.stack([T[:, 0, 0], 2 * T[:, 0, 1], T[:, 1, 1]], axis=1)
        logdet = np.log(T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] ** 2)
    return FormTable(G, w, coeffs, logdet)


def _flat(W):
    if W.shape[-1] == 1:
        return W.reshape(-1, 1)
    return np.stack([W[:, 0, 0], W[:, 0, 1], W[:, 1, 1]], axis=1)


def lattice_exp_sum(ft: FormTable, kappa: float, W: np.ndarray, chunk: int = 4096):
    """log-scaled L(W): returns (logscale (m,), value (m,) complex) with L = exp(logscale) * value."""
    Wf = _flat(W)
    m = len(Wf)
    logscale = np.empty(m)
    val = np.empty(m, dtype=complex)
    step = max(1, chunk * 256 // max(len(ft), 1))
    for s in range(0, m, step):
        w = Wf[s:s + step]
        ph = w @ ft.coeffs.T  # tr(T W)
        re = kappa * ft.logdet[None, :] - 2 * math.pi * ph.imag
        mx = re.max(axis=1)
        terms = np.exp(re - mx[:, None] + 2j * math.pi * ph.real)
        logscale[s:s + step] = mx
        val[s:s + step] = terms.sum(axis=1)
    return logscale, val


# ---------------------------------------------------------------------------
# fundamental domain helpers

def reduce_degree1(z: complex, max_iter: int = 1000):
    """Move z into the standard domain |x| <= 1/2, |z| >= 1 (full modular group)."""
    for _ in range(max_iter):
        z = complex(z.real - math.floor(z.real + 0.5), z.imag)
        if abs(z) < 1 - 1e-15:
            z = -1 / z
        else:
            return z
    return z


def reduce_degree2(Z: np.ndarray, max_iter: int = 200):
    """Approximate reduction to the Siegel domain: Minkowski-reduce Y, translate X,
    and apply height-1 cosets while some |det(CZ+D)| < 1.  Returns (Z', certificate)."""
    table = coset_table(full_group(2), 1)
    Z = np.array(Z, dtype=complex)
    for _ in range(max_iter):
        Yr, U = minkowski_reduce(Z.imag)
        Uf = U.astype(float)
        Z = Uf.T @ Z @ Uf
        Z = Z.real - np.round(Z.real) + 1j * Z.imag
        Z = (Z + Z.T) / 2
        J, W = apply_table(table, Z)
        i = int(np.argmin(np.abs(J)))
        if abs(J[i]) < 1 - 1e-12:
            Z = W[i]
        else:
            return Z, float(np.abs(J).min())
    return Z, float(np.abs(J).min())


def f1_certificate(Z: np.ndarray, H: int = 1) -> float:
    """min |det(CZ+D)| over height-H coset classes (>= 1 - tol inside the domain)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    table = coset_table(full_group(Z.shape[0]), H)
    J, _ = apply_table(table, Z)
    J = J[table.height > 0] if np.any(table.height > 0) else J
    nontriv = np.any(table.C != 0, axis=(1, 2))
    return float(np.abs(J[nontriv]).min())


# ---------------------------------------------------------------------------
# Poincare series

def _check_weight(n, k):
    if k <= 2 * n + 1:
        raise ConvergenceError(f"Poincare series needs k > 2n + 1 = {2 * n + 1}, got k = {k}")


def _as_Z(Z, n):
    if isinstance(Z, SiegelPoint):
        return Z.Z
    return SiegelPoint(np.atleast_2d(np.asarray(Z, dtype=complex))).Z


def poincare_eval(group: GroupDescriptor, T, k: int, Z, trunc: TruncationParams | None = None) -> Evaluation:
    """P_T(Z) = sum over cosets of J^{-k} sum_U det(U)^k e(tr(T U^t g<Z> U))."""
    n = group.n
    _check_weight(n, k)
    trunc = trunc or default_trunc(n)
    T = T if isinstance(T, HalfIntegralForm) else form(T)
    Zm = _as_Z(Z, n)
    vals = poincare_eval_batch(group, T, k, Zm[None], trunc)
    return vals[0]


def poincare_eval_batch(group, T: HalfIntegralForm, k: int, Zs: np.ndarray, trunc: TruncationParams):
    n = group.n
    Tf = T.to_float()
    table = coset_table(group, trunc.cosetHeight)
    logtol = math.log(trunc.tailTol)
    out = []
    if n == 1:
        t = Tf[0, 0]
        H = int(table.height.max())
        rows = np.unique(np.stack([table.C[:, 0, 0], table.D[:, 0, 0]], 1), axis=0)
        mult = len(table) / len(rows)
        for Z in Zs:
            J, W = apply_table(table, Z)
            w = W[:, 0, 0]
            lg = -k * np.log(np.abs(J)) - 2 * math.pi * t * w.imag
            terms = np.exp(lg + 1j * (-k * np.angle(J) + 2 * math.pi * t * w.real))
            total = terms.sum()
            tail = (_shell_tail(terms, table.height, table.height) + mult * _pair_remainder(complex(Z[0, 0]), k, H)
                    + 1e2 * EPS * np.abs(terms).sum())
            out.append(Evaluation(complex(total), float(tail), {"terms": int(len(terms))}))
        return out
    # degree 2: the unit sum runs over GL_2(Z)/{+-1}
    U = units_mod_sign(trunc.unitNorm)
    Uf = U.astype(float)
    detU = np.rint(_det(Uf))
    unorm = (U ** 2).sum(axis=(1, 2))
    lamT = float(np.linalg.eigvalsh(Tf)[0])
    r1 = (Uf[:, :, 0] ** 2).sum(1)
    r2 = (Uf[:, :, 1] ** 2).sum(1)
    for Z in Zs:
        J, W = apply_table(table, Z)
        V = gauss_reduce_batch(W.imag)
        Vf = V.astype(float)
        Wr = np.swapaxes(Vf, 1, 2) @ W @ Vf
        detV = np.rint(_det(Vf))
        logJ = np.log(np.abs(J))
        Yr = Wr.imag
        # on a reduced form Y[u] >= (y11 u1^2 + y22 u2^2) / 2, so est majorises log|term|
        est = (-k * logJ[:, None]
               - math.pi * lamT * (Yr[:, 0, 0][:, None] * r1[None, :] + Yr[:, 1, 1][:, None] * r2[None, :]))
        keep = est > logtol + est.max()
        ri, ui = np.nonzero(keep)
        WU = np.swapaxes(Uf[ui], 1, 2) @ Wr[ri] @ Uf[ui]
        ph = np.einsum("ij,mji->m", Tf, WU)
        terms = np.exp(-k * logJ[ri] + 2j * math.pi * ph - 1j * k * np.angle(J[ri])) * (detV[ri] * detU[ui]) ** k
        total = terms.sum()
        tail = (_shell_tail(terms, table.height[ri], table.height)
                + _shell_tail(terms, unorm[ui], unorm)
                + float(np.exp(est[~keep]).sum())
                + 1e2 * EPS * np.abs(terms).sum())
        out.append(Evaluation(complex(total), float(tail), {"pairs": int(len(ri))}))
    return out


def _pair_remainder(z: complex, k: int, H: int) -> float:
    """Upper bound for the sum of |c z + d|^{-k} over c >= 1, (c, d) outside the box max(|c|, |d|) <= H."""
    x, y = z.real, z.imag
    line = math.sqrt(math.pi) * math.exp(gammaln((k - 1) / 2) - gammaln(k / 2))
    c = np.arange(1, H + 1, dtype=float)
    a = c * y
    total = 0.0
    # each side d > H and d < -H of the line c: first term plus the integral beyond it
    for sgn in (1.0, -1.0):
        u0 = H + 1 + sgn * c * x
        pos = u0 > 0
        u = np.where(pos, u0, 1.0)
        first = np.where(pos, (a * a + u * u) ** (-k / 2), a ** (-k))
        half = line * a ** (1 - k) / 2
        integ = np.where(pos, np.minimum(half, u ** (1 - k) / (k - 1)), 2 * half)
        total += float((first + integ).sum())
    # whole lines c > H: each is at most (c y)^{-k} + line (c y)^{1-k}, summed against the integral
    total += y ** (-k) * (H + 1.0) ** (-k) + y ** (-k) * H ** (1 - k) / (k - 1)
    total += line * y ** (1 - k) * ((H + 1.0) ** (1 - k) + H ** (2 - k) / (k - 2))
    return total


def _x_grid(group: GroupDescriptor, M: int):
    """Uniform product grid over X modulo the translation lattice: (points (m,n,n), weights)."""
    n = group.n
    W = cusp_width_config(group).widths
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    axes = [W[i][j] * np.arange(M) / M for i, j in idx]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    X = np.zeros((len(mesh), n, n))
    for c, (i, j) in enumerate(idx):
        X[:, i, j] = mesh[:, c]
        X[:, j, i] = mesh[:, c]
    return X


def default_y0(group: GroupDescriptor, T2: HalfIntegralForm) -> float:
    """1.5 for width-one groups, 1.5 N for principal-type ones, raised for large tr(T')."""
    base = 1.5 * (group.N if group.family in ("Principal", "Gamma1", "GammaUpper0") and group.N > 1 else 1)
    return max(base, float(T2.trace()) / (4 * group.n))


@dataclass
class FourierCoeff:
    value: float
    tail: float
    imag: float
    y0: float


def poincare_fourier_coeff(group: GroupDescriptor, T, T2, k: int, trunc: TruncationParams | None = None,
                           y0: float | None = None) -> FourierCoeff:
    """p_T(T') by uniform quadrature of P_T over X at height Y0 = y0 1_n.

    The value is |S|^{-1} exp(2 pi tr T' Y0) times the grid mean of P_T e(-tr T' X).
    A large imaginary part means aliasing or truncation trouble and is refused.
    """
    n = group.n
    _check_weight(n, k)
    trunc = trunc or default_trunc(n)
    T = T if isinstance(T, HalfIntegralForm) else form(T)
    T2 = T2 if isinstance(T2, HalfIntegralForm) else form(T2)
    M = trunc.quadratureGrid
    W = cusp_width_config(group).widths
    T2f = T2.to_float()
    # largest frequency along each grid axis (entry times width, doubled off the diagonal)
    freq = max(abs(T2f[i, j]) * W[i][j] * (1 if i == j else 2) for i in range(n) for j in range(i, n))
    if M <= 2 * freq:
        raise ParameterError(f"quadratureGrid {M} must exceed twice the Fourier index {freq:g}")
    y0 = y0 or default_y0(group, T2)
    X = _x_grid(group, M)
    Zs = X + 1j * y0 * np.eye(n)[None]
    ev = poincare_eval_batch(group, T, k, Zs, trunc)
    vals = np.array([e.value for e in ev])
    tails = np.array([e.tail for e in ev])
    phase = np.exp(-2j * math.pi * np.einsum("ij,mji->m", T2f, X))
    idx = dual_lattice(group).index
    scale = math.exp(2 * math.pi * y0 * float(T2.trace())) / idx
    c = (vals * phase).mean() * scale
    tail = float(tails.mean() * scale)
    if abs(c.imag) > max(1e-6 * abs(c.real), 10 * tail, 1e-12):
        raise ParameterError(f"imaginary residual {c.imag:.3e}: increase quadratureGrid or cosetHeight")
    return FourierCoeff(float(c.real), tail, float(c.imag), y0)


# ---------------------------------------------------------------------------
# Bergman kernel

@dataclass
class BergmanSetup:
    group: GroupDescriptor
    k: int
    trunc: TruncationParams
    table: CosetTable
    consts: SpectralConstants
    lattice_index: int


def _peak_scale(n, k, Y, logC):
    """Largest continuous value of det(Y)^k c^{-1} det(T)^kappa exp(-4 pi tr TY) over T > 0."""
    kappa = k - (n + 1) / 2
    ld2 = math.log(np.linalg.det(2 * Y))
    return math.exp(k * math.log(np.linalg.det(Y)) - logC
                    + kappa * (n * math.log(kappa / (2 * math.pi)) - ld2) - n * kappa)


def _shell_tail(vals, level, levels):
    """Size of the neglected part of a truncated sum, read off its outermost shells.

    vals are the complex terms, level their shell index (coset height or unit
    norm), levels all shell indices of the full table.  The last shell's signed
    size plus one percent of its absolute size is scaled by the geometric factor
    r / (1 - r), clipped to [1, 10], with r the absolute ratio of the last two shells.
    """
    levels = np.unique(levels)
    if len(levels) < 2 or len(vals) == 0:
        return 0.0
    top, below = levels[-1], levels[-2]
    a = np.abs(vals)
    last_abs = a[level == top].sum()
    prev_abs = a[level == below].sum()
    size = abs(vals[level == top].sum()) + 0.01 * last_abs
    r = last_abs / prev_abs if prev_abs > 0 else 1.0
    factor = 10.0 if r >= 10 / 11 else min(10.0, max(1.0, r / (1 - r)))
    return float(size * factor)


def _pruned_tail(est, keep, contrib, idx):
    """Pruned pairs weighted by their majorant exp(est), calibrated on the kept pairs."""
    if keep.all() or not keep.any():
        return 0.0
    scale = np.max(np.abs(contrib) / np.exp(est[keep])) / idx
    return float(4 * scale * np.exp(est[~keep]).sum())


def _bergman_core(group, k, Z, trunc, forms=None):
    n = group.n
    consts = constants(n, k)
    kappa = k - (n + 1) / 2
    Y = Z.imag
    logtol = math.log(trunc.tailTol)
    table = coset_table(group, trunc.cosetHeight)
    s_cut = trunc.latticeTraceBound or _trace_cutoff(n, kappa, trunc.tailTol)
    ft = forms or form_table(group, Y, s_cut)
    idx = dual_lattice(group).index
    J, W = apply_table(table, Z)
    logJ = np.log(np.abs(J))
    logdet2Y = math.log(np.linalg.det(2 * Y))
    if n == 1:
        y = Y[0, 0]
        est = -k * logJ + k * (logdet2Y - np.log(y + W[:, 0, 0].imag))
        keep = est > logtol
        Wk = W[keep] - np.conj(Z)[None]
        ls, v = lattice_exp_sum(ft, kappa, Wk)
        logmag = ls - k * logJ[keep]
        phase = -k * np.angle(J[keep])
        contrib = np.exp(logmag + k * math.log(y) - consts.logC) * v * np.exp(1j * phase)
        total = contrib.sum() / idx
        c = contrib / idx
        tail = (_shell_tail(c, table.height[keep], table.height) + _pruned_tail(est, keep, contrib, idx)
                + 1e3 * EPS * np.abs(c).sum())
        return total, tail, {"pairs": int(keep.sum()), "forms": len(ft)}
    # degree 2: reduce each g<Z>, then run over units U
    V = gauss_reduce_batch(W.imag)
    Vf = V.astype(float)
    Wr = np.swapaxes(Vf, 1, 2) @ W @ Vf
    detV = np.rint(_det(Vf))
    U = units_mod_sign(trunc.unitNorm)
    Uf = U.astype(float)
    detU = np.rint(_det(Uf))
    if len(Wr) * len(U) > 8_000_000:
        raise ParameterError("coset table times unit list too large; lower cosetHeight or unitNorm")
    YU = np.einsum("uji,mjk,ukl->muil", Uf, Wr.imag, Uf)
    S = Y[None, None] + YU
    logdetS = np.log(_det(S))
    est = -k * logJ[:, None] + k * (logdet2Y - logdetS)
    keep = est > logtol
    ri, ui = np.nonzero(keep)
    WU = np.swapaxes(Uf[ui], 1, 2) @ Wr[ri] @ Uf[ui] - np.conj(Z)[None]
    ls, v = lattice_exp_sum(ft, kappa, WU)
    sign = (detV[ri] * detU[ui]) ** k
    logmag = ls - k * logJ[ri] + k * math.log(np.linalg.det(Y)) - consts.logC
    contrib = np.exp(logmag) * v * np.exp(-1j * k * np.angle(J[ri])) * sign
    total = contrib.sum() / idx
    c = contrib / idx
    unorm = (U ** 2).sum(axis=(1, 2))
    tail = (_shell_tail(c, table.height[ri], table.height)
            + _shell_tail(c, unorm[ui], unorm)
            + _pruned_tail(est.ravel(), keep.ravel(), contrib, idx)
            + 1e3 * EPS * np.abs(c).sum())
    return total, tail, {"pairs": int(len(ri)), "forms": len(ft), "classes": len(table)}


def bergman_eval(group: GroupDescriptor, k: int, Z, trunc: TruncationParams | None = None,
                 variant: str = "intro", reduce: bool = True) -> Evaluation:
    """det(Y)^k B_k(Z, Z) from the Fourier side with the coset/lattice sums.

    variant="intro" is sum_F det(Y)^k |F(Z)|^2 over an orthonormal basis;
    variant="halfA" multiplies that by a_{n,k}/2.
    """
    n = group.n
    if k < 2 * n + 2:
        raise ConvergenceError(f"bergman_eval needs k >= 2n + 2 = {2 * n + 2}")
    trunc = trunc or default_trunc(n)
    Zm = _as_Z(Z, n)
    if reduce and group.family == "full" and group.conjugator is None:
        if n == 1:
            Zm = np.array([[reduce_degree1(complex(Zm[0, 0]))]])
        else:
            Zm, _ = reduce_degree2(Zm)
    total, tail, info = _bergman_core(group, k, Zm, trunc)
    val = float(total.real)
    info["imag"] = float(total.imag)
    info["Z"] = Zm.tolist() if n > 1 else [complex(Zm[0, 0]).real, complex(Zm[0, 0]).imag]
    if variant == "halfA":
        f = math.exp(constants(n, k).logA) / 2
        val, tail = val * f, tail * f
    if val < -max(tail, 1e-300) * 10:
        raise TruncationFailure(f"negative Bergman value {val:.3e} beyond tail {tail:.3e}")
    return Evaluation(val, float(tail), info)


# ---------------------------------------------------------------------------
# Lipschitz identity and lattice sums

def _as_lattice(obj) -> DualLatticeDescriptor:
    if isinstance(obj, DualLatticeDescriptor):
        return obj
    return dual_lattice(obj)


def _translation_sum(lat: DualLatticeDescriptor, k: int, Z: np.ndarray, R: int) -> complex:
    """sum of det(Z + S)^{-k} over S in the translation lattice with entries in a box of radius R."""
    n = lat.n
    W = lat.widths
    if n == 1:
        s = W[0][0] * np.arange(-R, R + 1)
        return complex(np.sum((Z[0, 0] + s) ** (-k)))
    r = np.arange(-R, R + 1)
    b, c = np.meshgrid(W[0][1] * r, W[1][1] * r, indexing="ij")
    z12 = Z[0, 1] + b
    z22 = Z[1, 1] + c
    acc = []
    for a in W[0][0] * r:
        d = (Z[0, 0] + a) * z22 - z12 * z12
        acc.append(np.sum(d ** (-k)))
    return complex(math.fsum(np.real(acc)) + 1j * math.fsum(np.imag(acc)))


@dataclass
class LipschitzPair:
    lhs: complex
    rhs: complex
    lhs_tail: float
    rhs_tail: float

    @property
    def relative_gap(self) -> float:
        return abs(self.lhs - self.rhs) / abs(self.lhs)


def lipschitz_pair(lattice, k: int, Z, trunc: TruncationParams | None = None, box: int | None = None) -> LipschitzPair:
    """Both sides of the Lipschitz formula for the translation lattice of a group.

    lhs is the box sum over translations, corrected by one Richardson step from
    the half box (the remainder decays like R^{1-k} for n = 1 and R^{-3} for n = 2);
    rhs is b^{-1} |S|^{-1} sum_T det(T)^(k-(n+1)/2) e(tr TZ) over the dual lattice.
    """
    lat = _as_lattice(lattice)
    n = lat.n
    if k <= n:
        raise ConvergenceError(f"the translation sum diverges for k <= n (k = {k}, n = {n})")
    if n > 2:
        raise CapabilityError("lipschitz_pair is implemented for n <= 2")
    trunc = trunc or default_trunc(n)
    Zm = _as_Z(Z, n)
    R = box or (20000 if n == 1 else 120)
    full = _translation_sum(lat, k, Zm, R)
    half = _translation_sum(lat, k, Zm, R // 2)
    p = (k - 1) if n == 1 else 3
    corr = (full - half) / (2 ** p - 1)
    lhs = full + corr
    consts = constants(n, k)
    kappa = k - (n + 1) / 2
    Y = Zm.imag
    s_cut = _trace_cutoff(n, kappa, min(trunc.tailTol, 1e-16))
    G, w = enumerate_forms_array(lat, Y, s_cut)
    Tf = G.astype(float) / (2 * w)
    logdet = np.log(np.linalg.det(Tf)) if n == 2 else np.log(Tf[:, 0, 0])
    ph = np.einsum("mij,ji->m", Tf, Zm)
    lg = kappa * logdet - 2 * math.pi * ph.imag
    terms = np.exp(lg - consts.logB + 2j * math.pi * ph.real) / consts.phaseB / lat.index
    rhs = terms.sum()
    return LipschitzPair(complex(lhs), complex(rhs), float(abs(corr)), float(1e2 * EPS * np.abs(terms).sum()))


def _domain_floor(n: int) -> float:
    # y11 >= sqrt(3)/2 and y11 y22 <= (4/3) det Y on a reduced point of the domain
    return (math.sqrt(3) / 2) ** n * (3 / 4) ** (n - 1)


@dataclass
class LatticeSumCheck:
    value: float
    ratio: float
    forms: int


def lattice_sum_check(group: GroupDescriptor, k: int, Y) -> LatticeSumCheck:
    """|S|^{-1} |b|^{-1} det(Y)^k sum_T det(T)^(k-(n+1)/2) exp(-2 pi tr TY), and its ratio to k^(n(n+1)/4)."""
    n = group.n
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if not is_positive_definite(Y):
        raise DomainError("Y must be positive definite")
    if n >= 2 and not is_minkowski_reduced(Y):
        raise DomainError("Y must be Minkowski reduced")
    if np.linalg.det(Y) < _domain_floor(n) * (1 - 1e-12):
        raise DomainError("det Y lies below the fundamental domain floor")
    consts = constants(n, k)
    kappa = k - (n + 1) / 2
    # the peak of det(T)^kappa exp(-2 pi tr TY) sits at tr(TY) = n kappa / (2 pi)
    s_cut = _trace_cutoff(n, kappa, 1e-16)
    G, w = enumerate_forms_array(dual_lattice(group), Y, s_cut)
    Tf = G.astype(float) / (2 * w)
    logdet = np.log(np.linalg.det(Tf)) if n == 2 else np.log(Tf[:, 0, 0])
    lg = kappa * logdet - 2 * math.pi * np.einsum("mij,ji->m", Tf, Y) + k * math.log(np.linalg.det(Y)) - consts.logB
    mx = lg.max()
    val = math.exp(mx) * math.fsum(np.exp(lg - mx)) / dual_lattice(group).index
    return LatticeSumCheck(val, val / k ** (n * (n + 1) / 4), len(G))


# ---------------------------------------------------------------------------
# majorant

def _box_exterior_integral(z: complex, s: float, H: float, nodes: int = 64) -> float:
    """Integral of |c z + d|^{-s} over max(|c|, |d|) > H in the (c, d) plane."""
    x, wts = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    # the radial integral is explicit; the angular one is split at the corners of the box
    for j in range(8):
        lo, hi = j * math.pi / 4, (j + 1) * math.pi / 4
        th = (hi - lo) / 2 * x + (hi + lo) / 2
        m = np.maximum(np.abs(np.cos(th)), np.abs(np.sin(th)))
        f = np.abs(np.cos(th) * z + np.sin(th)) ** (-s) * (H / m) ** (2 - s) / (s - 2)
        total += (hi - lo) / 2 * float(f @ wts)
    return total


def _box_boundary_flux(z: complex, s: float, R: float, nodes: int = 64) -> float:
    """Outward normal derivative of |c z + d|^{-s} integrated over the square max(|c|, |d|) = R.

    The midpoint rule over unit cells misses (1/24) of the exterior integral of the
    Laplacian, which by the divergence theorem is minus this flux.
    """
    x, wts = np.polynomial.legendre.leggauss(nodes)
    zr, zi = z.real, z.imag

    def grad(c, d):
        u = c * zr + d
        Q = u * u + (c * zi) ** 2
        f = -s / 2 * Q ** (-s / 2 - 1)
        return f * (2 * u * zr + 2 * c * zi * zi), f * 2 * u

    total = 0.0
    # split each edge so the ridge c x + d = 0 is resolved
    edges = np.linspace(-R, R, 9)
    for lo, hi in zip(edges[:-1], edges[1:]):
        t = (hi - lo) / 2 * x + (hi + lo) / 2
        gc, _ = grad(R, t)
        _, gd = grad(t, R)
        total += (hi - lo) / 2 * float((gc + gd) @ wts)
    # the opposite edges agree by the symmetry (c, d) -> (-c, -d)
    return 2 * total


def _lattice_exterior(z: complex, s: float, H: int) -> float:
    """Sum of |c z + d|^{-s} over integer (c, d) with max(|c|, |d|) > H, by the corrected midpoint rule."""
    R = H + 0.5
    return _box_exterior_integral(z, s, R) + _box_boundary_flux(z, s, R) / 24


def majorant_sum(group: GroupDescriptor, s: float, Z, H: int) -> Evaluation:
    """M(Gamma; Z) = sum over coset classes of |det(CZ + D)|^{-s}, truncated at height H.

    Degree 1, full group: the classes are the coprime pairs up to sign, so the
    complete sum is L / (2 zeta(s)) with L the sum over all nonzero (c, d); the tail
    is that limit minus the truncated sum, with L from the box plus the corrected
    midpoint exterior.  Other degree-1 groups scale the exterior by the class
    density.  Degree 2 uses the last two height shells.  info["trend"] lists the
    shell sums by height.
    """
    from scipy.special import zeta

    n = group.n
    if s <= n + 1:
        raise ConvergenceError(f"the majorant needs s > n + 1 = {n + 1}")
    Zm = _as_Z(Z, n)
    table = coset_table(group, H)
    full = group.family == "full" and group.conjugator is None
    cert = f1_certificate(Zm) if full else None
    if cert is not None and cert < 1 - 1e-9:
        raise DomainError(f"Z is not in the reduced domain (min |J| = {cert:.6f})")
    J, _ = apply_table(table, Zm)
    terms = np.abs(J) ** (-s)
    order = np.argsort(-terms)
    value = math.fsum(terms[order])
    trend = [float(terms[table.height == h].sum()) for h in range(int(table.height.max()) + 1)]
    if n == 1:
        z = complex(Zm[0, 0])
        ext = _lattice_exterior(z, s, H)
        if full:
            r = np.arange(-H, H + 1)
            c, d = np.meshgrid(r, r, indexing="ij")
            q = np.abs(c * z + d)
            q[H, H] = np.inf
            L = math.fsum(np.sort((q ** (-s)).ravel())) + ext
            tail = L / (2 * zeta(s)) - value
        else:
            density = len(table) / (2 * H + 1) ** 2
            tail = density * ext
    else:
        tail = _shell_tail(terms.astype(complex), table.height, table.height)
    return Evaluation(value, float(tail), {"trend": trend, "classes": len(table)})


# ---------------------------------------------------------------------------
# sup-norm search

@dataclass
class GridSpec:
    """Search grid: the Y scale runs over a log grid up to yMax (default k / pi).

    Degree 1 uses the x values in xs (the domain is symmetric under x -> -x);
    degree 2 uses Y = t * shape for each reduced shape and X from Xs.
    """
    ny: int = 24
    yMax: float | None = None
    xs: tuple = (0.0, 0.125, 0.25, 0.375, 0.5)
    shapes: tuple = ((1.0, 0.5, 1.0), (1.0, 0.25, 1.0), (1.0, 0.5, 1.5), (1.0, 0.0, 1.0))
    Xs: tuple = ((0.0, 0.0, 0.0), (0.5, 0.0, 0.0), (0.0, 0.25, 0.0), (0.1, 0.2, -0.3))
    golden: int = 30
    polish: int = 0


def default_grid(n: int) -> GridSpec:
    return GridSpec() if n == 1 else GridSpec(ny=14, golden=20)


@dataclass
class SupResult:
    value: float
    Z: np.ndarray
    tail: float
    gridMax: float
    gridZ: np.ndarray
    boundary: bool
    evaluations: int
    wallTime: float


def _golden_max(f, lo, hi, iters):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _shape_Z(t, shape, X):
    y11, r, y22 = shape
    Y = t * np.array([[y11, r * y11], [r * y11, y22 * y11]])
    Xm = np.array([[X[0], X[1]], [X[1], X[2]]])
    return Xm + 1j * Y


def sup_search(group: GroupDescriptor, k: int, gridSpec: GridSpec | None = None,
               trunc: TruncationParams | None = None) -> SupResult:
    """Grid maximum of the Bergman kernel followed by golden-section ascent in the Y scale."""
    t0 = time.time()
    n = group.n
    spec = gridSpec or default_grid(n)
    trunc = trunc or default_trunc(n)
    # degree 2 peaks sit near t = (k - 3/2) / (3 pi) on the hexagonal shape
    yMax = spec.yMax or (k / math.pi if n == 1 else k / (2 * math.pi))
    cache = {}

    def B(Z):
        key = np.round(np.asarray(Z, dtype=complex), 12).tobytes()
        if key not in cache:
            cache[key] = bergman_eval(group, k, Z, trunc)
        return cache[key]

    grid = []
    if n == 1:
        for x in spec.xs:
            ylo = math.sqrt(max(1 - x * x, 0.0)) if group.family == "full" else 0.5
            for y in np.geomspace(ylo, yMax, spec.ny):
                grid.append(((x, ylo), y, B(np.array([[x + 1j * y]]))))
    else:
        for shape in spec.shapes:
            tlo = math.sqrt(3) / 2 / shape[0]
            for X in spec.Xs:
                for t in np.geomspace(tlo, yMax, spec.ny):
                    grid.append(((shape, X, tlo), t, B(_shape_Z(t, shape, X))))
    i = int(np.argmax([g[2].value for g in grid]))
    params, ybest, ev = grid[i]
    gridMax = ev.value
    gridZ = np.array([[params[0] + 1j * ybest]]) if n == 1 else _shape_Z(ybest, params[0], params[1])
    ys = np.geomspace(params[-1], yMax, spec.ny)
    j = int(np.argmin(np.abs(ys - ybest)))
    boundary = j == len(ys) - 1
    lo, hi = math.log(ys[max(j - 1, 0)]), math.log(ys[min(j + 1, len(ys) - 1)])

    def Zof(logy):
        y = math.exp(logy)
        return np.array([[params[0] + 1j * y]]) if n == 1 else _shape_Z(y, params[0], params[1])

    ly, _ = _golden_max(lambda v: B(Zof(v)).value, lo, hi, spec.golden)
    best_Z = Zof(ly)
    best = B(best_Z)
    if best.value < gridMax:
        best_Z, best = gridZ, ev
    if spec.polish and n == 2:
        from scipy.optimize import minimize

        def unpack(v):
            Y = np.array([[math.exp(v[0]), v[1]], [v[1], math.exp(v[2])]])
            X = np.array([[v[3], v[4]], [v[4], v[5]]])
            return X + 1j * Y

        def negB(v):
            Zp = unpack(v)
            if np.linalg.eigvalsh(Zp.imag)[0] <= 0:
                return 0.0
            return -B(Zp).value

        Zb = best_Z
        v0 = [math.log(Zb.imag[0, 0]), Zb.imag[0, 1], math.log(Zb.imag[1, 1]), Zb.real[0, 0], Zb.real[0, 1], Zb.real[1, 1]]
        res = minimize(negB, v0, method="Nelder-Mead",
                       options={"maxfev": spec.polish, "xatol": 1e-3, "fatol": 1e-6, "initial_simplex": None})
        if -res.fun > best.value:
            best_Z = unpack(res.x)
            best = B(best_Z)
    return SupResult(float(best.value), best_Z, float(best.tail), float(gridMax), gridZ, bool(boundary),
                     len(cache), time.time() - t0)


# ---------------------------------------------------------------------------
# independence of Poincare series

@dataclass
class GramRank:
    matrix: np.ndarray
    tails: np.ndarray
    nonsingular: bool | None
    method: str
    balanced: np.ndarray | None = None


def _dominant(P, E) -> bool:
    diag = np.abs(np.diag(P)) - np.diag(E)
    off = (np.abs(P) + E).sum(axis=1) - np.abs(np.diag(P)) - np.diag(E)
    return bool(np.all(diag > off))


def poincare_gram_rank(group: GroupDescriptor, k: int, forms, trunc: TruncationParams | None = None) -> GramRank:
    """Matrix p_{T_j}(T_i) and a nonsingularity certificate.

    The matrix is first balanced by the similarity P[i, j] w_j / w_i with
    w = det(T)^(kappa/2), kappa = k - (n+1)/2, which removes the growth of
    p_T(T') in det T' and leaves the rank unchanged.  Diagonal dominance (with
    tails added against it) certifies first; otherwise the smallest singular
    value is compared with the norm of the tail matrix.  If neither decides,
    nonsingular is None.
    """
    forms = [f if isinstance(f, HalfIntegralForm) else form(f) for f in forms]
    for i in range(len(forms)):
        for j in range(i + 1, len(forms)):
            if forms[i].det() == forms[j].det() and automorphism_count(forms[i], forms[j]) > 0:
                raise DomainError(f"forms {i} and {j} are equivalent under the unit group")
    m = len(forms)
    P = np.zeros((m, m))
    E = np.zeros((m, m))
    for i, Ti in enumerate(forms):
        for j, Tj in enumerate(forms):
            c = poincare_fourier_coeff(group, Tj, Ti, k, trunc)
            P[i, j], E[i, j] = c.value, c.tail
    kappa = k - (group.n + 1) / 2
    logw = np.array([kappa / 2 * math.log(float(f.det())) for f in forms])
    S = np.exp(logw[None, :] - logw[:, None])
    Pb, Eb = P * S, E * S
    if _dominant(Pb, Eb):
        return GramRank(P, E, True, "diagonal dominance", Pb)
    smin = np.linalg.svd(Pb, compute_uv=False)[-1]
    err = np.linalg.norm(Eb, 2)
    if smin > 10 * err and smin > 1e-10 * np.abs(Pb).max():
        return GramRank(P, E, True, "determinant", Pb)
    return GramRank(P, E, None, "indeterminate", Pb)


# ---------------------------------------------------------------------------
# dimensions for the full group

def _series_coeff(weights, k: int) -> int:
    """Number of ways to write k as a non-negative combination of the given weights."""
    ways = [1] + [0] * k
    for w in weights:
        for m in range(w, k + 1):
            ways[m] += ways[m - w]
    return ways[k]


def cusp_dimension(n: int, k: int) -> int:
    """dim S_k(Sp_n(Z)) for n in {1, 2} and even k."""
    if k % 2 or k < 0:
        raise DomainError("k must be even and non-negative")
    if n == 1:
        return max(_series_coeff((4, 6), k) - 1, 0)
    if n == 2:
        # M_k = C[E4, E6, chi10, chi12] in even weight; the Siegel operator onto M_k(SL2) is onto for k >= 4
        mk = _series_coeff((4, 6, 10, 12), k)
        return mk - (_series_coeff((4, 6), k) if k >= 4 or k == 0 else 0)
    raise CapabilityError("dimensions are tabulated for n <= 2")
