"""Degree-one toolkit: Kloosterman sums at the cusp infinity, Bessel J1, weight-2 Poincare
coefficients, the Petersson Gram matrix and a large-sieve statistic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exact_linalg import DomainError
from .lattice_forms import ParameterError
from .subgroups import GroupDescriptor, contains, cusp_width_config, full_group
from .symplectic import from_blocks

# ---------------------------------------------------------------------------
# D(c) and Kloosterman sums


@dataclass(frozen=True)
class KloostermanSpec:
    group: GroupDescriptor
    m: int
    n: int
    c: int
    omega: int


def _width(group: GroupDescriptor) -> int:
    if group.n != 1:
        raise DomainError("degree-one descriptor expected")
    return cusp_width_config(group).widths[0][0]


def _complete(c: int, d: int):
    """(a, b) with a d - b c = 1."""
    g, x, y = _egcd(d, c)
    # x d + y c = 1  ->  a = x, b = -y
    return x, -y


def _egcd(a, b):
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a - (a // b) * b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def _realise(group: GroupDescriptor, c: int, d: int):
    """The a-entry of some gamma in the group with bottom row (c, d), or None."""
    a, b = _complete(c, d)
    N = group.N if group.conjugator is None else group.N * 4
    for t in range(max(N, 1)):
        at, bt = a + t * c, b + t * d
        g = from_blocks([[at]], [[bt]], [[c]], [[d]])
        if contains(group, g):
            return at
    return None


@lru_cache(maxsize=4096)
def _d_set(group: GroupDescriptor, c: int):
    om = _width(group)
    out = []
    for d in range(c * om):
        if math.gcd(c, d) != 1:
            continue
        a = _realise(group, c, d)
        if a is not None:
            out.append((d, a % (c * om)))
    return tuple(out)


def d_set(group: GroupDescriptor, c: int) -> list:
    """Residues d in [0, c omega) that occur as the bottom-right entry with bottom-left c."""
    if c < 1:
        raise DomainError("c must be positive")
    return [d for d, _ in _d_set(group, c)]


def kloosterman_direct(group: GroupDescriptor, m: int, n: int, c: int) -> complex:
    """sum over D(c) of e((m dbar + n d) / (c omega)) with dbar the a-entry of a realising element."""
    om = _width(group)
    pairs = _d_set(group, c)
    if not pairs:
        return 0j
    d = np.array([p[0] for p in pairs], dtype=float)
    a = np.array([p[1] for p in pairs], dtype=float)
    return complex(np.exp(2j * math.pi * (m * a + n * d) / (c * om)).sum())


def _is_hecke(group: GroupDescriptor) -> bool:
    return group.n == 1 and group.conjugator is None and group.family in ("full", "Gamma0")


# fast path for Gamma_0(N): Selberg's identity and twisted multiplicativity over prime powers

def _spf(limit: int) -> np.ndarray:
    s = np.arange(limit + 1)
    for p in range(2, int(limit ** 0.5) + 1):
        if s[p] == p:
            blk = s[p * p::p]
            mask = blk == np.arange(p * p, limit + 1, p)
            blk[mask] = p
    return s


def _factor(c: int, spf) -> list:
    out = []
    while c > 1:
        p = int(spf[c])
        q = 1
        while c % p == 0:
            c //= p
            q *= p
        out.append(q)
    return out


def _inv_mod_vec(u: np.ndarray, q: int) -> np.ndarray:
    """Inverses of units u modulo q by the extended Euclidean algorithm (vectorised)."""
    a = u.astype(np.int64)
    b = np.full_like(a, q)
    x0 = np.ones_like(a)
    x1 = np.zeros_like(a)
    while np.any(b != 0):
        nz = b != 0
        qq = np.zeros_like(a)
        qq[nz] = a[nz] // b[nz]
        a, b = np.where(nz, b, a), np.where(nz, a - qq * b, b)
        x0, x1 = np.where(nz, x1, x0), np.where(nz, x0 - qq * x1, x1)
    return x0 % q


def _primitive_root(p: int, spf) -> int:
    fs = set()
    m = p - 1
    while m > 1:
        f = int(spf[m])
        fs.add(f)
        m //= f
    for g in range(2, p):
        if all(pow(g, (p - 1) // f, p) != 1 for f in fs):
            return g
    return 1


def _inv_mod_prime(p: int, spf) -> np.ndarray:
    """inv[u] = u^{-1} mod p for u = 1 .. p-1 (inv[0] = 0), from the powers of a primitive root."""
    g = _primitive_root(p, spf)
    pw = np.array([1], dtype=np.int64)
    step = g % p
    while len(pw) < p - 1:
        pw = np.concatenate([pw, pw * step % p])
        step = step * step % p
    pw = pw[: p - 1]
    inv = np.zeros(p, dtype=np.int64)
    inv[pw] = pw[(-np.arange(p - 1)) % (p - 1)]
    return inv


class KloostermanTable:
    """Classical S(m, n; c) for all c <= cMax with N | c and m, n <= K."""

    def __init__(self, N: int, K: int, cMax: int):
        self.N, self.K, self.cMax = N, K, cMax
        self.spf = _spf(cMax)
        self.tables = {}

    # moduli above this are recomputed on each use (about 370 MB of tables are kept at 1e5)
    CACHE_LIMIT = 32768

    def _prime_power_table(self, q: int) -> np.ndarray:
        """S(1, s; q) for s = 0 .. q-1, via one FFT."""
        t = self.tables.get(q)
        if t is None:
            f = np.zeros(q, dtype=complex)
            if q > 2 and self.spf[q] == q:
                inv = _inv_mod_prime(q, self.spf)
                f[1:] = np.exp(2j * math.pi * inv[1:] / q)
            else:
                u = np.arange(q)
                units = u[np.gcd(u, q) == 1]
                f[units] = np.exp(2j * math.pi * _inv_mod_vec(units, q) / q)
            t = (q * np.fft.ifft(f)).real
            if q <= self.CACHE_LIMIT:
                self.tables[q] = t
        return t

    def s1(self, r: np.ndarray, c: int) -> np.ndarray:
        """S(1, r; c) for an integer array r."""
        r = np.asarray(r, dtype=np.int64)
        out = np.ones(r.shape)
        for q in _factor(c, self.spf):
            rest = c // q
            rb = int(pow(rest, -1, q)) if q > 1 else 0
            out = out * self._prime_power_table(q)[(r * (rb * rb % q)) % q]
        return out

    def matrix(self, c: int) -> np.ndarray:
        """K x K real matrix of S(m, n; c)."""
        K = self.K
        m = np.arange(1, K + 1)
        S = np.zeros((K, K))
        mm, nn = np.meshgrid(m, m, indexing="ij")
        g = np.gcd(np.gcd(mm, nn), c)
        for d in np.unique(g):
            for e in range(1, int(d) + 1):
                if d % e:
                    continue
                # Selberg: S(m, n; c) = sum over e | (m, n, c) of e S(mn / e^2, 1; c / e)
                sel = (g % e == 0)
                sel &= (g == d)
                if not sel.any():
                    continue
                r = (mm[sel] * nn[sel]) // (e * e)
                S[sel] += e * self.s1(r, c // e)
        return S


def kloosterman(group: GroupDescriptor, m: int, n: int, c: int) -> complex:
    """S_Gamma(m, n; c) at the cusp infinity."""
    if c < 1:
        raise DomainError("c must be positive")
    if _is_hecke(group):
        if c % group.N:
            return 0j
        K = max(m, n)
        return complex(KloostermanTable(group.N, K, c).matrix(c)[m - 1, n - 1])
    return kloosterman_direct(group, m, n, c)


def divisor_count(c: int) -> int:
    return sum(1 + (c // d != d) for d in range(1, math.isqrt(c) + 1) if c % d == 0)


def weil_ratio(group: GroupDescriptor, m: int, n: int, c: int) -> float:
    """|S(m, n; c)| / (d(c omega) (c omega)^{1/2} gcd(m, n, c omega)^{1/2})."""
    om = _width(group)
    co = c * om
    S = kloosterman(group, m, n, c)
    return abs(S) / (divisor_count(co) * math.sqrt(co) * math.sqrt(math.gcd(math.gcd(m, n), co)))


# ---------------------------------------------------------------------------
# Bessel J1

def _j1_series(x):
    x = np.asarray(x, dtype=float)
    h = x / 2
    term = h.copy()
    out = term.copy()
    for j in range(1, 40):
        term = term * (-(h * h)) / (j * (j + 1))
        out = out + term
    return out


def _j1_integral(x, M: int = 96):
    # J1(x) = (1/pi) int_0^pi cos(theta - x sin theta) d theta; the periodic trapezoid rule is spectrally exact
    th = (np.arange(2 * M) + 0.5) * math.pi / M
    x = np.asarray(x, dtype=float)
    return np.cos(th[None, :] - x[:, None] * np.sin(th)[None, :]).mean(axis=1)


def _j1_asymptotic(x):
    x = np.asarray(x, dtype=float)
    mu = 4.0
    P = np.ones_like(x)
    Q = np.zeros_like(x)
    term = np.ones_like(x)
    for j in range(1, 30):
        term = term * (mu - (2 * j - 1) ** 2) / (j * 8 * x)
        if j % 2:
            Q = Q + (-1) ** ((j - 1) // 2) * term
        else:
            P = P + (-1) ** (j // 2) * term
    w = x - 3 * math.pi / 4
    return np.sqrt(2 / (math.pi * x)) * (P * np.cos(w) - Q * np.sin(w))


def bessel_j1(x):
    """J1(x) for x >= 0: power series below 8, trapezoid on the Bessel integral up to 25,
    Hankel asymptotics beyond."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("bessel_j1 expects x >= 0")
    flat = xa.ravel()
    out = np.empty_like(flat)
    a = flat < 8
    b = (flat >= 8) & (flat < 25)
    c = flat >= 25
    if a.any():
        out[a] = _j1_series(flat[a])
    if b.any():
        out[b] = _j1_integral(flat[b])
    if c.any():
        out[c] = _j1_asymptotic(flat[c])
    out = out.reshape(xa.shape)
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# weight 2

@dataclass
class Weight2Sums:
    """Raw c-sums sum_c S(m, n; c) / c J1(4 pi sqrt(mn) / (c omega)) for m, n <= K."""
    K: int
    omega: int
    cMax: int
    sums: np.ndarray
    tail: np.ndarray
    weil_tail: np.ndarray


def _c_sums(group: GroupDescriptor, K: int, cMax: int) -> Weight2Sums:
    om = _width(group)
    m = np.arange(1, K + 1)
    x = 4 * math.pi * np.sqrt(np.outer(m, m)) / om
    acc = np.zeros((K, K))
    comp = np.zeros((K, K))
    if _is_hecke(group):
        tab = KloostermanTable(group.N, K, cMax)
        cs = range(group.N, cMax + 1, group.N)
        get = tab.matrix
    else:
        cs = range(1, cMax + 1)

        def get(c):
            return np.array([[kloosterman_direct(group, i, j, c).real for j in m] for i in m])
    for c in cs:
        term = get(c) / c * bessel_j1(x / c)
        # Kahan summation keeps the long conditionally convergent sum clean
        yv = term - comp
        tv = acc + yv
        comp = (tv - acc) - yv
        acc = tv
    # beyond cMax: J1(x/c) ~ x/(2c); the random-sign model gives (x/2) (sum_{c>C} c^{-3} / N)^{1/2}
    step = group.N if _is_hecke(group) else 1
    tail = x / 2 * math.sqrt(1 / (2 * step * cMax ** 2)) * om
    # Weil-shaped majorant d(c) c^{1/2} of the same tail, integrated: ~ x log(C) C^{-1/2}
    weil = x / 2 * (2 * (math.log(cMax * om) + 2) / math.sqrt(cMax * om)) * om
    return Weight2Sums(K, om, cMax, acc, tail, weil)


@lru_cache(maxsize=16)
def _c_sums_cached(group: GroupDescriptor, K: int, cMax: int) -> Weight2Sums:
    return _c_sums(group, K, cMax)


@dataclass
class Weight2Coeff:
    value: float
    tail: float
    weil_tail: float
    cMax: int


def _coeff_matrix(ws: Weight2Sums):
    K, om = ws.K, ws.omega
    m = np.arange(1, K + 1, dtype=float)
    ratio = np.sqrt(np.outer(1 / m, m))  # (n/m)^{1/2} with rows m, columns n
    p = 2 * np.eye(K) - 4 * math.pi / om * ratio * ws.sums
    err = 4 * math.pi / om * ratio * ws.tail
    weil = 4 * math.pi / om * ratio * ws.weil_tail
    return p, err, weil


def suggested_cmax(group: GroupDescriptor, m: int, n: int, tol: float) -> int:
    om = _width(group)
    step = group.N if _is_hecke(group) else 1
    x = 4 * math.pi * math.sqrt(m * n) / om
    # invert the tail model 4 pi / omega (n/m)^{1/2} x / 2 (2 step)^{-1/2} omega / C
    return int(math.ceil(4 * math.pi * math.sqrt(n / m) * x / 2 / math.sqrt(2 * step) / tol)) + 1


def weight2_coeff(group: GroupDescriptor, m: int, n: int, cMax: int = 20000, tol: float | None = 1e-2) -> Weight2Coeff:
    """p_m(n) for the weight-2 Poincare series of the group at the cusp infinity.

    The reported tail is the random-sign estimate of the neglected c-range; the
    Weil-shaped majorant is returned alongside.  A tail above tol raises with a
    suggested cMax.
    """
    if m < 1 or n < 1:
        raise DomainError("m, n must be positive")
    K = max(m, n)
    ws = _c_sums_cached(group, K, cMax)
    p, err, weil = _coeff_matrix(ws)
    val, tail = float(p[m - 1, n - 1]), float(err[m - 1, n - 1])
    if tol is not None and tail > tol:
        raise ParameterError(f"c-tail {tail:.2e} above {tol:.2e}; try cMax >= {suggested_cmax(group, m, n, tol)}")
    return Weight2Coeff(val, tail, float(weil[m - 1, n - 1]), cMax)


@dataclass
class GramMatrix:
    K: int
    omega: int
    M: np.ndarray
    tail: np.ndarray
    eigenvalues: np.ndarray = field(default=None)
    eigenvectors: np.ndarray = field(default=None)

    def hermitian_defect(self) -> float:
        return float(np.abs(self.M - self.M.conj().T).max())

    def rank(self, rel: float = 1e-2) -> int:
        """Eigenvalues above rel * lambda_max and above the truncation noise.

        By Weyl's inequality the c-tail moves each eigenvalue by at most the
        spectral norm of the tail matrix, so anything below it counts as zero.
        """
        lam = self.eigenvalues
        noise = float(np.linalg.norm(self.tail, 2)) if self.tail.size else 0.0
        top = lam.max() if len(lam) else 0.0
        if top <= noise:
            return 0
        return int((lam > max(rel * top, noise)).sum())

    def to_csv(self) -> str:
        return "\n".join(",".join(f"{v:.17g}" for v in row) for row in self.M)


def petersson_gram(group: GroupDescriptor, K: int, cMax: int = 20000) -> GramMatrix:
    """K x K matrix (2 / omega^2) (m/n)^{1/2} p_m(n) with its eigen-decomposition."""
    ws = _c_sums_cached(group, K, cMax)
    p, err, _ = _coeff_matrix(ws)
    m = np.arange(1, K + 1, dtype=float)
    scale = 2 / ws.omega ** 2 * np.sqrt(np.outer(m, 1 / m))
    M = scale * p
    E = scale * err
    lam, vec = np.linalg.eigh((M + M.T) / 2)
    return GramMatrix(K, ws.omega, M, E, lam, vec)


@dataclass
class SieveResult:
    maxRatio: float
    ratios: np.ndarray
    seed: int
    q: int


def large_sieve_check(group: GroupDescriptor, K: int, trials: int = 100, cMax: int = 20000,
                      seed: int = 12345, gram: GramMatrix | None = None, vectors=None) -> SieveResult:
    """Max over random complex unit vectors of a^H M a / ((1/omega^2)(log K + K/(q omega)) |a|^2)."""
    G = gram or petersson_gram(group, K, cMax)
    q = group.N
    om = G.omega
    denom = (math.log(K) + K / (q * om)) / om ** 2
    if vectors is None:
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(trials, K)) + 1j * rng.normal(size=(trials, K))
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    num = np.einsum("ti,ij,tj->t", vectors.conj(), G.M, vectors).real
    ratios = num / (denom * (np.abs(vectors) ** 2).sum(axis=1))
    return SieveResult(float(ratios.max()), ratios, seed, q)


# ---------------------------------------------------------------------------
# classical oracle

def petersson_oracle(k: int, m: int, n: int, group: GroupDescriptor | None = None, cMax: int = 2000) -> float:
    """Classical weight-k Poincare coefficient on Gamma_0(N):
    delta(m, n) + 2 pi i^{-k} (n/m)^{(k-1)/2} sum_c S(m, n; c)/c J_{k-1}(4 pi sqrt(mn)/c)."""
    from scipy.special import jv

    if k < 4 or k % 2:
        raise DomainError("the oracle needs even k >= 4")
    group = group or full_group(1)
    if not _is_hecke(group):
        raise DomainError("the oracle is for Gamma_0(N)")
    N = group.N
    K = max(m, n)
    tab = KloostermanTable(N, K, cMax)
    x = 4 * math.pi * math.sqrt(m * n)
    terms = [tab.matrix(c)[m - 1, n - 1] / c * jv(k - 1, x / c) for c in range(N, cMax + 1, N)]
    sign = (-1) ** (k // 2)
    return float((m == n) + 2 * math.pi * sign * (n / m) ** ((k - 1) / 2) * math.fsum(terms))


# ---------------------------------------------------------------------------
# elliptic curve coefficients by point counting

# Weierstrass coefficients [a1, a2, a3, a4, a6] of one curve per conductor
ELLIPTIC_CURVES = {
    11: (0, -1, 1, -10, -20),
    14: (1, 0, 1, 4, -6),
    15: (1, 1, 1, -10, -10),
    17: (1, -1, 1, -1, -14),
    19: (0, 1, 1, -9, -15),
}


def _ap(ainvs, p: int) -> int:
    """a_p = p + 1 - #E(F_p), counting affine solutions of the long Weierstrass equation."""
    a1, a2, a3, a4, a6 = ainvs
    x = np.arange(p)[:, None]
    y = np.arange(p)[None, :]
    lhs = (y * y + a1 * x * y + a3 * y) % p
    rhs = (x ** 3 + a2 * x * x + a4 * x + a6) % p
    return p - int((lhs == rhs).sum())


def elliptic_an(ainvs, N: int, K: int) -> np.ndarray:
    """a_E(1..K) from a_p by multiplicativity; bad primes use a_{p^r} = a_p^r."""
    spf = _spf(K + 1)
    a = np.zeros(K + 1, dtype=np.int64)
    a[1] = 1
    ap = {}
    for m in range(2, K + 1):
        p = int(spf[m])
        r, q = 0, m
        while q % p == 0:
            q //= p
            r += 1
        pr = m // q
        if q > 1:
            a[m] = a[q] * a[pr]
            continue
        if p not in ap:
            ap[p] = _ap(ainvs, p)
        if N % p == 0:
            a[m] = ap[p] ** r
        elif r == 1:
            a[m] = ap[p]
        else:
            a[m] = ap[p] * a[m // p] - p * a[m // (p * p)]
    return a[1:]
