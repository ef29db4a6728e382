import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from artifact.exact_linalg import DomainError
from artifact.lattice_forms import form
from artifact.poincare_bergman import (
    ConvergenceError,
    GridSpec,
    TruncationParams,
    bergman_eval,
    constants,
    cusp_dimension,
    default_trunc,
    lattice_sum_check,
    lipschitz_pair,
    log_gamma_n,
    majorant_sum,
    poincare_eval,
    poincare_fourier_coeff,
    poincare_gram_rank,
    sup_search,
)
from artifact.degree_one import petersson_oracle
from artifact.subgroups import GroupDescriptor, full_group, full_lattice
from artifact.symplectic import act, automorphy_factor, inversion, n_of
from conftest import DELTA_NORM, chi10, delta_form

G1 = full_group(1)
G2 = full_group(2)


def _domain_points(m, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < m:
        x, y = rng.uniform(-0.5, 0.5), rng.uniform(0.87, 3.0)
        if x * x + y * y >= 1:
            out.append(complex(x, y))
    return out


# ---------------------------------------------------------------- constants

def test_constants_degree_one():
    assert constants(1, 12).a == pytest.approx(11 / (4 * math.pi), rel=1e-13)
    for k in (6, 20, 41):
        assert constants(1, k).a == pytest.approx((k - 1) / (4 * math.pi), rel=1e-12)


def test_multivariate_gamma():
    for s in (1.5, 3.0, 7.25):
        assert math.exp(log_gamma_n(1, s)) == pytest.approx(gamma(s), rel=1e-13)
        want = math.sqrt(math.pi) * gamma(s) * gamma(s - 0.5)
        assert math.exp(log_gamma_n(2, s)) == pytest.approx(want, rel=1e-13)


@pytest.mark.xfail(strict=True, reason="a_{1,k} = (k-1)/(4 pi) has fitted slope 1.03 on [20, 60]; n = 2 gives 3.14")
@pytest.mark.parametrize("n", [1, 2])
def test_growth_of_a(n):
    ks = np.arange(20, 61)
    la = [constants(n, int(k)).logA for k in ks]
    slope = np.polyfit(np.log(ks), la, 1)[0]
    want = n * (n + 1) / 2
    assert abs(slope - want) <= 0.02 * want


@pytest.mark.parametrize("n", [1, 2])
def test_growth_of_a_asymptotic(n):
    ks = np.arange(400, 1201)
    slope = np.polyfit(np.log(ks), [constants(n, int(k)).logA for k in ks], 1)[0]
    want = n * (n + 1) / 2
    assert abs(slope - want) <= 0.02 * want


def test_constants_reject_small_weight():
    with pytest.raises(DomainError):
        constants(2, 1)


def test_cusp_dimensions():
    assert [cusp_dimension(1, k) for k in range(12, 28, 2)] == [1, 0, 1, 1, 1, 1, 2, 1]
    assert [cusp_dimension(2, k) for k in range(10, 26, 2)] == [1, 1, 1, 2, 2, 3, 4, 5]


# ---------------------------------------------------------------- Poincare series

def test_identity_coset_dominates_high_up():
    for x in (0.0, 0.3):
        z = complex(x, 10)
        e = poincare_eval(G1, 1, 12, [[z]], TruncationParams(cosetHeight=100))
        resid = abs(e.value - np.exp(2j * math.pi * z))
        assert resid < 1e-20 and resid <= e.tail


def test_degree_one_tail_bounds_truncation():
    z = [[0.3 + 10j]]
    a = poincare_eval(G1, 1, 12, z, TruncationParams(cosetHeight=30))
    b = poincare_eval(G1, 1, 12, z, TruncationParams(cosetHeight=200))
    assert abs(a.value - b.value) <= a.tail


def test_poincare_uniformly_bounded():
    vals = [abs(poincare_eval(G1, 1, k, [[z]]).value) for k in range(12, 42, 4) for z in _domain_points(20)]
    assert max(vals) <= 10


@pytest.mark.parametrize("z", [0.2 + 1.1j, -0.4 + 0.95j, 0.1 + 2.0j])
def test_poincare_equivariance(z):
    k = 12
    tr = TruncationParams(cosetHeight=30)
    for g in (inversion(1), inversion(1) @ n_of([[1]]), n_of([[-1]]) @ inversion(1) @ n_of([[2]])):
        gz = act(g, np.array([[z]])).Z
        lhs = poincare_eval(G1, 1, k, gz, tr).value * automorphy_factor(g, np.array([[z]])) ** (-k)
        rhs = poincare_eval(G1, 1, k, [[z]], tr).value
        assert abs(lhs - rhs) <= 1e-6 * max(abs(rhs), 1e-3)


def test_poincare_weight_guard():
    with pytest.raises(ConvergenceError):
        poincare_eval(G1, 1, 3, [[1j]])
    with pytest.raises(ConvergenceError):
        poincare_eval(G2, np.eye(2), 5, 1j * np.eye(2))


def test_fourier_coeff_limits():
    assert abs(poincare_fourier_coeff(G1, 1, 1, 40).value - 1) <= 0.01
    c = poincare_fourier_coeff(G2, np.eye(2), np.eye(2), 30)
    assert abs(c.value - 4) <= 0.8


@pytest.mark.parametrize("m,n,k", [(1, 2, 12), (1, 1, 12), (2, 3, 16), (1, 3, 20)])
def test_fourier_coeff_matches_classical_formula(m, n, k):
    tr = TruncationParams(cosetHeight=30, quadratureGrid=16)
    c = poincare_fourier_coeff(G1, m, n, k, tr)
    ref = petersson_oracle(k, m, n)
    assert abs(c.value - ref) <= 1e-4 * max(1.0, abs(ref))


def test_fourier_coeff_alias_guard():
    from artifact.lattice_forms import ParameterError

    with pytest.raises(ParameterError):
        poincare_fourier_coeff(G1, 1, 5, 12, TruncationParams(quadratureGrid=8))


# ---------------------------------------------------------------- Lipschitz

def test_lipschitz_degree_one():
    p = lipschitz_pair(full_lattice(1), 4, [[1j]])
    assert p.relative_gap <= 1e-10


def test_lipschitz_degree_two():
    p = lipschitz_pair(full_lattice(2), 6, 1j * np.eye(2))
    assert p.relative_gap <= 1e-6


@given(st.floats(-0.5, 0.5), st.floats(0.5, 2.0), st.integers(4, 14))
@settings(max_examples=25, deadline=None)
def test_lipschitz_random_points(x, y, k):
    p = lipschitz_pair(full_lattice(1), k, [[complex(x, y)]])
    assert p.relative_gap <= 1e-6


def test_lipschitz_on_level_lattice():
    lat = GroupDescriptor(2, "Principal", 2)
    Z = np.array([[0.1 + 1.1j, 0.05 + 0.2j], [0.05 + 0.2j, -0.2 + 0.9j]])
    assert lipschitz_pair(lat, 6, Z).relative_gap <= 1e-6


def test_lipschitz_scaling():
    ratios = []
    for k in range(8, 41, 4):
        y = k / (4 * math.pi)
        p = lipschitz_pair(full_lattice(1), k, [[1j * y]])
        ratios.append(abs(p.lhs) * y ** k / k ** 0.5)
    assert max(ratios) <= 10 * min(ratios)


def test_lipschitz_divergent_weight():
    with pytest.raises(ConvergenceError):
        lipschitz_pair(full_lattice(2), 2, 1j * np.eye(2))


# ---------------------------------------------------------------- Bergman kernel

@pytest.mark.parametrize("z", [1j, 0.3 + 1.2j, -0.45 + 0.9j, 0.5 + 0.8660254037844386j, 0.1 + 2.5j])
def test_bergman_matches_discriminant(z):
    e = bergman_eval(G1, 12, [[z]])
    ref = z.imag ** 12 * abs(delta_form(z)) ** 2 / DELTA_NORM
    assert abs(e.value - ref) <= 0.01 * ref


def test_bergman_halfA_variant():
    a = bergman_eval(G1, 12, [[1j]]).value
    b = bergman_eval(G1, 12, [[1j]], variant="halfA").value
    assert b / a == pytest.approx(constants(1, 12).a / 2, rel=1e-12)


def test_bergman_weight_guard():
    with pytest.raises(ConvergenceError):
        bergman_eval(G1, 3, [[1j]])
    with pytest.raises(ConvergenceError):
        bergman_eval(G2, 5, 1j * np.eye(2))


def test_bergman_degree_two_matches_chi10():
    pts = [1j * 0.95 * np.array([[1.0, 0.5], [0.5, 1.0]]) + np.array([[0.1, 0.2], [0.2, -0.3]]),
           1j * np.array([[1.6, 0.3], [0.3, 1.9]]) + np.array([[0.2, 0.1], [0.1, 0.4]]),
           1j * 1.11 * np.array([[1, 0.5], [0.5, 1]]),
           1j * np.array([[1.2, 0.4], [0.4, 1.5]]) + np.array([[0.3, -0.1], [-0.1, 0.2]])]
    tr = TruncationParams(cosetHeight=2, unitNorm=8, tailTol=1e-8)
    r, rel = [], []
    for Z in pts:
        e = bergman_eval(G2, 10, Z, tr, reduce=False)
        r.append(e.value / (np.linalg.det(Z.imag) ** 10 * abs(chi10(Z)) ** 2))
        rel.append(e.tail / e.value)
    # the constant is the reciprocal Petersson norm of chi10; each point may deviate by its own tail
    c = r[int(np.argmin(rel))]
    for ri, ei in zip(r, rel):
        assert abs(ri / c - 1) <= ei + min(rel) + 2e-3


@pytest.mark.parametrize("z", [0.2 + 1.1j, -0.3 + 0.97j])
def test_bergman_invariance(z):
    base = bergman_eval(G1, 16, [[z]]).value
    for g in (inversion(1), n_of([[1]]), n_of([[-2]]) @ inversion(1), inversion(1) @ n_of([[1]]),
              n_of([[1]]) @ inversion(1) @ n_of([[-1]])):
        w = act(g, np.array([[z]])).Z
        assert abs(bergman_eval(G1, 16, w).value - base) <= 1e-6 * base


def test_bergman_nonnegative_on_level_group():
    G = GroupDescriptor(1, "Gamma0", 5)
    for z in _domain_points(6, seed=9):
        e = bergman_eval(G, 12, [[z]])
        assert e.value >= -10 * e.tail


# ---------------------------------------------------------------- lattice sums and majorant

def test_lattice_sum_degree_one_bounded():
    r = [lattice_sum_check(G1, k, [[1.0]]).ratio for k in range(12, 62, 4)]
    assert max(r) <= 10


def test_lattice_sum_degree_two_bounded():
    r = [lattice_sum_check(G2, k, np.eye(2)).ratio for k in range(10, 26, 2)]
    assert max(r) <= 10 * min(r)


def test_lattice_sum_monotone_in_Y():
    # the raw sum over T is termwise decreasing in Y; the reported value carries det(Y)^k
    raw4 = lattice_sum_check(G1, 20, [[4.0]]).value / 4.0 ** 20
    raw1 = lattice_sum_check(G1, 20, [[1.0]]).value
    assert raw4 <= raw1


def test_lattice_sum_domain_floor():
    with pytest.raises(DomainError):
        lattice_sum_check(G1, 12, [[0.5]])


def test_majorant_converged():
    a = majorant_sum(G1, 3, [[1j]], 50)
    b = majorant_sum(G1, 3, [[1j]], 100)
    assert abs((a.value + a.tail) - (b.value + b.tail)) <= 1e-8


def test_majorant_exact_value():
    from scipy.special import zeta

    # sum over coprime (c, d) mod sign of |ci + d|^{-3}: 4 zeta(3/2) beta(3/2) / (2 zeta(3))
    beta = sum((-1) ** j / (2 * j + 1) ** 1.5 for j in range(2_000_000))
    beta += (-1) ** 2_000_000 / 2 / (4_000_001) ** 1.5
    exact = 4 * zeta(1.5) * beta / (2 * zeta(3))
    b = majorant_sum(G1, 3, [[1j]], 100)
    assert abs(b.value + b.tail - exact) <= 1e-8


def test_majorant_monotone_and_bounded():
    pts = _domain_points(10, seed=5)
    for z in pts:
        vals = [majorant_sum(G1, s, [[z]], 30).value for s in (2.5, 3, 4, 6)]
        assert all(vals[i] >= vals[i + 1] for i in range(3))
        assert vals[0] <= 10


def test_majorant_rejects_outside_domain():
    with pytest.raises(DomainError):
        majorant_sum(G1, 3, [[0.5j]], 10)


# ---------------------------------------------------------------- sup search and Gram rank

def test_sup_search_argmax_location():
    r = sup_search(G1, 12, GridSpec(ny=16, golden=20))
    y = r.Z[0, 0].imag
    assert 12 / (8 * math.pi) <= y <= 12 / (2 * math.pi)


def test_gram_single_form():
    g = poincare_gram_rank(G1, 40, [1], TruncationParams(cosetHeight=30, quadratureGrid=16))
    assert g.matrix.shape == (1, 1) and abs(g.matrix[0, 0] - 1) < 0.01 and g.nonsingular


def test_gram_rejects_equivalent_forms():
    with pytest.raises(DomainError):
        poincare_gram_rank(G2, 20, [np.eye(2), np.eye(2)])


def test_truncation_doubling():
    tr = default_trunc(1)
    z = [[0.2 + 1.3j]]
    a = bergman_eval(G1, 24, z, tr)
    b = bergman_eval(G1, 24, z, tr.doubled())
    assert abs(a.value - b.value) <= max(a.tail, 1e-12 * a.value)
