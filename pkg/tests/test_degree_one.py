import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j1

from artifact.degree_one import (
    ELLIPTIC_CURVES,
    bessel_j1,
    d_set,
    divisor_count,
    elliptic_an,
    kloosterman,
    kloosterman_direct,
    large_sieve_check,
    petersson_gram,
    petersson_oracle,
    suggested_cmax,
    weight2_coeff,
)
from artifact.exact_linalg import DomainError
from artifact.lattice_forms import ParameterError
from artifact.subgroups import GroupDescriptor, full_group
from artifact.symplectic import n_of
from conftest import eta_product_coeffs

G1 = full_group(1)


def G0(N):
    return GroupDescriptor(1, "Gamma0", N)


def _classical_kloosterman(m, n, c):
    return sum(np.exp(2j * math.pi * (m * pow(d, -1, c) + n * d) / c) for d in range(c) if math.gcd(d, c) == 1) \
        if c > 1 else 1.0


# ---------------------------------------------------------------- D(c) and Kloosterman sums

def test_d_set_examples():
    assert d_set(G1, 1) == [0]
    assert d_set(G1, 3) == [1, 2]
    assert d_set(G0(2), 1) == []
    assert d_set(G0(2), 2) == [1]
    with pytest.raises(DomainError):
        d_set(G1, 0)


def test_kloosterman_examples():
    assert kloosterman(G1, 1, 1, 1) == pytest.approx(1)
    assert kloosterman(G1, 1, 1, 3) == pytest.approx(-1)


@pytest.mark.parametrize("N", [1, 2, 5, 11])
def test_fast_path_matches_direct(N):
    G = G0(N)
    for c in range(N, 50 * N if N < 3 else 8 * N + 1, N):
        for m, n in [(1, 1), (1, 2), (2, 3), (4, 6), (3, 7)]:
            assert abs(kloosterman(G, m, n, c) - kloosterman_direct(G, m, n, c)) < 1e-9


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 60))
@settings(max_examples=80, deadline=None)
def test_direct_matches_classical(m, n, c):
    assert abs(kloosterman_direct(G1, m, n, c) - _classical_kloosterman(m, n, c)) < 1e-9


def test_weil_bound_full_group():
    for c in range(1, 201):
        for m, n in [(1, 1), (1, 2), (2, 2), (3, 5), (6, 4)]:
            S = abs(kloosterman(G1, m, n, c))
            assert S <= divisor_count(c) * math.sqrt(c) * math.sqrt(math.gcd(math.gcd(m, n), c)) + 1e-9


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 40), st.sampled_from(["Gamma1", "Principal"]))
@settings(max_examples=40, deadline=None)
def test_triangle_bound(m, n, c, fam):
    G = GroupDescriptor(1, fam, 3)
    assert abs(kloosterman(G, m, n, c)) <= len(d_set(G, c)) + 1e-9


@pytest.mark.parametrize("t", [1, 2])
def test_conjugation_by_translation(t):
    # n(-t) g n(t) shifts d by c t and a by -c t, so the sum picks up e(t (n - m) / omega) with omega = 1
    G = G0(4)
    H = G.conjugate(n_of([[t]]))
    for c in (4, 8, 12):
        for m, n in [(1, 1), (1, 3), (2, 5)]:
            assert abs(kloosterman_direct(H, m, n, c) - kloosterman_direct(G, m, n, c)) < 1e-9


# ---------------------------------------------------------------- Bessel J1

def _j1_powerseries(x, terms=40):
    return sum((-1) ** j * (x / 2) ** (2 * j + 1) / (math.factorial(j) * math.factorial(j + 1)) for j in range(terms))


def test_j1_examples():
    assert bessel_j1(0.0) == 0.0
    for x in (1e-3, 1e-2, 0.05):
        assert bessel_j1(x) == pytest.approx(x / 2 - x ** 3 / 16, rel=1e-6)
    assert abs(bessel_j1(1.0) - _j1_powerseries(1.0)) < 1e-12


def test_j1_against_scipy():
    x = np.concatenate([np.linspace(0, 40, 4001), np.geomspace(40, 1e4, 500)])
    assert np.max(np.abs(bessel_j1(x) - j1(x))) < 1e-12


@given(st.floats(0, 200))
def test_j1_bounded(x):
    assert abs(bessel_j1(x)) <= 0.5819


# ---------------------------------------------------------------- weight 2

def test_weight2_symmetry():
    G = G0(11)
    for m in range(1, 9):
        for n in range(1, 9):
            a = math.sqrt(m / n) * weight2_coeff(G, m, n, tol=None).value
            b = math.sqrt(n / m) * weight2_coeff(G, n, m, tol=None).value
            assert abs(a - b) <= 1e-8


def test_full_group_gram_vanishes():
    g = petersson_gram(G1, 5, cMax=150000)
    assert np.abs(g.M).max() <= 1e-3
    assert g.rank() == 0


def test_eta_product_oracle_agrees_with_point_counts():
    assert list(elliptic_an(ELLIPTIC_CURVES[11], 11, 60)) == list(eta_product_coeffs(11, 60))


def test_hecke_eigenvalue_from_gram():
    g = petersson_gram(G0(11), 4)
    assert abs(g.M[0, 1] / g.M[0, 0] * math.sqrt(2) - (-2)) <= 0.1


def test_gram_level_11():
    g = petersson_gram(G0(11), 10, cMax=100000)
    lam = g.eigenvalues
    assert g.hermitian_defect() <= 1e-8
    assert lam[-2] <= 1e-2 * lam[-1]
    assert lam.min() >= -1e-4 * np.trace(g.M)
    v = g.eigenvectors[:, -1]
    v = v / v[0]
    a = elliptic_an(ELLIPTIC_CURVES[11], 11, 10)
    want = a / np.sqrt(np.arange(1, 11))
    mask = want != 0
    assert np.all(np.abs(v[mask] / want[mask] - 1) <= 0.05)
    assert np.all(np.abs(v[~mask]) <= 0.05)


@pytest.mark.parametrize("q", [11, 14, 15])
def test_gram_rank_matches_dimension(q):
    assert petersson_gram(G0(q), 10).rank() == 1


def test_weight2_tail_halving():
    G = G0(11)
    first = weight2_coeff(G, 1, 2, cMax=20000, tol=1e-2)
    tol = first.tail / 2
    second = weight2_coeff(G, 1, 2, cMax=suggested_cmax(G, 1, 2, tol), tol=tol)
    assert second.tail <= tol
    assert abs(first.value - second.value) <= first.tail


def test_weight2_refuses_unreachable_tolerance():
    with pytest.raises(ParameterError, match="cMax"):
        weight2_coeff(G0(11), 1, 2, cMax=100, tol=1e-6)


# ---------------------------------------------------------------- large sieve and oracle

def test_large_sieve_ratio_bounded():
    r = large_sieve_check(G0(11), 10, trials=100)
    assert r.maxRatio <= 50 and r.seed == 12345


def test_large_sieve_basis_vector():
    g = petersson_gram(G0(11), 10)
    e1 = np.zeros(10)
    e1[0] = 1
    r = large_sieve_check(G0(11), 10, gram=g, vectors=e1)
    assert r.ratios[0] == pytest.approx(g.M[0, 0] / (math.log(10) + 10 / 11), rel=1e-12)


def test_large_sieve_reproducible():
    a = large_sieve_check(G0(11), 10, trials=20, seed=7)
    b = large_sieve_check(G0(11), 10, trials=20, seed=7)
    assert np.array_equal(a.ratios, b.ratios)


def test_oracle_limits():
    assert abs(petersson_oracle(60, 1, 1) - 1) < 1e-6
    assert abs(petersson_oracle(60, 1, 2)) < 1e-3
    with pytest.raises(DomainError):
        petersson_oracle(3, 1, 1)
