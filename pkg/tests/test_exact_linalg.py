import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.exact_linalg import (
    DomainError,
    RationalSymMatrix,
    StructuralError,
    exact_det,
    gcd_of_minors,
    int_inverse,
    is_minkowski_reduced,
    is_positive_definite,
    minkowski_reduce,
    short_vectors,
)
from conftest import laplace_det

small_int_matrices = st.integers(1, 4).flatmap(
    lambda n: st.lists(st.lists(st.integers(-9, 9), min_size=n, max_size=n), min_size=n, max_size=n))


@given(small_int_matrices)
def test_exact_det_matches_cofactor_expansion(M):
    assert exact_det(np.array(M, dtype=object)) == laplace_det(M)


def test_det_has_no_overflow():
    big = 10 ** 30
    M = np.array([[big, 1], [1, big]], dtype=object)
    assert exact_det(M) == big * big - 1


def test_positive_definite_examples():
    assert is_positive_definite(np.eye(3, dtype=int))
    assert not is_positive_definite(np.array([[1, 2], [2, 1]], dtype=object))
    w = is_positive_definite(np.array([[2, 1], [1, 2]], dtype=object))
    assert w and w.minors == [2, 3]
    assert is_positive_definite(RationalSymMatrix([[1, Fraction(1, 2)], [Fraction(1, 2), 1]]))


def test_positive_definite_float_witness():
    Y = np.array([[2.0, 0.3], [0.3, 1.0]])
    w = is_positive_definite(Y)
    assert w and np.allclose(w.cholesky @ w.cholesky.T, Y)
    assert not is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_structural_errors():
    with pytest.raises(StructuralError):
        is_positive_definite(np.zeros((2, 3)))
    with pytest.raises(StructuralError):
        RationalSymMatrix([[1, 2], [3, 4]])


def test_int_inverse_roundtrip():
    U = np.array([[2, 1], [1, 1]], dtype=object)
    assert (U.dot(int_inverse(U)) == np.eye(2, dtype=int)).all()
    assert gcd_of_minors(np.array([[2, 0, 1, 0], [0, 2, 0, 1]], dtype=object)) == 1


@given(st.floats(0.3, 3), st.floats(-0.95, 0.95), st.floats(0.3, 3))
@settings(max_examples=60, deadline=None)
def test_short_vectors_match_brute_force(a, r, c):
    b = r * np.sqrt(a * c)
    G = np.array([[a, b], [b, c]])
    bound = 4.0
    got = {tuple(v) for v in short_vectors(G, bound)}
    want = set()
    for v in itertools.product(range(-12, 13), repeat=2):
        if v != (0, 0) and np.array(v) @ G @ np.array(v) <= bound * (1 - 1e-9):
            nz = next(x for x in v if x)
            want.add(v if nz > 0 else tuple(-x for x in v))
    assert want <= got
    # anything extra sits on the boundary within rounding
    for v in got - want:
        assert abs(np.array(v) @ G @ np.array(v) - bound) < 1e-6


def _random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.2 * np.eye(n)


def test_minkowski_examples():
    Yr, U = minkowski_reduce(np.eye(2))
    assert np.allclose(Yr, np.eye(2)) and (U == np.eye(2, dtype=int)).all()
    Yr, U = minkowski_reduce(np.array([[5.0]]))
    assert Yr[0, 0] == 5.0 and U[0, 0] == 1
    Y = np.array([[1.0, 0.9], [0.9, 1.0]])
    Yr, U = minkowski_reduce(Y)
    brute = min(np.array(u) @ Y @ np.array(u) for u in itertools.product(range(-3, 4), repeat=2) if u != (0, 0))
    assert abs(Yr[0, 0] - brute) < 1e-12


def test_minkowski_rejects_indefinite():
    with pytest.raises(DomainError):
        minkowski_reduce(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("n", [2, 3])
def test_minkowski_properties(rng, n):
    for _ in range(40):
        Y = _random_spd(rng, n)
        Yr, U = minkowski_reduce(Y)
        Uf = U.astype(float)
        assert abs(abs(exact_det(U)) - 1) == 0
        assert np.allclose(Uf.T @ Y @ Uf, Yr, rtol=1e-10, atol=1e-12)
        assert abs(np.linalg.det(Yr) / np.linalg.det(Y) - 1) < 1e-12
        assert is_minkowski_reduced(Yr, tol=1e-9)
        Yr2, _ = minkowski_reduce(Yr)
        assert np.allclose(Yr2, Yr, rtol=1e-12, atol=1e-12)


def test_first_minimum_by_brute_force(rng):
    for _ in range(50):
        Y = _random_spd(rng, 2)
        Yr, _ = minkowski_reduce(Y)
        brute = min(np.array(v) @ Y @ np.array(v) for v in itertools.product(range(-10, 11), repeat=2) if v != (0, 0))
        assert abs(Yr[0, 0] - brute) <= 1e-12 * brute


def test_minkowski_sign_convention(rng):
    for _ in range(20):
        _, U = minkowski_reduce(_random_spd(rng, 3))
        for j in range(3):
            col = [int(x) for x in U[:, j]]
            assert next(x for x in col if x) > 0


def test_weak_form_for_large_degree(rng):
    Y = _random_spd(rng, 4)
    Yr, U = minkowski_reduce(Y)
    Uf = U.astype(float)
    assert np.allclose(Uf.T @ Y @ Uf, Yr)
    assert np.all(np.diff(np.diag(Yr)) >= -1e-9)
