import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.exact_linalg import DomainError
from artifact.lattice_forms import automorphism_count, enumerate_forms, form, theta_tail
from artifact.subgroups import GroupDescriptor, dual_lattice, full_group, full_lattice


def _brute_forms(Y, B, R=12):
    out = set()
    for a, b2, c in itertools.product(range(0, R + 1), range(-R, R + 1), range(0, R + 1)):
        T = np.array([[a, b2 / 2], [b2 / 2, c]])
        if a > 0 and a * c - b2 * b2 / 4 > 0 and np.trace(T @ Y) <= B + 1e-9:
            out.add((a, b2, c))
    return out


def test_enumerate_examples():
    assert len(enumerate_forms(full_lattice(1), [[1.0]], 5).forms) == 5
    e = enumerate_forms(full_lattice(2), np.eye(2), 2)
    assert sorted(f.G for f in e.forms) == sorted([((2, 1), (1, 2)), ((2, -1), (-1, 2)), ((2, 0), (0, 2))])
    with pytest.raises(DomainError):
        enumerate_forms(full_lattice(2), np.eye(2), -1)


@pytest.mark.parametrize("B", [1, 2, 3, 4, 5, 6])
def test_enumeration_complete(B):
    Y = np.array([[1.0, 0.3], [0.3, 0.8]])
    got = {(f.G[0][0] // 2, f.G[0][1], f.G[1][1] // 2) for f in enumerate_forms(full_lattice(2), Y, B).forms}
    assert got == _brute_forms(Y, B)


def test_enumeration_growth():
    counts = [len(enumerate_forms(full_lattice(2), np.eye(2), B).forms) for B in (10, 20, 40)]
    r = [math.log(counts[i + 1] / counts[i], 2) for i in range(2)]
    assert 2.5 < r[-1] < 3.5


def test_enumeration_on_level_lattice():
    L = dual_lattice(GroupDescriptor(2, "Principal", 2))
    fs = enumerate_forms(L, np.eye(2), 1.5).forms
    assert any(f.to_float()[0, 1] == 0.25 for f in fs)


def test_automorphism_count():
    assert automorphism_count(form(1), form(1)) == 2
    I = form([[1, 0], [0, 1]])
    assert automorphism_count(I, I) == 8
    D = form([[1, 0], [0, 2]])
    assert automorphism_count(D, D) == 4
    assert automorphism_count(I, D) == 0
    H = form([[1, 0.5], [0.5, 1]])
    assert automorphism_count(H, H) == 12


def test_theta_tail_degree_one():
    for t, y in [(1, 0.5), (2, 1.3), (0.5, 2.0)]:
        h = theta_tail(full_group(1), [[t]], [[y]])
        assert abs(h.value - 2 * math.exp(-2 * math.pi * t * y)) < 1e-15


def test_theta_tail_brute_force():
    T = np.array([[1, 0.5], [0.5, 1]])
    Y = np.array([[0.6, 0.1], [0.1, 0.4]])
    want = 0.0
    for e in itertools.product(range(-8, 9), repeat=4):
        U = np.array(e).reshape(2, 2)
        if abs(round(np.linalg.det(U))) == 1:
            want += math.exp(-2 * math.pi * np.trace(T @ U.T @ Y @ U))
    h = theta_tail(full_group(2), T, Y)
    assert abs(h.value - want) < 1e-12 * want + h.tail_bound


@given(st.floats(0.3, 2.0))
@settings(max_examples=20, deadline=None)
def test_theta_tail_decays(y):
    T = np.array([[1, 0.5], [0.5, 1]])
    a = theta_tail(full_group(2), T, y * np.eye(2)).value
    b = theta_tail(full_group(2), T, 2 * y * np.eye(2)).value
    assert b < a
