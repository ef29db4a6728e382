"""Independent oracles shared by the test modules."""
import itertools
from fractions import Fraction

import numpy as np
import pytest

# Petersson norm of the discriminant form for the measure dx dy / y^2 on SL_2(Z)\H
DELTA_NORM = 1.0353620568043209e-6


def delta_form(z: complex) -> complex:
    """q prod (1 - q^n)^24."""
    q = np.exp(2j * np.pi * z)
    n = np.arange(1, 400)
    return complex(q * np.prod((1 - q ** n) ** 24))


def theta_char(Z, a, b, R=8):
    """Genus-2 theta constant with characteristic (a, b) in {0,1}^2 x {0,1}^2."""
    r = np.arange(-R, R + 1)
    x = np.stack(np.meshgrid(r, r, indexing="ij"), -1).reshape(-1, 2) + np.array(a) / 2
    q = np.einsum("mi,ij,mj->m", x, Z, x) / 2 + x @ np.array(b) / 2
    return complex(np.exp(2j * np.pi * q).sum())


def chi10(Z) -> complex:
    """-2^{-14} times the product of the squares of the ten even theta constants."""
    p = 1
    for m in itertools.product((0, 1), repeat=4):
        a, b = m[:2], m[2:]
        if (a[0] * b[0] + a[1] * b[1]) % 2 == 0:
            p *= theta_char(Z, a, b) ** 2
    return -p / 2 ** 14


def eta_product_coeffs(N: int, K: int) -> np.ndarray:
    """Coefficients 1..K of q prod (1 - q^n)^2 (1 - q^{N n})^2, the weight-2 newform of level 11."""
    c = np.zeros(K + 1, dtype=object)
    c[0] = 1
    for n in range(1, K + 1):
        for step, power in ((n, 2), (N * n, 2)):
            if step > K:
                continue
            for _ in range(power):
                for i in range(K, step - 1, -1):
                    c[i] -= c[i - step]
    return np.array([int(c[i - 1]) for i in range(1, K + 1)])


def laplace_det(M):
    """Cofactor-expansion determinant over Fractions."""
    M = [[Fraction(x) for x in r] for r in M]
    n = len(M)
    if n == 1:
        return M[0][0]
    return sum((-1) ** j * M[0][j] * laplace_det([r[:j] + r[j + 1:] for r in M[1:]]) for j in range(n))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240607)


# criterion number -> (passed, one-line summary); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
