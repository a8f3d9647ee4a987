from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfattitude.hurwitz import (
    IndeterminateHurwitzError,
    Stability,
    binomial_gains,
    char_poly_coeffs,
    companion_matrix,
    in_hbar,
    is_hurwitz,
    kron_with_identity,
    project_gamma,
    routh_stability,
)


def eig_hurwitz(gamma) -> bool:
    """Eigenvalue oracle used against the Routh path."""
    return bool(np.max(np.linalg.eigvals(companion_matrix(gamma)).real) < -1e-9)


def test_char_poly_examples():
    np.testing.assert_array_equal(char_poly_coeffs([2, 1]), [1, 2, 1])
    np.testing.assert_array_equal(char_poly_coeffs([1]), [1, 1])
    np.testing.assert_allclose(char_poly_coeffs(binomial_gains(3, 2)), [1, 6, 12, 8])
    with pytest.raises(ValueError):
        char_poly_coeffs([])


def test_companion_examples():
    np.testing.assert_array_equal(companion_matrix([5.0]), [[-5.0]])
    np.testing.assert_array_equal(companion_matrix([2, 1]), [[0, 1], [-1, -2]])
    np.testing.assert_allclose(np.linalg.eigvals(companion_matrix([2, 1])), [-1, -1], atol=1e-7)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_companion_char_poly_by_determinant(n):
    # det(sI - A) evaluated at sample points equals P_gamma there
    rng = np.random.default_rng(n)
    g = rng.uniform(-2, 2, n)
    A = companion_matrix(g)
    for s in rng.uniform(-3, 3, 5):
        np.testing.assert_allclose(np.linalg.det(s * np.eye(n) - A), np.polyval(char_poly_coeffs(g), s), rtol=1e-10, atol=1e-10)


def test_project_examples():
    np.testing.assert_array_equal(project_gamma([2, 1]), [2])
    np.testing.assert_array_equal(project_gamma([3, 3, 1]), [3, 3])
    a = 1.7
    np.testing.assert_allclose(project_gamma(binomial_gains(3, a)), [3 * a, 3 * a**2])
    with pytest.raises(ValueError):
        project_gamma([1.0])


def test_is_hurwitz_examples():
    assert is_hurwitz([2, 1])
    assert not is_hurwitz([0, 1])
    assert not is_hurwitz([-1])


def test_indeterminate_pivot():
    # s^3 + s^2 + s + 1 has roots on the imaginary axis: zero Routh pivot
    assert routh_stability([1, 1, 1]) is Stability.INDETERMINATE
    with pytest.raises(IndeterminateHurwitzError):
        is_hurwitz([1, 1, 1])
    with pytest.raises(IndeterminateHurwitzError):
        in_hbar([1, 1, 1])


def test_routh_matches_eigen_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        g = rng.uniform(-1, 4, n)
        status = routh_stability(g)
        if status is Stability.INDETERMINATE:
            continue
        assert (status is Stability.HURWITZ) == eig_hurwitz(g), g


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_binomial_in_hbar(n, alpha):
    assert in_hbar(binomial_gains(n, alpha))


def test_binomial_examples():
    np.testing.assert_array_equal(binomial_gains(2, 1), [2, 1])
    np.testing.assert_array_equal(binomial_gains(3, 2), [6, 12, 8])
    np.testing.assert_array_equal(binomial_gains(1, 0.7), [0.7])
    with pytest.raises(ValueError):
        binomial_gains(2, 0.0)
    with pytest.raises(ValueError):
        binomial_gains(0, 1.0)


def test_in_hbar_examples():
    assert in_hbar([2, 1])
    assert in_hbar([1.0]) and not in_hbar([-1.0])


def test_n3_hurwitz_always_in_hbar():
    # for n = 3 the truncation (g1, g2) is Hurwitz whenever g is, so the grid finds nothing
    grid = np.linspace(0.1, 5.0, 25)
    found = [g for g in itertools.product(grid, repeat=3) if eig_hurwitz(g) and not eig_hurwitz(g[:2])]
    assert found == []


def test_hn_minus_hbar_nonempty_for_n5():
    rng = np.random.default_rng(1)
    hit = None
    for _ in range(20000):
        g = rng.uniform(0.05, 3.0, 5)
        if eig_hurwitz(g) and not eig_hurwitz(g[:4]):
            hit = g
            break
    assert hit is not None
    assert is_hurwitz(hit)
    assert not in_hbar(hit)


def test_kron_examples():
    np.testing.assert_array_equal(kron_with_identity([[-1.0]], 3), -np.eye(3))
    E = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(kron_with_identity(E, 1), E)
    ev = np.linalg.eigvals(kron_with_identity(companion_matrix([2, 1]), 3))
    np.testing.assert_allclose(ev.real, -1.0, atol=1e-7)
    with pytest.raises(ValueError):
        kron_with_identity(E, 0)


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_kron_spectrum(n, k, seed):
    E = np.random.default_rng(seed).standard_normal((n, n))
    ev = np.linalg.eigvals(kron_with_identity(E, k))
    for lam in np.linalg.eigvals(E):
        # each eigenvalue of E appears (at least) k times
        assert np.sum(np.abs(ev - lam) < 1e-9 * max(1.0, abs(lam))) >= k
    assert eig_hurwitz_matrix(kron_with_identity(E, k)) == eig_hurwitz_matrix(E)


def eig_hurwitz_matrix(A) -> bool:
    return bool(np.max(np.linalg.eigvals(A).real) < 0)
