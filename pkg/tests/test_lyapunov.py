from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from cfattitude.hurwitz import binomial_gains, companion_matrix, kron_with_identity
from cfattitude.lyapunov import LyapunovError, residual, solve_lyapunov


def random_spd(rng, d):
    M = rng.standard_normal((d, d))
    return M @ M.T + d * np.eye(d)


def test_diagonal_balance():
    sol = solve_lyapunov(-np.eye(3), 2 * np.eye(3))
    np.testing.assert_allclose(sol.P, np.eye(3), atol=1e-15)


@pytest.mark.parametrize("a,q", [(1.0, 1.0), (0.3, 2.0), (5.0, 0.1)])
def test_scalar_closed_form(a, q):
    sol = solve_lyapunov([[-a]], [[q]])
    assert sol.P[0, 0] == pytest.approx(q / (2 * a), rel=1e-14)


def test_companion_kron():
    A = kron_with_identity(companion_matrix([2, 1]), 3)
    sol = solve_lyapunov(A, np.eye(6))
    assert sol.residual_norm < 1e-10
    assert np.linalg.eigvalsh(sol.P).min() > 0


@settings(max_examples=40)
@given(st.integers(1, 4), st.floats(0.3, 3.0), st.integers(0, 2**32 - 1))
def test_random_hurwitz_designs(n, alpha, seed):
    rng = np.random.default_rng(seed)
    A = kron_with_identity(companion_matrix(binomial_gains(n, alpha)), 3)
    Q = random_spd(rng, 3 * n)
    sol = solve_lyapunov(A, Q)
    assert residual(A, sol.P, Q) <= 1e-9 * np.linalg.norm(Q)
    np.testing.assert_array_equal(sol.P, sol.P.T)
    assert np.linalg.eigvalsh(sol.P).min() > 1e-10
    # independent solver (Bartels-Stewart) as a second path
    P_ref = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    np.testing.assert_allclose(sol.P, P_ref, atol=1e-8 * max(1.0, np.abs(P_ref).max()))


def test_non_hurwitz_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov(np.diag([-1.0, 0.5]), np.eye(2))


def test_marginal_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov([[0.0, 1.0], [-1.0, 0.0]], np.eye(2))


def test_asymmetric_q_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov(-np.eye(2), [[1.0, 0.5], [0.0, 1.0]])


def test_indefinite_q_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov(-np.eye(2), np.diag([1.0, -1.0]))


def test_shape_mismatch():
    with pytest.raises(LyapunovError):
        solve_lyapunov(-np.eye(2), np.eye(3))
