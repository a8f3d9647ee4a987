from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfattitude.so3 import attitude_angle_error, quat_to_rot, random_quaternion, random_rotation, rot_to_quat
from cfattitude.triad import DegenerateTriadError, VectorPair, triad, triad_estimate, triad_quaternion

R1 = np.array([0.0, 0.0, 1.0])
R2 = np.array([0.434, -0.04, 0.899]) / np.linalg.norm([0.434, -0.04, 0.899])


def test_identity_when_body_equals_reference():
    np.testing.assert_allclose(triad(R1, R2, R1, R2), np.eye(3), atol=1e-15)


def test_convention_pinned_to_quat_to_rot():
    q = random_quaternion(np.random.default_rng(5))
    R = quat_to_rot(q)
    b1, b2 = R.T @ R1, R.T @ R2
    np.testing.assert_allclose(triad(b1, b2, R1, R2), R, atol=1e-12)
    assert attitude_angle_error(triad_quaternion(b1, b2, R1, R2), q) < 1e-7


def test_random_rotations_exact():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        R = random_rotation(rng)
        r1, r2 = rng.standard_normal((2, 3))
        r1, r2 = r1 / np.linalg.norm(r1), r2 / np.linalg.norm(r2)
        est = triad(R.T @ r1, R.T @ r2, r1, r2)
        worst = max(worst, attitude_angle_error(rot_to_quat(est), rot_to_quat(R)))
    assert worst < 1e-9


@pytest.mark.parametrize("which", ["reference", "body"])
def test_collinear_rejected(which):
    a, b = np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])
    good = (R1, R2)
    args = (a, b, *good) if which == "body" else (*good, a, b)
    with pytest.raises(DegenerateTriadError):
        triad(*args)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.3))
def test_noisy_inputs_give_rotation_and_anchor_primary(seed, noise):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    b1 = R.T @ R1 + noise * rng.standard_normal(3)
    b2 = R.T @ R2 + noise * rng.standard_normal(3)
    b1, b2 = b1 / np.linalg.norm(b1), b2 / np.linalg.norm(b2)
    est = triad_estimate(VectorPair(b1, R1), VectorPair(b2, R2))
    np.testing.assert_allclose(est.T @ est, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(est) - 1) < 1e-12
    np.testing.assert_allclose(est.T @ R1, b1, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_body_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    C = random_rotation(rng)
    b1, b2 = R.T @ R1, R.T @ R2
    # rotating the body-side inputs by C^T composes on the right
    np.testing.assert_allclose(triad(C.T @ b1, C.T @ b2, R1, R2), triad(b1, b2, R1, R2) @ C, atol=1e-12)


def test_secondary_perturbation_is_continuous():
    R = random_rotation(np.random.default_rng(9))
    b1, b2 = R.T @ R1, R.T @ R2
    base = triad(b1, b2, R1, R2)
    for eps in (1e-2, 1e-4, 1e-6):
        p = b2 + eps * np.cross(b1, b2)
        assert np.abs(triad(b1, p / np.linalg.norm(p), R1, R2) - base).max() < 10 * eps
