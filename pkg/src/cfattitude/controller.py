"""Attitude tracking from filtered vector measurements.

The controller runs a first-order complementary filter per reference
direction and feeds the filtered directions into a torque law with exact
inertia feedforward.  In error coordinates ``Θ = (b̄_1..b̄_m, Q̄, ω̄)`` the loop
is autonomous; this module carries both the plant-side law and the
error-coordinate machinery (equilibria, Lyapunov function, saddle probes)
used to validate it.

Error coordinates, for desired attitude ``R_d`` and rate ``ω_d``::

    Q̄ = Q ⊙ Q_d^-1,   ω̄ = R_d (ω - ω_d),   b̄_i = R_d (b_i - b̂_i)

Lyapunov function used here::

    V3 = Σ (ρ_i/δ_i) |b̄_i|² + 4 q̄ᵀ W q̄ + |ω̄|²
    V̇3 = -2k |ω̄|² - 2 Σ α_i (ρ_i/δ_i) |b̄_i|²

The attitude weight is 4 (not 2) so that the cross terms between the
attitude and rate rows cancel exactly; with it, ``V3`` at the saddle
``(0, ±v_j)`` equals ``4 λ_j`` and the sublevel set ``V3 < 4 λ_min`` excludes
every saddle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .so3 import attitude_angle_error, quat_inv, quat_mul, quat_normalize, quat_to_rot, skew

# representative small-quadrotor inertia, kg m^2
DEFAULT_INERTIA = np.diag([0.0082, 0.0082, 0.0149])
PAPER_REFS = np.array([[0.0, 0.0, 1.0], [0.434, -0.04, 0.899]])
EIG_GAP_TOL = 1e-9


class ControllerError(ValueError):
    pass


class NotPositiveDefiniteError(ControllerError):
    pass


class DegenerateEigenWarning(UserWarning):
    """W has (nearly) repeated eigenvalues; saddle eigenvectors are not unique."""


@dataclass(frozen=True)
class ControllerGains:
    rho: NDArray[np.float64]
    k: float
    alpha: NDArray[np.float64]
    delta: NDArray[np.float64]

    @classmethod
    def create(cls, rho: ArrayLike, k: float, alpha: ArrayLike, delta: ArrayLike = 1.0) -> "ControllerGains":
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        m = rho.size
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (m,)).copy()
        delta = np.broadcast_to(np.asarray(delta, dtype=float), (m,)).copy()
        if np.any(rho <= 0) or np.any(alpha <= 0) or np.any(delta <= 0) or not k > 0:
            raise ControllerError("all controller gains must be strictly positive")
        return cls(rho, float(k), alpha, delta)

    @property
    def m(self) -> int:
        return self.rho.size


PAPER_GAINS = ControllerGains.create(rho=[1.66, 0.1161], k=0.2621, alpha=[6.0, 10.0], delta=1.0)
# stiffer set for the error-coordinate basin sweep; the bench gains need minutes to settle there
SWEEP_GAINS = ControllerGains.create(rho=[10.0, 10.0], k=2.5, alpha=[6.0, 10.0], delta=1.0)


def _unit_rows(refs: ArrayLike) -> NDArray[np.float64]:
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    return refs / np.linalg.norm(refs, axis=1, keepdims=True)


def w_matrix(rho: ArrayLike | ControllerGains, refs: ArrayLike, check: bool = True) -> NDArray[np.float64]:
    """``W = -Σ ρ_i S(r_i)²``.

    Raises:
        NotPositiveDefiniteError: when ``check`` and ``λ_min(W) <= 0``
            (collinear references).
    """
    if isinstance(rho, ControllerGains):
        rho = rho.rho
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    refs = _unit_rows(refs)
    S = skew(refs)
    W = -np.einsum("i,ijk,ikl->jl", rho, S, S)
    W = 0.5 * (W + W.T)
    if check:
        lam_min = float(np.linalg.eigvalsh(W)[0])
        if lam_min <= 1e-12:
            raise NotPositiveDefiniteError(f"W is not positive definite (lambda_min = {lam_min:.3e})")
    return W


# --- plant-side law ---------------------------------------------------------


def tracking_filter_derivative(
    gains: ControllerGains,
    b_hat: ArrayLike,
    b: ArrayLike,
    omega: ArrayLike,
    b_des: ArrayLike,
    omega_d: ArrayLike,
) -> NDArray[np.float64]:
    """Filter rate ``-S(ω)b + α(b-b̂) + S(ω_d)(b-b̂) + δ S(b^d)(ω-ω_d)`` per row."""
    b_hat, b, b_des = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (b_hat, b, b_des))
    omega = np.asarray(omega, dtype=float)
    omega_d = np.asarray(omega_d, dtype=float)
    e = b - b_hat
    return (
        -np.cross(omega, b)
        + gains.alpha[:, None] * e
        + np.cross(omega_d, e)
        + gains.delta[:, None] * np.cross(b_des, omega - omega_d)
    )


def stabilization_filter_derivative(
    gains: ControllerGains, b_hat: ArrayLike, b: ArrayLike, omega: ArrayLike, b_des: ArrayLike
) -> NDArray[np.float64]:
    return tracking_filter_derivative(gains, b_hat, b, omega, b_des, np.zeros(3))


def control_torque(
    gains: ControllerGains,
    J: ArrayLike,
    omega: ArrayLike,
    omega_d: ArrayLike,
    omega_d_dot: ArrayLike,
    b_des: ArrayLike,
    b_hat: ArrayLike,
) -> NDArray[np.float64]:
    """Tracking torque with exact inertia feedforward (N m)."""
    J = np.asarray(J, dtype=float)
    omega = np.asarray(omega, dtype=float)
    omega_d = np.asarray(omega_d, dtype=float)
    b_des = np.atleast_2d(np.asarray(b_des, dtype=float))
    b_hat = np.atleast_2d(np.asarray(b_hat, dtype=float))
    correction = np.sum(gains.rho[:, None] * np.cross(b_des, b_hat), axis=0)
    return (
        np.cross(omega, J @ omega)
        - J @ np.cross(omega_d, omega)
        + J @ np.asarray(omega_d_dot, dtype=float)
        + J @ correction
        - gains.k * (J @ (omega - omega_d))
    )


def stabilization_torque(gains: ControllerGains, omega: ArrayLike, b_des: ArrayLike, b_hat: ArrayLike) -> NDArray[np.float64]:
    """Regulation torque ``Σ ρ_i S(b_i^d) b̂_i - k ω`` (no inertia terms)."""
    b_des = np.atleast_2d(np.asarray(b_des, dtype=float))
    b_hat = np.atleast_2d(np.asarray(b_hat, dtype=float))
    return np.sum(gains.rho[:, None] * np.cross(b_des, b_hat), axis=0) - gains.k * np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class DesiredTrajectory:
    """Desired attitude generated by integrating a closed-form body rate."""

    q_d0: NDArray[np.float64]
    omega_d: Callable[[float], NDArray[np.float64]]
    omega_d_dot: Callable[[float], NDArray[np.float64]]

    @classmethod
    def hold(cls, q_d: ArrayLike = (1.0, 0.0, 0.0, 0.0)) -> "DesiredTrajectory":
        zero = np.zeros(3)
        return cls(quat_normalize(q_d), lambda t: zero, lambda t: zero)

    @classmethod
    def sinusoidal(
        cls, amplitude: ArrayLike, freq: ArrayLike, phase: ArrayLike = 0.0, q_d0: ArrayLike = (1.0, 0.0, 0.0, 0.0)
    ) -> "DesiredTrajectory":
        a = np.broadcast_to(np.asarray(amplitude, float), (3,)).copy()
        w = np.broadcast_to(np.asarray(freq, float), (3,)).copy()
        p = np.broadcast_to(np.asarray(phase, float), (3,)).copy()
        return cls(quat_normalize(q_d0), lambda t: a * np.sin(w * t + p), lambda t: a * w * np.cos(w * t + p))


def check_desired_consistency(
    times: ArrayLike, R_d: ArrayLike, omega_d: ArrayLike, tol: float = 1e-6
) -> float:
    """Max deviation of central-difference ``Ṙ_d`` from ``R_d S(ω_d)`` on samples.

    Raises:
        ControllerError: if the deviation exceeds ``tol``.
    """
    t = np.asarray(times, dtype=float)
    R = np.asarray(R_d, dtype=float)
    w = np.asarray(omega_d, dtype=float)
    Rdot = (R[2:] - R[:-2]) / (t[2:] - t[:-2])[:, None, None]
    err = float(np.max(np.abs(Rdot - R[1:-1] @ skew(w[1:-1]))))
    if err > tol:
        raise ControllerError(f"desired trajectory inconsistent: max |Ṙ_d - R_d S(ω_d)| = {err:.3e}")
    return err


# --- error coordinates ------------------------------------------------------


@dataclass(frozen=True)
class ClosedLoopState:
    """``Θ = (b̄_1..b̄_m, Q̄, ω̄)``; arrays may carry leading batch axes."""

    b_bar: NDArray[np.float64]  # (..., m, 3)
    q_bar: NDArray[np.float64]  # (..., 4)
    w_bar: NDArray[np.float64]  # (..., 3)

    def pack(self) -> NDArray[np.float64]:
        lead = self.q_bar.shape[:-1]
        return np.concatenate([self.b_bar.reshape(lead + (-1,)), self.q_bar, self.w_bar], axis=-1)

    @classmethod
    def unpack(cls, y: ArrayLike, m: int) -> "ClosedLoopState":
        y = np.asarray(y, dtype=float)
        lead = y.shape[:-1]
        return cls(y[..., : 3 * m].reshape(lead + (m, 3)), y[..., 3 * m : 3 * m + 4], y[..., 3 * m + 4 :])


def theta_from_plant(
    q: ArrayLike,
    omega: ArrayLike,
    q_d: ArrayLike,
    omega_d: ArrayLike,
    b_hat: ArrayLike,
    refs: ArrayLike,
) -> ClosedLoopState:
    """Map plant, desired and filter states to ``Θ`` coordinates."""
    refs = _unit_rows(refs)
    R = quat_to_rot(q)
    R_d = quat_to_rot(q_d)
    b = refs @ R  # rows are R^T r_i
    b_bar = (np.atleast_2d(b) - np.atleast_2d(b_hat)) @ R_d.T
    return ClosedLoopState(
        b_bar,
        quat_mul(q, quat_inv(q_d)),
        R_d @ (np.asarray(omega, float) - np.asarray(omega_d, float)),
    )


def _rhs(y: NDArray[np.float64], gains: ControllerGains, refs: NDArray[np.float64], W: NDArray[np.float64]) -> NDArray[np.float64]:
    m = gains.m
    lead = y.shape[:-1]
    bb = y[..., : 3 * m].reshape(lead + (m, 3))
    q0 = y[..., 3 * m : 3 * m + 1]
    q = y[..., 3 * m + 1 : 3 * m + 4]
    w = y[..., 3 * m + 4 :]

    Sr_w = np.cross(refs, w[..., None, :])  # (..., m, 3)
    bb_dot = -gains.alpha[:, None] * bb - gains.delta[:, None] * Sr_w
    q0_dot = -0.5 * np.sum(q * w, axis=-1, keepdims=True)
    q_dot = 0.5 * (q0 * w + np.cross(q, w))
    Wq = q @ W.T
    w_dot = (
        -2.0 * (q0 * Wq - np.cross(q, Wq))
        - np.sum(gains.rho[:, None] * np.cross(refs, bb), axis=-2)
        - gains.k * w
    )
    return np.concatenate([bb_dot.reshape(lead + (3 * m,)), q0_dot, q_dot, w_dot], axis=-1)


def closed_loop_derivative(
    gains: ControllerGains, state: ClosedLoopState, refs: ArrayLike, W: ArrayLike | None = None
) -> ClosedLoopState:
    """``Θ̇`` of the autonomous error dynamics (batched if ``state`` is)."""
    refs = _unit_rows(refs)
    W = w_matrix(gains, refs) if W is None else np.asarray(W, dtype=float)
    return ClosedLoopState.unpack(_rhs(state.pack(), gains, refs, W), gains.m)


def v3_value(gains: ControllerGains, state: ClosedLoopState, W: ArrayLike) -> NDArray[np.float64] | float:
    W = np.asarray(W, dtype=float)
    bb = np.sum(state.b_bar**2, axis=-1)  # (..., m)
    q = state.q_bar[..., 1:]
    v = (
        np.sum((gains.rho / gains.delta) * bb, axis=-1)
        + 4.0 * np.sum(q * (q @ W.T), axis=-1)
        + np.sum(state.w_bar**2, axis=-1)
    )
    return float(v) if np.ndim(v) == 0 else v


def v3_rate(gains: ControllerGains, state: ClosedLoopState) -> NDArray[np.float64] | float:
    """Analytic ``V̇3`` along the closed loop."""
    bb = np.sum(state.b_bar**2, axis=-1)
    v = -2.0 * gains.k * np.sum(state.w_bar**2, axis=-1) - 2.0 * np.sum(gains.alpha * gains.rho / gains.delta * bb, axis=-1)
    return float(v) if np.ndim(v) == 0 else v


def _eig_sorted(W: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    lam, V = np.linalg.eigh(W)
    # right-handed eigenbasis, deterministic sign
    for j in range(3):
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]
    return lam, V


def _has_repeated(lam: NDArray[np.float64]) -> bool:
    return bool(np.min(np.diff(lam)) < EIG_GAP_TOL * max(1.0, abs(lam[-1])))


def equilibria_of(W: ArrayLike, m: int) -> list[ClosedLoopState]:
    """The eight equilibria: ``Θ1±`` first, then ``(0, ±v_j)`` for j = 1..3.

    Eigenvectors are ordered by ascending eigenvalue.  Repeated eigenvalues
    trigger a :class:`DegenerateEigenWarning`.
    """
    lam, V = _eig_sorted(np.asarray(W, dtype=float))
    if _has_repeated(lam):
        warnings.warn("W has repeated eigenvalues; saddle eigenvectors are not unique", DegenerateEigenWarning)
    zb = np.zeros((m, 3))
    zw = np.zeros(3)
    out = [
        ClosedLoopState(zb, np.array([1.0, 0, 0, 0]), zw),
        ClosedLoopState(zb, np.array([-1.0, 0, 0, 0]), zw),
    ]
    for j in range(3):
        for sign in (1.0, -1.0):
            out.append(ClosedLoopState(zb, np.concatenate([[0.0], sign * V[:, j]]), zw))
    return out


def rk4_closed_loop(
    gains: ControllerGains,
    refs: ArrayLike,
    y0: ArrayLike,
    duration: float,
    dt: float = 1e-3,
    record_every: int = 1,
    W: ArrayLike | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Fixed-step RK4 on packed ``Θ`` (any leading batch shape).

    Returns ``(times, ys)`` with ``ys`` of shape ``(n_records, *y0.shape)``;
    ``Q̄`` is renormalized after every step.
    """
    refs = _unit_rows(refs)
    W = w_matrix(gains, refs) if W is None else np.asarray(W, dtype=float)
    y = np.array(y0, dtype=float)
    m = gains.m
    qs = slice(3 * m, 3 * m + 4)
    steps = int(round(duration / dt))
    times, ys = [0.0], [y.copy()]
    for s in range(1, steps + 1):
        k1 = _rhs(y, gains, refs, W)
        k2 = _rhs(y + 0.5 * dt * k1, gains, refs, W)
        k3 = _rhs(y + 0.5 * dt * k2, gains, refs, W)
        k4 = _rhs(y + dt * k3, gains, refs, W)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y[..., qs] = quat_normalize(y[..., qs])
        if s % record_every == 0 or s == steps:
            times.append(s * dt)
            ys.append(y.copy())
    return np.array(times), np.array(ys)


def converged_to_identity(state: ClosedLoopState, att_tol: float = 1e-2, rate_tol: float = 1e-3) -> NDArray[np.bool_] | bool:
    """True where ``Q̄`` is within ``att_tol`` rad of ``±1`` and ``|ω̄| < rate_tol``."""
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    err = attitude_angle_error(state.q_bar, ident)
    ok = (err < att_tol) & (np.linalg.norm(state.w_bar, axis=-1) < rate_tol)
    return bool(ok) if np.ndim(ok) == 0 else ok


def random_states(rng: np.random.Generator, count: int, m: int, w_max: float = 1.0, b_max: float = 0.2) -> ClosedLoopState:
    """Uniform attitude, ``ω̄ ~ U[-w_max, w_max]^3``, ``b̄_i ~ U[-b_max, b_max]^3``."""
    q = quat_normalize(rng.standard_normal((count, 4)))
    w = rng.uniform(-w_max, w_max, (count, 3))
    b = rng.uniform(-b_max, b_max, (count, m, 3))
    return ClosedLoopState(b, q, w)


def sample_attraction_set(
    rng: np.random.Generator, gains: ControllerGains, W: ArrayLike, count: int, level_fraction: float = 0.999
) -> ClosedLoopState:
    """States with ``V3 < 4 λ_min(W)`` and ``q̄0 > 0``, drawn without rejection.

    A random total level below ``level_fraction * 4 λ_min`` is split among
    the attitude, rate and filter-error terms, each realized along a random
    direction.
    """
    W = np.asarray(W, dtype=float)
    m = gains.m
    lam_min = float(np.linalg.eigvalsh(W)[0])
    levels = rng.uniform(0.0, level_fraction, count) * 4.0 * lam_min
    shares = rng.dirichlet(np.ones(m + 2), count) * levels[:, None]

    def direction(shape):
        d = rng.standard_normal(shape)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    u = direction((count, 3))
    q = u * np.sqrt(shares[:, 0] / (4.0 * np.sum(u * (u @ W.T), axis=-1)))[:, None]
    q0 = np.sqrt(1.0 - np.sum(q * q, axis=-1))
    w = direction((count, 3)) * np.sqrt(shares[:, 1])[:, None]
    b = direction((count, m, 3)) * np.sqrt(shares[:, 2:] * (gains.delta / gains.rho))[..., None]
    return ClosedLoopState(b, np.concatenate([q0[:, None], q], axis=1), w)


@dataclass(frozen=True)
class ProbeResult:
    j: int
    sign: float
    v3_perturbed: float
    v3_equilibrium: float
    initial_distance: float
    final_distance: float
    max_distance: float
    escaped: bool
    final_state: ClosedLoopState


def perturbed_saddle(
    W: ArrayLike,
    m: int,
    j: int,
    eps: float,
    sign: float = 1.0,
    toward: int | None = None,
    b_bar: ArrayLike | None = None,
    w_bar: ArrayLike | None = None,
) -> ClosedLoopState:
    """``Q̄* = (0, ±v_j) ⊙ (x0, ε v_toward)`` with ``x0 = sqrt(1 - ε²)``.

    ``toward`` defaults to ``j``: rotating back along the equilibrium's own
    eigenvector tilts ``Q̄`` towards ``q̄0 != 0``, which lowers ``V3`` by
    exactly ``4 λ_j ε²`` when ``b̄* = ω̄* = 0``.
    """
    lam, V = _eig_sorted(np.asarray(W, dtype=float))
    if _has_repeated(lam):
        raise ControllerError("W has repeated eigenvalues; eigenvector choice is ambiguous")
    if not 0.0 < eps < 0.5:
        raise ControllerError("eps must lie in (0, 0.5)")
    toward = j if toward is None else toward
    base = np.concatenate([[0.0], sign * V[:, j]])
    pert = np.concatenate([[np.sqrt(1.0 - eps**2)], eps * V[:, toward]])
    q = quat_mul(base, pert)
    b = np.zeros((m, 3)) if b_bar is None else np.asarray(b_bar, dtype=float).reshape(m, 3)
    w = np.zeros(3) if w_bar is None else np.asarray(w_bar, dtype=float)
    return ClosedLoopState(b, q, w)


def _distance(y: NDArray[np.float64], y_eq: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.linalg.norm(y - y_eq, axis=-1)


def probe_saddles(
    gains: ControllerGains,
    refs: ArrayLike,
    eps: float,
    pairs: list[tuple[int, float]] | None = None,
    duration: float = 60.0,
    dt: float = 1e-3,
    radius: float = 0.1,
    **perturb_kwargs,
) -> list[ProbeResult]:
    """Perturb each saddle ``(0, sign v_j)`` and integrate all probes as a batch.

    A probe has escaped when it ends outside the ``radius`` ball around its
    saddle and farther away than it started.
    """
    refs = _unit_rows(refs)
    W = w_matrix(gains, refs)
    m = gains.m
    if pairs is None:
        pairs = [(j, s) for j in range(3) for s in (1.0, -1.0)]
    starts, eqs = [], []
    lam, V = _eig_sorted(W)
    for j, s in pairs:
        starts.append(perturbed_saddle(W, m, j, eps, s, **perturb_kwargs).pack())
        eqs.append(ClosedLoopState(np.zeros((m, 3)), np.concatenate([[0.0], s * V[:, j]]), np.zeros(3)).pack())
    y0 = np.array(starts)
    y_eq = np.array(eqs)
    _, ys = rk4_closed_loop(gains, refs, y0, duration, dt, record_every=max(1, int(round(0.1 / dt))), W=W)
    dist = _distance(ys, y_eq[None])  # (records, probes)
    results = []
    for p, (j, s) in enumerate(pairs):
        d0, d_end = float(dist[0, p]), float(dist[-1, p])
        results.append(
            ProbeResult(
                j=j,
                sign=s,
                v3_perturbed=v3_value(gains, ClosedLoopState.unpack(y0[p], m), W),
                v3_equilibrium=v3_value(gains, ClosedLoopState.unpack(y_eq[p], m), W),
                initial_distance=d0,
                final_distance=d_end,
                max_distance=float(dist[:, p].max()),
                escaped=bool(d_end > radius and d_end > d0),
                final_state=ClosedLoopState.unpack(ys[-1, p], m),
            )
        )
    return results


def instability_probe(
    gains: ControllerGains,
    refs: ArrayLike,
    j: int,
    eps: float,
    sign: float = 1.0,
    duration: float = 60.0,
    dt: float = 1e-3,
    radius: float = 0.1,
    **perturb_kwargs,
) -> ProbeResult:
    """Single-saddle version of :func:`probe_saddles`."""
    return probe_saddles(gains, refs, eps, [(j, sign)], duration, dt, radius, **perturb_kwargs)[0]
