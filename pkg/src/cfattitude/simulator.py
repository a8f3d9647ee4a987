"""Rigid-body plant, sensor synthesis and scenario runner.

The plant integrates ``Q̇ = ½ Q ⊙ (0, ω)`` and ``J ω̇ = -ω × Jω + τ`` with
classical RK4, renormalizing ``Q`` once per step.  Sensors return
``ω_m = ω + η + noise`` and ``b_i = Rᵀ r_i + noise`` (renormalized), each
vector channel updating at its own rate with zero-order hold in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .controller import (
    ControllerGains,
    DesiredTrajectory,
    control_torque,
    stabilization_filter_derivative,
    stabilization_torque,
    tracking_filter_derivative,
)
from .filters import (
    FilterDesign,
    FilterState,
    MeasurementFrame,
    estimation_errors,
    filter_derivative,
    initial_state,
    lyapunov_value,
)
from .so3 import IDENTITY_QUAT, quat_derivative, quat_normalize, quat_to_rot

TorqueFn = Callable[[float, "RigidBodyState"], NDArray[np.float64]]


class SimulationDivergenceError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class RigidBodyState:
    q: NDArray[np.float64]
    omega: NDArray[np.float64]

    @classmethod
    def create(cls, q: ArrayLike = IDENTITY_QUAT, omega: ArrayLike = (0.0, 0.0, 0.0)) -> "RigidBodyState":
        return cls(quat_normalize(q), np.asarray(omega, dtype=float))


def validate_inertia(J: ArrayLike) -> NDArray[np.float64]:
    J = np.asarray(J, dtype=float)
    if J.shape != (3, 3) or np.max(np.abs(J - J.T)) > 1e-12 or np.linalg.eigvalsh(J).min() <= 0.0:
        raise ValueError("inertia must be a symmetric positive-definite 3x3 matrix")
    return J


def body_dynamics_derivative(
    J: NDArray[np.float64], state: RigidBodyState, tau: ArrayLike, J_inv: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(Q̇, ω̇)`` for torque ``tau`` expressed in the body frame."""
    w = state.omega
    J_inv = np.linalg.inv(J) if J_inv is None else J_inv
    w_dot = J_inv @ (np.asarray(tau, dtype=float) - np.cross(w, J @ w))
    return quat_derivative(state.q, w), w_dot


def _plant_rhs(y, J, J_inv, tau):
    # scalar kernel: numpy call overhead dominates on 7-element states
    q0, q1, q2, q3, w1, w2, w3 = y
    h1 = J[0][0] * w1 + J[0][1] * w2 + J[0][2] * w3
    h2 = J[1][0] * w1 + J[1][1] * w2 + J[1][2] * w3
    h3 = J[2][0] * w1 + J[2][1] * w2 + J[2][2] * w3
    r1 = tau[0] - (w2 * h3 - w3 * h2)
    r2 = tau[1] - (w3 * h1 - w1 * h3)
    r3 = tau[2] - (w1 * h2 - w2 * h1)
    return (
        0.5 * (-q1 * w1 - q2 * w2 - q3 * w3),
        0.5 * (q0 * w1 + q2 * w3 - q3 * w2),
        0.5 * (q0 * w2 + q3 * w1 - q1 * w3),
        0.5 * (q0 * w3 + q1 * w2 - q2 * w1),
        J_inv[0][0] * r1 + J_inv[0][1] * r2 + J_inv[0][2] * r3,
        J_inv[1][0] * r1 + J_inv[1][1] * r2 + J_inv[1][2] * r3,
        J_inv[2][0] * r1 + J_inv[2][1] * r2 + J_inv[2][2] * r3,
    )


def rk4_step(
    J: NDArray[np.float64], state: RigidBodyState, tau: ArrayLike, dt: float, J_inv: NDArray[np.float64] | None = None
) -> RigidBodyState:
    """One RK4 step with ``tau`` held constant; ``Q`` renormalized afterwards."""
    if not dt > 0.0:
        raise ValueError("dt must be > 0")
    J_inv = np.linalg.inv(J) if J_inv is None else J_inv
    Jl, Jil = np.asarray(J, dtype=float).tolist(), np.asarray(J_inv, dtype=float).tolist()
    tl = np.asarray(tau, dtype=float).tolist()
    y = (*state.q.tolist(), *state.omega.tolist())
    k1 = _plant_rhs(y, Jl, Jil, tl)
    k2 = _plant_rhs([a + 0.5 * dt * b for a, b in zip(y, k1)], Jl, Jil, tl)
    k3 = _plant_rhs([a + 0.5 * dt * b for a, b in zip(y, k2)], Jl, Jil, tl)
    k4 = _plant_rhs([a + dt * b for a, b in zip(y, k3)], Jl, Jil, tl)
    out = np.array([a + dt / 6.0 * (b + 2 * c + 2 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)])
    if not math.isfinite(out.sum()):
        raise SimulationDivergenceError("non-finite plant state", t=float("nan"))
    return RigidBodyState(out[:4] / np.linalg.norm(out[:4]), out[4:])


def body_vectors(q: ArrayLike, refs: ArrayLike) -> NDArray[np.float64]:
    """Rows ``Rᵀ(Q) r_i``."""
    return np.atleast_2d(np.asarray(refs, dtype=float)) @ quat_to_rot(q)


@dataclass(frozen=True)
class SensorModel:
    """Gyro bias/noise and per-vector noise and update rate.

    ``sigma_vectors[i]`` / ``vector_rates[i]`` apply to reference ``i``; the
    default pairs an accelerometer (100 Hz) with a magnetometer (10 Hz).
    ``bias_ramp`` (rad/s^2) makes the bias drift linearly; zero by default.
    """

    bias: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    sigma_gyro: float = 0.0
    sigma_vectors: tuple[float, ...] = (0.0, 0.0)
    gyro_rate: float = 100.0
    vector_rates: tuple[float, ...] = (100.0, 10.0)
    seed: int = 0
    bias_ramp: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.sigma_gyro < 0 or any(s < 0 for s in self.sigma_vectors):
            raise ValueError("noise standard deviations must be >= 0")
        if len(self.sigma_vectors) != len(self.vector_rates):
            raise ValueError("sigma_vectors and vector_rates must have the same length")

    def bias_at(self, t: float) -> NDArray[np.float64]:
        return np.asarray(self.bias, dtype=float) + np.asarray(self.bias_ramp, dtype=float) * t


class Sensor:
    """Stateful measurement channel (RNG stream and held vector samples)."""

    def __init__(self, model: SensorModel, refs: ArrayLike):
        self.model = model
        self.refs = np.atleast_2d(np.asarray(refs, dtype=float))
        self.refs = self.refs / np.linalg.norm(self.refs, axis=1, keepdims=True)
        if len(model.sigma_vectors) != self.refs.shape[0]:
            raise ValueError("sensor model needs one noise level per reference vector")
        self.rng = np.random.default_rng(model.seed)
        self._held: list[NDArray[np.float64] | None] = [None] * self.refs.shape[0]
        self._next_update = [0.0] * self.refs.shape[0]

    def sense(self, state: RigidBodyState, t: float) -> MeasurementFrame:
        m = self.model
        omega_m = state.omega + m.bias_at(t)
        if m.sigma_gyro > 0:
            omega_m = omega_m + m.sigma_gyro * self.rng.standard_normal(3)
        b_true = body_vectors(state.q, self.refs)
        b = np.empty_like(b_true)
        for i, (sigma, rate) in enumerate(zip(m.sigma_vectors, m.vector_rates)):
            if self._held[i] is None or t >= self._next_update[i] - 1e-9:
                v = b_true[i]
                if sigma > 0:
                    v = v + sigma * self.rng.standard_normal(3)
                self._held[i] = v / np.linalg.norm(v)
                self._next_update[i] = t + 1.0 / rate
            b[i] = self._held[i]
        return MeasurementFrame(float(t), b, omega_m)


def sense(state: RigidBodyState, refs: ArrayLike, sensor: SensorModel, t: float) -> MeasurementFrame:
    """Stateless single-shot measurement (fresh RNG stream from ``sensor.seed``)."""
    return Sensor(sensor, refs).sense(state, t)


class Observer(Protocol):
    """Anything that consumes measurements during a scenario run."""

    def columns(self) -> list[str]: ...

    def update(self, meas: MeasurementFrame, dt: float) -> None: ...

    def row(self) -> list[float]: ...


class Controller(Protocol):
    def columns(self) -> list[str]: ...

    def update(self, meas: MeasurementFrame, dt: float) -> NDArray[np.float64]: ...

    def row(self) -> list[float]: ...


CONTROL_LAWS = ("stabilization", "tracking", "raw")


class SampledController:
    """Regulation to ``R_d = I`` run at a fixed sample rate.

    ``law`` selects the torque: ``"stabilization"`` is the inertia-free
    regulation torque fed by the normalized filter outputs, ``"tracking"``
    the full torque with inertia feedforward and ``ω_d = 0``, and ``"raw"``
    the stabilization torque fed directly with the measured directions
    (the filter still runs so logs keep one schema).  The filter is
    advanced with forward Euler after the torque is computed.
    """

    def __init__(self, gains: ControllerGains, refs: ArrayLike, J: ArrayLike, law: str = "stabilization"):
        if law not in CONTROL_LAWS:
            raise ValueError(f"unknown control law {law!r}; expected one of {CONTROL_LAWS}")
        self.gains = gains
        self.refs = np.atleast_2d(np.asarray(refs, dtype=float))
        self.refs = self.refs / np.linalg.norm(self.refs, axis=1, keepdims=True)
        self.J = np.asarray(J, dtype=float)
        self.law = law
        self.b_hat: NDArray[np.float64] | None = None

    def columns(self) -> list[str]:
        return [f"ctl_bhat{i + 1}_{a}" for i in range(self.refs.shape[0]) for a in "xyz"]

    def row(self) -> list[float]:
        if self.b_hat is None:
            return [float("nan")] * (3 * self.refs.shape[0])
        return self.normalized_estimates().ravel().tolist()

    def normalized_estimates(self) -> NDArray[np.float64]:
        return self.b_hat / np.linalg.norm(self.b_hat, axis=1, keepdims=True)

    def update(self, meas: MeasurementFrame, dt: float) -> NDArray[np.float64]:
        if self.b_hat is None:
            self.b_hat = meas.b.copy()
        w = meas.omega_m
        if self.law == "raw":
            tau = stabilization_torque(self.gains, w, self.refs, meas.b)
        elif self.law == "tracking":
            zero = np.zeros(3)
            tau = control_torque(self.gains, self.J, w, zero, zero, self.refs, self.normalized_estimates())
        else:
            tau = stabilization_torque(self.gains, w, self.refs, self.normalized_estimates())
        self.b_hat = self.b_hat + dt * stabilization_filter_derivative(self.gains, self.b_hat, meas.b, w, self.refs)
        if not np.all(np.isfinite(self.b_hat)):
            raise SimulationDivergenceError("non-finite controller filter state", t=meas.t)
        return tau


@dataclass
class ScenarioConfig:
    duration: float
    dt: float = 1e-3
    refs: NDArray[np.float64] = field(default_factory=lambda: np.array([[0.0, 0.0, 1.0], [0.434, -0.04, 0.899]]))
    J: NDArray[np.float64] = field(default_factory=lambda: np.diag([0.0082, 0.0082, 0.0149]))
    initial: RigidBodyState = field(default_factory=RigidBodyState.create)
    sensor: SensorModel = field(default_factory=SensorModel)
    torque: TorqueFn | None = None
    controller: Controller | None = None
    control_rate: float | None = None

    def validate(self) -> None:
        if not (self.duration > 0 and self.dt > 0):
            raise ValueError("duration and dt must be positive")
        validate_inertia(self.J)
        rates = [self.sensor.gyro_rate, *self.sensor.vector_rates]
        if self.control_rate is not None:
            rates.append(self.control_rate)
        for r in rates:
            ratio = 1.0 / (r * self.dt)
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(f"plant dt {self.dt} does not divide the {r} Hz sample period")


@dataclass
class TrajectoryLog:
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def as_array(self) -> NDArray[np.float64]:
        return np.array(self.rows, dtype=float).reshape(-1, len(self.columns))

    def column(self, name: str) -> NDArray[np.float64]:
        return self.as_array()[:, self.columns.index(name)]

    def block(self, prefix: str, names: Sequence[str]) -> NDArray[np.float64]:
        idx = [self.columns.index(prefix + n) for n in names]
        return self.as_array()[:, idx]


def truth_columns(m: int) -> list[str]:
    cols = ["t", "q0", "q1", "q2", "q3", "wx", "wy", "wz"]
    for i in range(m):
        cols += [f"b{i + 1}_{a}" for a in "xyz"]
    cols += ["wm_x", "wm_y", "wm_z", "tau_x", "tau_y", "tau_z"]
    return cols


def run_scenario(config: ScenarioConfig, observers: Sequence[Observer] = ()) -> TrajectoryLog:
    """Simulate the plant and feed sampled measurements to observers.

    Rows are logged at the gyro rate: time, true attitude and rate, the
    measured directions and gyro, the torque applied over the next
    interval, then each observer's (and the controller's) columns as they
    were *before* consuming that sample.

    Raises:
        SimulationDivergenceError: with the time of the failing step.
    """
    config.validate()
    J = np.asarray(config.J, dtype=float)
    J_inv = np.linalg.inv(J)
    refs = np.atleast_2d(config.refs)
    sensor = Sensor(config.sensor, refs)
    m = refs.shape[0]

    sample_every = int(round(1.0 / (config.sensor.gyro_rate * config.dt)))
    sample_dt = sample_every * config.dt
    ctrl_every = sample_every if config.control_rate is None else int(round(1.0 / (config.control_rate * config.dt)))
    ctrl_dt = ctrl_every * config.dt

    columns = truth_columns(m)
    if config.controller is not None:
        columns += config.controller.columns()
    for obs in observers:
        columns += obs.columns()
    log = TrajectoryLog(columns)

    state = config.initial
    first = Sensor(config.sensor, refs).sense(state, 0.0)
    for obs in observers:
        # observers that need an initial sample are primed with the t=0 one
        if hasattr(obs, "start"):
            obs.start(first)
    tau = np.zeros(3)
    steps = int(round(config.duration / config.dt))
    meas = None
    for k in range(steps + 1):
        t = k * config.dt
        sample = k % sample_every == 0
        if sample or (config.controller is not None and k % ctrl_every == 0):
            meas = sensor.sense(state, t)
        if config.controller is not None and k % ctrl_every == 0:
            ctrl_row = config.controller.row()
            tau = config.controller.update(meas, ctrl_dt)
        elif config.torque is not None and config.controller is None:
            tau = np.asarray(config.torque(t, state), dtype=float)
        if sample:
            row = [t, *state.q, *state.omega, *meas.b.ravel(), *meas.omega_m, *tau]
            if config.controller is not None:
                row += ctrl_row
            for obs in observers:
                row += obs.row()
                obs.update(meas, sample_dt)
            log.rows.append(row)
        if k == steps:
            break
        try:
            state = rk4_step(J, state, tau, config.dt, J_inv)
        except SimulationDivergenceError as exc:
            raise SimulationDivergenceError(str(exc), t) from None
    return log


def sinusoidal_rate_torque(
    J: ArrayLike, amplitude: float = 0.5, freqs: ArrayLike = (0.7, 0.5, 0.3), phases: ArrayLike = (0.0, 1.0, 2.0)
) -> tuple[TorqueFn, Callable[[float], NDArray[np.float64]]]:
    """Open-loop computed torque making ``ω(t) ≈ amplitude * sin(freqs t + phases)``.

    Returns the torque function and the reference rate; start the plant at
    ``omega_ref(0)``.
    """
    J = np.asarray(J, dtype=float)
    w = np.asarray(freqs, dtype=float)
    p = np.asarray(phases, dtype=float)

    def omega_ref(t: float) -> NDArray[np.float64]:
        return amplitude * np.sin(w * t + p)

    def torque(t: float, state: RigidBodyState) -> NDArray[np.float64]:
        w_dot = amplitude * w * np.cos(w * t + p)
        om = state.omega
        h = J @ om
        gyro = np.array([om[1] * h[2] - om[2] * h[1], om[2] * h[0] - om[0] * h[2], om[0] * h[1] - om[1] * h[0]])
        return J @ w_dot + gyro

    return torque, omega_ref


@dataclass
class TrackingRun:
    times: NDArray[np.float64]
    q: NDArray[np.float64]
    omega: NDArray[np.float64]
    q_d: NDArray[np.float64]
    omega_d: NDArray[np.float64]
    b_hat: NDArray[np.float64]
    tau: NDArray[np.float64]


def simulate_tracking(
    gains: ControllerGains,
    J: ArrayLike,
    refs: ArrayLike,
    desired: DesiredTrajectory,
    initial: RigidBodyState,
    b_hat0: ArrayLike,
    duration: float,
    dt: float = 1e-3,
    record_every: int = 1,
) -> TrackingRun:
    """Continuous-time plant + tracking filter + torque law, jointly RK4.

    Noise-free and bias-free; the filter sees exact ``b_i`` and ``ω``.  Used
    to validate the error-coordinate model against the plant.
    """
    J = validate_inertia(J)
    J_inv = np.linalg.inv(J)
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    refs = refs / np.linalg.norm(refs, axis=1, keepdims=True)
    m = refs.shape[0]

    def f(t, y):
        q, w, qd, bh = y[0:4], y[4:7], y[7:11], y[11:].reshape(m, 3)
        wd, wd_dot = desired.omega_d(t), desired.omega_d_dot(t)
        b = refs @ quat_to_rot(q)
        b_des = refs @ quat_to_rot(qd)
        tau = control_torque(gains, J, w, wd, wd_dot, b_des, bh)
        w_dot = J_inv @ (tau - np.cross(w, J @ w))
        bh_dot = tracking_filter_derivative(gains, bh, b, w, b_des, wd)
        return np.concatenate([quat_derivative(q, w), w_dot, quat_derivative(qd, wd), bh_dot.ravel()]), tau

    y = np.concatenate([initial.q, initial.omega, desired.q_d0, np.asarray(b_hat0, float).ravel()])
    steps = int(round(duration / dt))
    rec: list[tuple[float, NDArray[np.float64], NDArray[np.float64]]] = []
    for s in range(steps + 1):
        t = s * dt
        k1, tau = f(t, y)
        if s % record_every == 0 or s == steps:
            rec.append((t, y.copy(), tau))
        if s == steps:
            break
        k2, _ = f(t + dt / 2, y + dt / 2 * k1)
        k3, _ = f(t + dt / 2, y + dt / 2 * k2)
        k4, _ = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        y[0:4] = quat_normalize(y[0:4])
        y[7:11] = quat_normalize(y[7:11])
    times = np.array([r[0] for r in rec])
    Y = np.array([r[1] for r in rec])
    return TrackingRun(
        times=times,
        q=Y[:, 0:4],
        omega=Y[:, 4:7],
        q_d=Y[:, 7:11],
        omega_d=np.array([desired.omega_d(t) for t in times]),
        b_hat=Y[:, 11:].reshape(-1, m, 3),
        tau=np.array([r[2] for r in rec]),
    )


@dataclass
class EstimationRun:
    times: NDArray[np.float64]
    q: NDArray[np.float64]
    b_tilde: NDArray[np.float64]  # (steps, m, 3)
    eta_tilde: NDArray[np.float64]
    V: NDArray[np.float64]
    final: FilterState


def simulate_estimation_continuous(
    design: FilterDesign,
    omega: Callable[[float], NDArray[np.float64]],
    q0: ArrayLike,
    eta: ArrayLike,
    duration: float,
    dt: float = 1e-3,
    state0: FilterState | None = None,
    record_every: int = 1,
) -> EstimationRun:
    """Joint RK4 of true attitude and filter with exact, noise-free measurements.

    Every RK4 stage sees ``b_i = Rᵀ(Q) r_i`` and ``ω_m = ω + η`` at the stage
    time, so the filter follows its continuous-time trajectory up to RK4
    error (no sample-and-hold).
    """
    eta = np.asarray(eta, dtype=float)
    refs = design.refs
    q = quat_normalize(q0)
    s = initial_state(design, refs @ quat_to_rot(q)) if state0 is None else state0

    def f(t, qq, ss):
        meas = MeasurementFrame(t, refs @ quat_to_rot(qq), omega(t) + eta)
        return quat_derivative(qq, omega(t)), filter_derivative(design, ss, meas)

    steps = int(round(duration / dt))
    times, qs, bt, et, vs = [], [], [], [], []
    for k in range(steps + 1):
        t = k * dt
        if k % record_every == 0 or k == steps:
            b = refs @ quat_to_rot(q)
            b_tilde, eta_tilde = estimation_errors(s, b, eta)
            times.append(t)
            qs.append(q)
            bt.append(b_tilde)
            et.append(eta_tilde)
            vs.append(lyapunov_value(design, s, b, eta))
        if k == steps:
            break
        k1q, k1s = f(t, q, s)
        k2q, k2s = f(t + dt / 2, q + dt / 2 * k1q, s.axpy(dt / 2, k1s))
        k3q, k3s = f(t + dt / 2, q + dt / 2 * k2q, s.axpy(dt / 2, k2s))
        k4q, k4s = f(t + dt, q + dt * k3q, s.axpy(dt, k3s))
        q = quat_normalize(q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q))
        s = FilterState(
            s.x + dt / 6 * (k1s.x + 2 * k2s.x + 2 * k3s.x + k4s.x),
            s.b_hat + dt / 6 * (k1s.b_hat + 2 * k2s.b_hat + 2 * k3s.b_hat + k4s.b_hat),
            s.eta_hat + dt / 6 * (k1s.eta_hat + 2 * k2s.eta_hat + 2 * k3s.eta_hat + k4s.eta_hat),
        )
        if not s.is_finite():
            raise SimulationDivergenceError("non-finite filter state", t=t + dt)
    return EstimationRun(np.array(times), np.array(qs), np.array(bt), np.array(et), np.array(vs), s)
