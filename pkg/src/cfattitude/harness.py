"""Scenario configuration, IMU log replay, sweeps and metrics.

Configuration is a flat INI file with sections ``scenario``, ``filter``,
``controller``, ``sensors``, ``references`` and ``sweep``; every key is
optional and falls back to the defaults below.  Vectors are written as
comma-separated numbers.
"""

from __future__ import annotations

import configparser
import copy
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .controller import (
    PAPER_GAINS,
    SWEEP_GAINS,
    ClosedLoopState,
    ControllerGains,
    converged_to_identity,
    random_states,
    rk4_closed_loop,
    w_matrix,
)
from .filters import (
    FilterDesign,
    FilterState,
    MeasurementFrame,
    binomial_design,
    initial_state,
    integrate_filter_step,
    lyapunov_value,
    make_filter_design,
    state_columns,
    state_row,
)
from .hurwitz import binomial_gains, in_hbar, is_hurwitz
from .simulator import (
    CONTROL_LAWS,
    RigidBodyState,
    SampledController,
    ScenarioConfig,
    SensorModel,
    TrajectoryLog,
    run_scenario,
    sinusoidal_rate_torque,
)
from .so3 import GimbalLockError, attitude_angle_error, euler_to_quat, quat_to_euler, quat_to_rot, random_quaternion
from .triad import DegenerateTriadError, triad_quaternion

IMU_COLUMNS = ("t", "ax", "ay", "az", "mx", "my", "mz", "wx", "wy", "wz")
FLOAT_FMT = "%.17g"
MONOTONE_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 1)."""


class ImuParseError(ValueError):
    """Malformed IMU log (exit code 3)."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# --- configuration ----------------------------------------------------------


@dataclass
class ScenarioSection:
    duration: float = 60.0
    dt: float = 1e-3
    seed: int = 0
    initial: str = "euler"  # euler | random
    initial_euler_deg: tuple[float, float, float] = (-18.478, 41.192, 2.847)
    initial_omega: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inertia: tuple[float, float, float] = (0.0082, 0.0082, 0.0149)
    omega_amplitude: float = 0.5
    omega_freqs: tuple[float, float, float] = (0.7, 0.5, 0.3)
    omega_phases: tuple[float, float, float] = (0.0, 1.0, 2.0)
    initial_omega_max: float = 1.0


@dataclass
class FilterSection:
    variant: str = "both"  # direct | passive | both
    order: int = 1
    alpha: float = 1.0
    gains: tuple[float, ...] | None = None
    bias_gain: float = 0.003
    integrator: str = "euler"


@dataclass
class ControllerSection:
    rho: tuple[float, ...] = tuple(PAPER_GAINS.rho)
    k: float = PAPER_GAINS.k
    alpha: tuple[float, ...] = tuple(PAPER_GAINS.alpha)
    delta: tuple[float, ...] = tuple(PAPER_GAINS.delta)
    law: str = "stabilization"
    rate: float = 100.0
    settle_deg: float = 1.0

    def gains(self) -> ControllerGains:
        return ControllerGains.create(self.rho, self.k, self.alpha, self.delta)


@dataclass
class SensorSection:
    bias: tuple[float, float, float] = (0.02, -0.01, 0.03)
    sigma_gyro: float = 0.0
    sigma_acc: float = 0.0
    sigma_mag: float = 0.0
    gyro_rate: float = 100.0
    acc_rate: float = 100.0
    mag_rate: float = 10.0
    bias_ramp: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class SweepSection:
    count: int = 100
    model: str = "closed_loop"  # closed_loop | plant
    duration: float = 30.0
    dt: float = 1e-3
    rho: tuple[float, ...] = tuple(SWEEP_GAINS.rho)
    k: float = SWEEP_GAINS.k
    alpha: tuple[float, ...] = tuple(SWEEP_GAINS.alpha)
    delta: tuple[float, ...] = tuple(SWEEP_GAINS.delta)
    w_max: float = 1.0
    b_max: float = 0.2
    att_tol: float = 1e-2
    rate_tol: float = 1e-3
    jobs: int = 1

    def gains(self) -> ControllerGains:
        return ControllerGains.create(self.rho, self.k, self.alpha, self.delta)


@dataclass
class HarnessConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    filter: FilterSection = field(default_factory=FilterSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    sensors: SensorSection = field(default_factory=SensorSection)
    refs: NDArray[np.float64] = field(default_factory=lambda: np.array([[0.0, 0.0, 1.0], [0.434, -0.04, 0.899]]))
    sweep: SweepSection = field(default_factory=SweepSection)

    def inertia(self) -> NDArray[np.float64]:
        return np.diag(np.asarray(self.scenario.inertia, dtype=float))


def _parse_value(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or default is None:
            vals = tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
            if isinstance(default, tuple) and len(default) == 3 and key not in ("rho", "alpha", "delta", "gains") and len(vals) != 3:
                raise ValueError(f"expected 3 values, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("non-finite value")
            return vals
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _fill(section_obj, items: Iterable[tuple[str, str]], name: str):
    known = {f: getattr(section_obj, f) for f in section_obj.__dataclass_fields__}
    updates = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        updates[key] = _parse_value(raw, known[key], key)
    return replace(section_obj, **updates)


def parse_config_text(text: str) -> HarnessConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = HarnessConfig()
    sections = {"scenario", "filter", "controller", "sensors", "references", "sweep"}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
    for name in ("scenario", "filter", "controller", "sensors", "sweep"):
        if parser.has_section(name):
            setattr(cfg, name, _fill(getattr(cfg, name), parser.items(name), name))
    if parser.has_section("references"):
        keys = sorted(parser.options("references"), key=lambda k: (len(k), k))
        refs = [_parse_value(parser.get("references", k), (0.0, 0.0, 0.0), k) for k in keys]
        cfg.refs = np.array(refs, dtype=float)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path | None) -> HarnessConfig:
    """Read an INI file (``None`` gives the defaults).

    Raises:
        ConfigError: on unknown sections/keys or invalid values.
        OSError: if the file cannot be read.
    """
    if path is None:
        cfg = HarnessConfig()
        validate_config(cfg)
        return cfg
    return parse_config_text(Path(path).read_text())


def validate_config(cfg: HarnessConfig) -> None:
    s, f, c, sw = cfg.scenario, cfg.filter, cfg.controller, cfg.sweep
    if s.duration <= 0 or s.dt <= 0:
        raise ConfigError("duration and dt must be positive")
    if s.initial not in ("euler", "random"):
        raise ConfigError(f"initial must be 'euler' or 'random', got {s.initial!r}")
    if f.variant not in ("direct", "passive", "both"):
        raise ConfigError(f"unknown filter variant {f.variant!r}")
    if f.order < 1:
        raise ConfigError("filter order must be >= 1")
    if f.integrator not in ("euler", "rk4"):
        raise ConfigError(f"unknown integrator {f.integrator!r}")
    if c.law not in CONTROL_LAWS:
        raise ConfigError(f"unknown control law {c.law!r}")
    if sw.model not in ("closed_loop", "plant"):
        raise ConfigError(f"unknown sweep model {sw.model!r}")
    if sw.count < 1:
        raise ConfigError("sweep count must be >= 1")
    if cfg.refs.ndim != 2 or cfg.refs.shape[1] != 3 or cfg.refs.shape[0] < 2:
        raise ConfigError("need at least two 3-D reference vectors")
    if any(min(x) <= 0 for x in (s.inertia,)):
        raise ConfigError("inertia entries must be positive")
    if min(cfg.sensors.sigma_gyro, cfg.sensors.sigma_acc, cfg.sensors.sigma_mag) < 0:
        raise ConfigError("noise levels must be >= 0")


def filter_gains(cfg: HarnessConfig, order: int | None = None) -> NDArray[np.float64]:
    n = cfg.filter.order if order is None else order
    if cfg.filter.gains is not None:
        g = np.asarray(cfg.filter.gains, dtype=float)
        if g.size != n:
            raise ConfigError(f"{g.size} filter gains given for order {n}")
        return g
    return binomial_gains(n, cfg.filter.alpha)


def build_design(cfg: HarnessConfig, variant: str) -> FilterDesign:
    return make_filter_design(variant, cfg.filter.order, filter_gains(cfg), cfg.refs, bias_gain=cfg.filter.bias_gain)


def selected_variants(cfg: HarnessConfig) -> list[str]:
    return ["direct", "passive"] if cfg.filter.variant == "both" else [cfg.filter.variant]


def sensor_model(cfg: HarnessConfig, seed: int | None = None) -> SensorModel:
    s = cfg.sensors
    m = cfg.refs.shape[0]
    sig = (s.sigma_acc, s.sigma_mag) + (s.sigma_mag,) * (m - 2)
    rates = (s.acc_rate, s.mag_rate) + (s.mag_rate,) * (m - 2)
    return SensorModel(
        bias=np.asarray(s.bias, dtype=float),
        sigma_gyro=s.sigma_gyro,
        sigma_vectors=sig,
        gyro_rate=s.gyro_rate,
        vector_rates=rates,
        seed=cfg.scenario.seed if seed is None else seed,
        bias_ramp=np.asarray(s.bias_ramp, dtype=float),
    )


def random_initial(seed: int, omega_max: float) -> RigidBodyState:
    """Uniform attitude and ``ω ~ U[-omega_max, omega_max]^3`` from ``seed``."""
    rng = np.random.default_rng(seed)
    return RigidBodyState.create(random_quaternion(rng), rng.uniform(-omega_max, omega_max, 3))


def initial_body_state(cfg: HarnessConfig) -> RigidBodyState:
    s = cfg.scenario
    if s.initial == "random":
        return random_initial(s.seed, s.initial_omega_max)
    return RigidBodyState.create(euler_to_quat(*s.initial_euler_deg), s.initial_omega)


# --- IMU logs ---------------------------------------------------------------


@dataclass(frozen=True)
class ImuLogRecord:
    t: float
    a: NDArray[np.float64]  # normalized gravity direction
    m: NDArray[np.float64]  # normalized
    w: NDArray[np.float64]

    def frame(self) -> MeasurementFrame:
        return MeasurementFrame(self.t, np.stack([self.a, self.m]), self.w)


def _unit(v: NDArray[np.float64], what: str, line: int) -> NDArray[np.float64]:
    n = float(np.linalg.norm(v))
    if n <= 0.0:
        raise ImuParseError(f"zero-length {what} vector", line)
    return v / n


def iter_imu_csv(path: str | Path) -> Iterator[ImuLogRecord]:
    """Stream validated records; line numbers are 1-based and count the header.

    The accelerometer is treated as a gravity-direction sensor and
    normalized here, as is the magnetometer.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ImuParseError("empty file", 1) from None
        if tuple(h.strip() for h in header) != IMU_COLUMNS:
            raise ImuParseError(f"header must be {','.join(IMU_COLUMNS)}", 1)
        t_prev = -math.inf
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(IMU_COLUMNS):
                raise ImuParseError(f"expected {len(IMU_COLUMNS)} fields, got {len(row)}", line)
            try:
                vals = np.array([float(c) for c in row])
            except ValueError:
                raise ImuParseError(f"non-numeric field in {row!r}", line) from None
            if not np.all(np.isfinite(vals)):
                raise ImuParseError("non-finite value", line)
            if vals[0] <= t_prev:
                raise ImuParseError(f"time {vals[0]} not strictly increasing", line)
            t_prev = vals[0]
            yield ImuLogRecord(float(vals[0]), _unit(vals[1:4], "accelerometer", line), _unit(vals[4:7], "magnetometer", line), vals[7:10])


def parse_imu_csv(path: str | Path) -> list[ImuLogRecord]:
    return list(iter_imu_csv(path))


def write_imu_csv(path: str | Path, t: ArrayLike, a: ArrayLike, m: ArrayLike, w: ArrayLike) -> None:
    data = np.column_stack([np.asarray(t, float), np.asarray(a, float), np.asarray(m, float), np.asarray(w, float)])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(IMU_COLUMNS), comments="")


# --- estimation -------------------------------------------------------------


class EstimatorObserver:
    """Filter + TRIAD on the first two filtered directions.

    Shared by simulation and replay so both go through one code path.
    """

    def __init__(self, design: FilterDesign, integrator: str = "euler"):
        self.design = design
        self.integrator = integrator
        self.state: FilterState | None = None
        self.triad_failures = 0

    def columns(self) -> list[str]:
        return state_columns(self.design) + ["qhat0", "qhat1", "qhat2", "qhat3"]

    def attitude(self) -> NDArray[np.float64]:
        b = self.state.b_hat[:2] / np.linalg.norm(self.state.b_hat[:2], axis=1, keepdims=True)
        r = self.design.refs
        try:
            # b_hat_i estimates R^T r_i; TRIAD gives body->reference, i.e. R itself
            return triad_quaternion(b[0], b[1], r[0], r[1])
        except DegenerateTriadError:
            self.triad_failures += 1
            return np.full(4, np.nan)

    def row(self) -> list[float]:
        if self.state is None:
            return [float("nan")] * len(self.columns())
        return state_row(self.state) + self.attitude().tolist()

    def start(self, meas: MeasurementFrame) -> None:
        self.state = initial_state(self.design, meas.b)

    def update(self, meas: MeasurementFrame, dt: float) -> None:
        if self.state is None:
            self.start(meas)
        self.state = integrate_filter_step(self.design, self.state, meas, dt, method=self.integrator)


def replay(frames: Sequence[MeasurementFrame], observer: EstimatorObserver) -> TrajectoryLog:
    """Run an observer over logged frames; the last frame is logged, not integrated."""
    cols = ["t", *[f"b{i + 1}_{a}" for i in range(observer.design.m) for a in "xyz"], "wm_x", "wm_y", "wm_z"]
    log = TrajectoryLog(cols + observer.columns())
    if frames:
        observer.start(frames[0])
    for k, meas in enumerate(frames):
        log.rows.append([meas.t, *meas.b.ravel(), *meas.omega_m, *observer.row()])
        if k + 1 < len(frames):
            observer.update(meas, frames[k + 1].t - meas.t)
    return log


@dataclass
class RunMetrics:
    duration: float
    final_attitude_error_deg: float | None = None
    peak_attitude_error_deg: float | None = None
    final_eta_error: float | None = None
    max_eta_error: float | None = None
    mean_eta_error: float | None = None
    final_b_error: float | None = None
    settling_time: float | None = None
    settled: bool | None = None
    v_violations: int | None = None
    triad_failures: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True)


def settling_time(t: ArrayLike, err: ArrayLike, threshold: float) -> float | None:
    """First time after which ``err`` stays below ``threshold`` (``None`` if never)."""
    t = np.asarray(t, dtype=float)
    bad = ~(np.asarray(err, dtype=float) < threshold)
    if bad[-1]:
        return None
    if not bad.any():
        return float(t[0])
    return float(t[np.nonzero(bad)[0][-1] + 1])


def monotonicity_violations(v: ArrayLike, tol: float = MONOTONE_TOL) -> int:
    """Number of steps where ``v`` rises by more than ``tol * v``."""
    v = np.asarray(v, dtype=float)
    return int(np.sum(np.diff(v) > tol * np.maximum(np.abs(v[:-1]), np.finfo(float).tiny)))


@dataclass
class EstimateResult:
    variant: str
    log: TrajectoryLog
    metrics: RunMetrics


def _filter_state_at(design: FilterDesign, arr: NDArray[np.float64], cols: list[str], k: int) -> FilterState:
    m, xd = design.m, design.x_dim
    i0 = cols.index("bhat1_x")
    b_hat = arr[k, i0 : i0 + 3 * m].reshape(m, 3)
    eta = arr[k, i0 + 3 * m : i0 + 3 * m + 3]
    x = arr[k, i0 + 3 * m + 3 : i0 + 3 * m + 3 + m * xd].reshape(m, xd)
    return FilterState(x, b_hat, eta)


def add_truth_errors(log: TrajectoryLog, design: FilterDesign, eta_true: NDArray[np.float64]) -> tuple[TrajectoryLog, RunMetrics]:
    """Append attitude, direction and bias errors plus ``V`` to a simulated log."""
    arr = log.as_array()
    t = arr[:, 0]
    q = arr[:, 1:5]
    qhat = log.block("", ["qhat0", "qhat1", "qhat2", "qhat3"])
    att = np.degrees(attitude_angle_error(qhat, q))
    b_true = np.einsum("ij,njk->nik", design.refs, quat_to_rot(q))  # rows R^T r_i
    bh = log.block("", [f"bhat{i + 1}_{a}" for i in range(design.m) for a in "xyz"]).reshape(-1, design.m, 3)
    b_err = np.linalg.norm(b_true - bh, axis=2)
    eta_err = np.linalg.norm(eta_true - log.block("", ["etahat_x", "etahat_y", "etahat_z"]), axis=1)
    v = np.array([lyapunov_value(design, _filter_state_at(design, arr, log.columns, k), b_true[k], eta_true) for k in range(len(t))])
    extra_cols = ["att_err_deg", *[f"b{i + 1}_err" for i in range(design.m)], "eta_err", "V"]
    out = TrajectoryLog(log.columns + extra_cols, np.column_stack([arr, att, b_err, eta_err, v]).tolist())
    metrics = RunMetrics(
        duration=float(t[-1] - t[0]),
        final_attitude_error_deg=float(att[-1]),
        peak_attitude_error_deg=float(np.nanmax(att)),
        final_eta_error=float(eta_err[-1]),
        max_eta_error=float(eta_err.max()),
        mean_eta_error=float(eta_err.mean()),
        final_b_error=float(b_err[-1].max()),
        settling_time=settling_time(t, att, 1.0),
        v_violations=monotonicity_violations(v),
    )
    metrics.settled = metrics.settling_time is not None
    return out, metrics


def simulate_estimation(cfg: HarnessConfig, variant: str) -> EstimateResult:
    """Open-loop sinusoidal-rate scenario with the filter riding along."""
    design = build_design(cfg, variant)
    J = cfg.inertia()
    s = cfg.scenario
    torque, omega_ref = sinusoidal_rate_torque(J, s.omega_amplitude, s.omega_freqs, s.omega_phases)
    q0 = initial_body_state(cfg).q
    scen = ScenarioConfig(
        duration=s.duration,
        dt=s.dt,
        refs=cfg.refs,
        J=J,
        initial=RigidBodyState.create(q0, omega_ref(0.0)),
        sensor=sensor_model(cfg),
        torque=torque,
    )
    obs = EstimatorObserver(design, cfg.filter.integrator)
    log = run_scenario(scen, [obs])
    log, metrics = add_truth_errors(log, design, np.asarray(cfg.sensors.bias, dtype=float))
    metrics.triad_failures = obs.triad_failures
    return EstimateResult(variant, log, metrics)


def replay_estimation(cfg: HarnessConfig, variant: str, records: Sequence[ImuLogRecord]) -> EstimateResult:
    """Replay a logged IMU stream; metrics are internal-consistency only."""
    if cfg.refs.shape[0] != 2:
        raise ConfigError("replay needs exactly two reference vectors (accelerometer, magnetometer)")
    design = build_design(cfg, variant)
    obs = EstimatorObserver(design, cfg.filter.integrator)
    log = replay([r.frame() for r in records], obs)
    arr = log.as_array()
    meas = arr[:, 1:7].reshape(-1, 2, 3)
    bh = log.block("", ["bhat1_x", "bhat1_y", "bhat1_z", "bhat2_x", "bhat2_y", "bhat2_z"]).reshape(-1, 2, 3)
    resid = np.linalg.norm(meas - bh, axis=2).max(axis=1)
    eta = log.block("", ["etahat_x", "etahat_y", "etahat_z"])
    t = arr[:, 0]
    metrics = RunMetrics(
        duration=float(t[-1] - t[0]) if len(t) else 0.0,
        triad_failures=obs.triad_failures,
        extra={
            "final_measurement_residual": float(resid[-1]),
            "max_measurement_residual": float(resid.max()),
            "final_eta_hat": eta[-1].tolist(),
            "bhat_norm_range": [float(np.linalg.norm(bh, axis=2).min()), float(np.linalg.norm(bh, axis=2).max())],
        },
    )
    return EstimateResult(variant, log, metrics)


def cmd_estimate(cfg: HarnessConfig, input_path: str | Path | None = None) -> list[EstimateResult]:
    records = parse_imu_csv(input_path) if input_path is not None else None
    results = []
    for variant in selected_variants(cfg):
        if records is None:
            results.append(simulate_estimation(cfg, variant))
        else:
            results.append(replay_estimation(cfg, variant, records))
    return results


# --- control ----------------------------------------------------------------


@dataclass
class ControlResult:
    log: TrajectoryLog
    metrics: RunMetrics


def _euler_or_nan(q: NDArray[np.float64]) -> NDArray[np.float64]:
    try:
        return quat_to_euler(q)
    except GimbalLockError:
        return np.full(3, np.nan)


def high_frequency_power(signal: ArrayLike, fs: float, cutoff: float) -> float:
    """Fraction-free sum of one-sided periodogram power above ``cutoff`` Hz."""
    x = np.asarray(signal, dtype=float)
    x = x - x.mean(axis=0)
    spec = np.abs(np.fft.rfft(x, axis=0)) ** 2
    freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / fs)
    return float(spec[freqs > cutoff].sum())


def cmd_control(cfg: HarnessConfig, initial: RigidBodyState | None = None, seed: int | None = None) -> ControlResult:
    """Closed loop: sampled controller on the rigid-body plant, regulating to ``R = I``."""
    c = cfg.controller
    gains = c.gains()
    J = cfg.inertia()
    w_matrix(gains, cfg.refs)  # raises if W is not positive definite
    ctl = SampledController(gains, cfg.refs, J, c.law)
    scen = ScenarioConfig(
        duration=cfg.scenario.duration,
        dt=cfg.scenario.dt,
        refs=cfg.refs,
        J=J,
        initial=initial_body_state(cfg) if initial is None else initial,
        sensor=replace(sensor_model(cfg, seed), bias=np.zeros(3), bias_ramp=np.zeros(3)),
        controller=ctl,
        control_rate=c.rate,
    )
    log = run_scenario(scen)
    arr = log.as_array()
    t = arr[:, 0]
    q = arr[:, 1:5]
    euler = np.array([_euler_or_nan(x) for x in q])
    att = attitude_angle_error(q, np.array([1.0, 0.0, 0.0, 0.0]))
    tilt = np.max(np.abs(euler[:, :2]), axis=1)
    refs_u = cfg.refs / np.linalg.norm(cfg.refs, axis=1, keepdims=True)
    bh = log.block("", [f"ctl_bhat{i + 1}_{a}" for i in range(refs_u.shape[0]) for a in "xyz"]).reshape(-1, refs_u.shape[0], 3)
    b_dev = np.max(np.abs(bh - refs_u[None]), axis=(1, 2))
    tau = log.block("", ["tau_x", "tau_y", "tau_z"])
    out = TrajectoryLog(log.columns + ["roll_deg", "pitch_deg", "yaw_deg", "att_err_deg"], np.column_stack([arr, euler, np.degrees(att)]).tolist())
    ts = settling_time(t, tilt, c.settle_deg)
    metrics = RunMetrics(
        duration=float(t[-1]),
        final_attitude_error_deg=float(np.degrees(att[-1])),
        peak_attitude_error_deg=float(np.degrees(att.max())),
        settling_time=ts,
        settled=ts is not None,
        extra={
            "final_roll_deg": float(euler[-1, 0]),
            "final_pitch_deg": float(euler[-1, 1]),
            "final_yaw_deg": float(euler[-1, 2]),
            "final_bhat_deviation": float(b_dev[-1]),
            "final_rate": float(np.linalg.norm(arr[-1, 5:8])),
            "torque_hf_power": high_frequency_power(tau, cfg.sensors.gyro_rate, 10.0),
            "converged": bool(att[-1] < cfg.sweep.att_tol and np.linalg.norm(arr[-1, 5:8]) < cfg.sweep.rate_tol),
        },
    )
    return ControlResult(out, metrics)


# --- sweeps -----------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[dict]
    summary: dict


def _closed_loop_initials(cfg: HarnessConfig, seed: int) -> ClosedLoopState:
    sw = cfg.sweep
    m = cfg.refs.shape[0]
    states = [random_states(np.random.default_rng(seed + i), 1, m, sw.w_max, sw.b_max) for i in range(sw.count)]
    return ClosedLoopState(
        np.concatenate([s.b_bar for s in states]),
        np.concatenate([s.q_bar for s in states]),
        np.concatenate([s.w_bar for s in states]),
    )


def _plant_run(args: tuple[HarnessConfig, int]) -> dict:
    cfg, seed = args
    res = cmd_control(cfg, seed=seed)
    e = res.metrics.extra
    return {
        "seed": seed,
        "converged": e["converged"],
        "final_attitude_error_rad": math.radians(res.metrics.final_attitude_error_deg),
        "final_rate": e["final_rate"],
        "settling_time": res.metrics.settling_time,
    }


def plant_sweep_config(cfg: HarnessConfig, seed: int) -> HarnessConfig:
    """Config for one plant-model sweep run: random initial state from ``seed``.

    The sampled law keeps the ``[controller]`` gains: the sweep gains are
    tuned for the error-coordinate model, which scales torque by ``J``.
    """
    run_cfg = copy.deepcopy(cfg)
    run_cfg.scenario = replace(cfg.scenario, initial="random", seed=seed, duration=cfg.sweep.duration, dt=cfg.sweep.dt)
    return run_cfg


def cmd_sweep(cfg: HarnessConfig, seed: int | None = None) -> SweepResult:
    """Randomized initial conditions; run ``i`` uses seed ``seed + i``.

    ``closed_loop`` integrates the error-coordinate model for all runs as
    one batch; ``plant`` runs the full sampled-data loop per run (optionally
    across ``jobs`` processes).  Divergent runs count as not converged.
    """
    sw = cfg.sweep
    base = cfg.scenario.seed if seed is None else seed
    if sw.model == "closed_loop":
        gains = sw.gains()
        y0 = _closed_loop_initials(cfg, base)
        with np.errstate(all="ignore"):
            _, ys = rk4_closed_loop(gains, cfg.refs, y0.pack(), sw.duration, sw.dt, record_every=max(1, int(round(sw.duration / sw.dt))))
        final = ClosedLoopState.unpack(ys[-1], gains.m)
        ok = np.atleast_1d(converged_to_identity(final, sw.att_tol, sw.rate_tol))
        att = np.atleast_1d(attitude_angle_error(final.q_bar, np.array([1.0, 0.0, 0.0, 0.0])))
        rate = np.linalg.norm(final.w_bar, axis=-1)
        rows = [
            {
                "seed": base + i,
                "converged": bool(ok[i]),
                "final_attitude_error_rad": float(att[i]),
                "final_rate": float(rate[i]),
                "final_q0": float(final.q_bar[i, 0]),
            }
            for i in range(sw.count)
        ]
    else:
        jobs = [(plant_sweep_config(cfg, base + i), base + i) for i in range(sw.count)]
        if sw.jobs > 1:
            with ProcessPoolExecutor(max_workers=sw.jobs) as pool:
                rows = list(pool.map(_plant_run, jobs))
        else:
            rows = []
            for job in jobs:
                try:
                    rows.append(_plant_run(job))
                except (RuntimeError, FloatingPointError):
                    rows.append({"seed": job[1], "converged": False, "final_attitude_error_rad": float("nan"), "final_rate": float("nan"), "settling_time": None})
    rows.sort(key=lambda r: r["seed"])
    n_ok = sum(r["converged"] for r in rows)
    summary = {"model": sw.model, "count": sw.count, "seed": base, "converged": n_ok, "fraction": n_ok / sw.count}
    return SweepResult(rows, summary)


# --- gain design ------------------------------------------------------------


def design_gain_file(cfg: HarnessConfig, variant: str) -> str:
    """INI text with the validated gains and Lyapunov matrices of a design."""
    gamma = filter_gains(cfg)
    ok = is_hurwitz(gamma) if variant == "direct" else in_hbar(gamma)
    if not ok:
        raise ConfigError(f"gains {gamma.tolist()} are not admissible for a {variant} filter of order {cfg.filter.order}")
    design = binomial_design(variant, cfg.filter.order, cfg.refs, cfg.filter.alpha, bias_gain=cfg.filter.bias_gain) if cfg.filter.gains is None else build_design(cfg, variant)
    out = configparser.ConfigParser(interpolation=None)
    out["filter"] = {
        "variant": variant,
        "order": str(cfg.filter.order),
        "gains": ", ".join(FLOAT_FMT % g for g in gamma),
        "bias_gain": FLOAT_FMT % cfg.filter.bias_gain,
    }
    for i in range(design.m):
        P = design.P[i]
        out[f"lyapunov_{i + 1}"] = {
            "dim": str(P.shape[0]),
            "P": ", ".join(FLOAT_FMT % v for v in P.ravel()),
            "BtP": ", ".join(FLOAT_FMT % v for v in design.BtP[i].ravel()),
        }
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()


# --- output -----------------------------------------------------------------


def write_log_csv(path: str | Path, log: TrajectoryLog) -> None:
    np.savetxt(path, log.as_array(), fmt=FLOAT_FMT, delimiter=",", header=",".join(log.columns), comments="")


def write_rows_csv(path: str | Path, rows: list[dict]) -> None:
    keys = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, float) else ("" if v is None else v) for v in (r[k] for k in keys)])
