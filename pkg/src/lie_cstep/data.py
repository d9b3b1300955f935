"""Sensor logs: CSV loaders, downsampling, synthetic generators and result writers.

Timestamps are kept as float seconds relative to the first row of a log; the
absolute start is retained as ``t0_ns`` (integer nanoseconds) or ``t0`` (seconds)
so that epoch-scale nanosecond stamps do not lose sub-microsecond resolution.

Random numbers come from ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import estimation as est
from .groups import SE2, so3_exp, so3_log, wrap_angle

RNG_ALGORITHM = "PCG64"
QUATERNION_TOL = 1e-6


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# --------------------------------------------------------------------------
# Streams
# --------------------------------------------------------------------------

@dataclass
class Stream:
    """Time-indexed rows; ``times`` may repeat (one row per landmark sighting)."""

    times: np.ndarray
    values: np.ndarray
    columns: tuple
    t0: float = 0.0
    t0_ns: int | None = None

    def __len__(self):
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, mask) -> "Stream":
        return Stream(self.times[mask], self.values[mask], self.columns, self.t0, self.t0_ns)

    def window(self, t_start: float, t_end: float) -> "Stream":
        """Rows with ``t_start <= t < t_end`` (times relative to the log start)."""
        return self.select((self.times >= t_start - 1e-9) & (self.times < t_end - 1e-9))


@dataclass
class Trajectory:
    """Ground-truth poses. ``attitude`` is a heading (N,) for SE(2) or wxyz quaternions (N, 4)."""

    times: np.ndarray
    position: np.ndarray
    attitude: np.ndarray
    velocity: np.ndarray | None = None
    t0_ns: int | None = None

    def __len__(self):
        return len(self.times)

    @property
    def planar(self) -> bool:
        return self.attitude.ndim == 1

    def matrices(self) -> np.ndarray:
        """SE(2) or SE_2(3) matrices of every row."""
        N = len(self)
        if self.planar:
            X = np.tile(np.eye(3), (N, 1, 1))
            c, s = np.cos(self.attitude), np.sin(self.attitude)
            X[:, 0, 0], X[:, 0, 1], X[:, 1, 0], X[:, 1, 1] = c, -s, s, c
            X[:, :2, 2] = self.position
            return X
        X = np.tile(np.eye(5), (N, 1, 1))
        X[:, :3, :3] = quaternion_to_matrix(self.attitude)
        if self.velocity is not None:
            X[:, :3, 3] = self.velocity
        X[:, :3, 4] = self.position
        return X

    @classmethod
    def from_matrices(cls, times, X) -> "Trajectory":
        X = np.real(np.asarray(X))
        if X.shape[-1] == 3:
            return cls(np.asarray(times, float), X[:, :2, 2].copy(), np.arctan2(X[:, 1, 0], X[:, 0, 0]))
        return cls(np.asarray(times, float), X[:, :3, 4].copy(), matrix_to_quaternion(X[:, :3, :3]),
                   X[:, :3, 3].copy())

    def select(self, idx) -> "Trajectory":
        return Trajectory(self.times[idx], self.position[idx], self.attitude[idx],
                          None if self.velocity is None else self.velocity[idx], self.t0_ns)


def quaternion_to_matrix(q_wxyz) -> np.ndarray:
    q = np.asarray(q_wxyz, dtype=float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]]).as_matrix()


def matrix_to_quaternion(C) -> np.ndarray:
    q = Rotation.from_matrix(np.asarray(C)).as_quat()
    q = q[..., [3, 0, 1, 2]]
    return np.where(q[..., :1] < 0, -q, q)


# --------------------------------------------------------------------------
# CSV parsing
# --------------------------------------------------------------------------

IMU_COLUMNS = ("timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az")
GROUNDTRUTH_COLUMNS = ("timestamp_ns", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz")
PLANAR_TRUTH_COLUMNS = ("t_s", "x_m", "y_m", "theta_rad")
ODOMETRY_COLUMNS = ("t_s", "v_mps", "omega_radps")
RANGEBEARING_COLUMNS = ("t_s", "landmark_id", "range_m", "bearing_rad")
LANDMARK_COLUMNS = ("landmark_id", "x_m", "y_m")


def _read_rows(path, columns):
    """Yield ``(line_number, fields)`` for every data row; the header must match ``columns``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip().lstrip("#").strip() for h in header]
        if tuple(header) != tuple(columns):
            raise DataError(f"{path}: line 1: expected header {','.join(columns)}, got {','.join(header)}")
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise DataError(f"{path}: line {reader.line_num}: expected {len(columns)} fields, got {len(row)}")
            rows.append((reader.line_num, [c.strip() for c in row]))
    if not rows:
        raise DataError(f"{path}: empty (header only)")
    return rows


def _parse_float(path, line, text):
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{path}: line {line}: cannot parse {text!r} as a number") from None
    if not math.isfinite(x):
        raise DataError(f"{path}: line {line}: non-finite value {text!r}")
    return x


def _parse_int(path, line, text):
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}: line {line}: cannot parse {text!r} as an integer") from None


def _parse(path, columns, int_columns=()):
    rows = _read_rows(path, columns)
    lines = [ln for ln, _ in rows]
    ints = {c: [] for c in int_columns}
    floats = []
    for ln, r in rows:
        frow = []
        for name, text in zip(columns, r):
            if name in int_columns:
                ints[name].append(_parse_int(path, ln, text))
            else:
                frow.append(_parse_float(path, ln, text))
        floats.append(frow)
    return lines, {c: np.array(v, dtype=np.int64) for c, v in ints.items()}, np.array(floats, dtype=float)


def ns_to_seconds(ns: int) -> float:
    """Nanoseconds to seconds, rounding once."""
    return int(ns) / 1_000_000_000


def _relative_ns(path, lines, stamps, strict=True):
    diffs = np.diff(stamps)
    bad = np.flatnonzero(diffs <= 0) if strict else np.flatnonzero(diffs < 0)
    if bad.size:
        raise DataError(f"{path}: line {lines[bad[0] + 1]}: timestamp is not increasing")
    t0 = int(stamps[0])
    return np.array([(int(s) - t0) / 1_000_000_000 for s in stamps]), t0


def _relative_s(path, lines, t, strict=True):
    diffs = np.diff(t)
    bad = np.flatnonzero(diffs <= 0) if strict else np.flatnonzero(diffs < 0)
    if bad.size:
        raise DataError(f"{path}: line {lines[bad[0] + 1]}: timestamp is not increasing")
    return t - t[0], float(t[0])


def load_imu_csv(path) -> Stream:
    """``timestamp_ns,wx,wy,wz,ax,ay,az``; values in rad/s and m/s^2."""
    lines, ints, vals = _parse(path, IMU_COLUMNS, ("timestamp_ns",))
    t, t0 = _relative_ns(path, lines, ints["timestamp_ns"])
    return Stream(t, vals, IMU_COLUMNS[1:], ns_to_seconds(t0), t0)


def load_groundtruth_csv(path) -> Trajectory:
    """``timestamp_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz``, or planar ``t_s,x_m,y_m,theta_rad``."""
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline().strip().lstrip("#").strip()
    if first.startswith("t_s"):
        lines, _, vals = _parse(path, PLANAR_TRUTH_COLUMNS)
        t, _ = _relative_s(path, lines, vals[:, 0])
        return Trajectory(t, vals[:, 1:3], vals[:, 3])
    lines, ints, vals = _parse(path, GROUNDTRUTH_COLUMNS, ("timestamp_ns",))
    t, t0 = _relative_ns(path, lines, ints["timestamp_ns"])
    q = vals[:, 3:7]
    norms = np.linalg.norm(q, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > QUATERNION_TOL)
    if bad.size:
        raise DataError(f"{path}: line {lines[bad[0]]}: quaternion norm {norms[bad[0]]:.6g} is not 1")
    return Trajectory(t, vals[:, :3], q, vals[:, 7:10], t0)


def load_odometry_csv(path) -> Stream:
    lines, _, vals = _parse(path, ODOMETRY_COLUMNS)
    t, t0 = _relative_s(path, lines, vals[:, 0])
    return Stream(t, vals[:, 1:], ODOMETRY_COLUMNS[1:], t0)


def load_rangebearing_csv(path) -> Stream:
    """One row per sighting; several rows may share a timestamp."""
    lines, ints, vals = _parse(path, RANGEBEARING_COLUMNS, ("landmark_id",))
    t, t0 = _relative_s(path, lines, vals[:, 0], strict=False)
    bad = np.flatnonzero(vals[:, 1] < 0)
    if bad.size:
        raise DataError(f"{path}: line {lines[bad[0]]}: negative range")
    values = np.column_stack([ints["landmark_id"], vals[:, 1:]])
    return Stream(t, values, RANGEBEARING_COLUMNS[1:], t0)


def load_landmarks_csv(path) -> dict:
    lines, ints, vals = _parse(path, LANDMARK_COLUMNS, ("landmark_id",))
    out = {}
    for ln, i, xy in zip(lines, ints["landmark_id"], vals):
        if int(i) in out:
            raise DataError(f"{path}: line {ln}: duplicate landmark id {i}")
        out[int(i)] = xy.copy()
    return out


# --------------------------------------------------------------------------
# Downsampling and measurement simulation
# --------------------------------------------------------------------------

def native_rate(times) -> float:
    u = np.unique(np.asarray(times, float))
    if len(u) < 2:
        raise DataError("need at least two distinct timestamps to infer a rate")
    return 1.0 / float(np.median(np.diff(u)))


def downsample_indices(times, target_hz: float):
    """Distinct timestamps ``u`` and the indices into ``u`` nearest a uniform grid at ``target_hz``."""
    if not target_hz > 0:
        raise DataError("target rate must be positive")
    u = np.unique(np.asarray(times, float))
    rate = native_rate(u)
    if target_hz > rate * (1 + 1e-6):
        raise DataError(f"target rate {target_hz} Hz exceeds the native rate {rate:.6g} Hz")
    n = int(math.floor((u[-1] - u[0]) * target_hz + 1e-6)) + 1
    grid = u[0] + np.arange(n) / target_hz
    j = np.clip(np.searchsorted(u, grid), 1, len(u) - 1)
    j = np.where(grid - u[j - 1] <= u[j] - grid, j - 1, j)
    return np.unique(j), u


def downsample(stream, target_hz: float):
    """Keep the samples nearest a uniform grid at ``target_hz``; deterministic.

    Works on :class:`Stream` (all rows sharing a kept timestamp are kept) and on
    :class:`Trajectory`.
    """
    keep, u = downsample_indices(stream.times, target_hz)
    kept = u[keep]
    if isinstance(stream, Trajectory):
        return stream.select(np.searchsorted(stream.times, kept))
    return stream.select(np.isin(stream.times, kept))


def simulate_position_measurements(truth: Trajectory, sigma: float, rate_hz: float, seed: int) -> Stream:
    """Truth positions at ``rate_hz`` plus iid ``N(0, sigma^2)`` per axis."""
    if sigma < 0:
        raise DataError("sigma must be non-negative")
    sub = downsample(truth, rate_hz)
    noise = make_rng(seed).standard_normal(sub.position.shape) * sigma
    cols = ("x", "y", "z")[: sub.position.shape[1]]
    return Stream(sub.times.copy(), sub.position + noise, cols)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

@dataclass
class ImuNoise:
    """White noise (per-sample std) and constant biases added to synthetic IMU inputs."""

    gyro_sigma: float = 0.01
    accel_sigma: float = math.sqrt(2e-6) / 0.04
    gyro_bias: tuple = (0.01, -0.007, 0.005)
    accel_bias: tuple = (0.05, -0.03, 0.04)
    position_sigma: float = 0.1


@dataclass
class OdometryNoise:
    """Per-sample standard deviations for synthetic wheel odometry and laser data."""

    speed_sigma: float = math.sqrt(0.0028)
    yaw_rate_sigma: float = math.sqrt(0.0085)
    range_sigma: float = math.sqrt(9.3e-4)
    bearing_sigma: float = math.sqrt(6.8e-4)
    max_range: float = 10.0
    n_landmarks: int = 17


@dataclass
class SyntheticRun:
    """Ground truth plus the sensor streams a real log would provide."""

    model: str
    times: np.ndarray
    truth: np.ndarray
    inputs: np.ndarray
    measurements: Stream
    landmarks: dict | None = None
    seed: int = 0
    rng_algorithm: str = RNG_ALGORITHM


def _smooth_signal(rng, t, n_terms, amp, f_lo, f_hi, dims):
    """Sum of ``n_terms`` random sinusoids per dimension."""
    out = np.zeros((len(t), dims))
    for d in range(dims):
        A = amp * rng.uniform(0.3, 1.0, n_terms) / n_terms
        f = rng.uniform(f_lo, f_hi, n_terms)
        ph = rng.uniform(0, 2 * np.pi, n_terms)
        out[:, d] = np.sum(A * np.sin(2 * np.pi * f * t[:, None] + ph), axis=1)
    return out


def _synthetic_imu(n_states, rate_hz, seed, noise: ImuNoise | None, gravity=est.GRAVITY):
    rng = make_rng(seed)
    T = 1.0 / rate_hz
    t = np.arange(n_states + 2) * T
    r = _smooth_signal(rng, t, 3, 4.0, 0.02, 0.15, 3)
    phi = _smooth_signal(rng, t, 3, 0.6, 0.02, 0.15, 3)
    C = so3_exp(phi)
    v = np.diff(r, axis=0) / T  # v_k carries r_k to r_{k+1} exactly
    X = np.tile(np.eye(5), (n_states, 1, 1))
    X[:, :3, :3] = C[:n_states]
    X[:, :3, 3] = v[:n_states]
    X[:, :3, 4] = r[:n_states]
    k = np.arange(n_states)
    Ck = C[k]
    omega = so3_log(np.swapaxes(Ck, 1, 2) @ C[k + 1]) / T
    accel = np.einsum("kji,kj->ki", Ck, (v[k + 1] - v[k]) / T - gravity)
    inputs = np.hstack([omega, accel])[: n_states - 1]
    if noise is not None:
        m = len(inputs)
        inputs = inputs + np.hstack([
            noise.gyro_sigma * rng.standard_normal((m, 3)) + np.asarray(noise.gyro_bias),
            noise.accel_sigma * rng.standard_normal((m, 3)) + np.asarray(noise.accel_bias)])
    return t[:n_states], X, inputs, rng


def _synthetic_unicycle(n_states, rate_hz, seed, noise: OdometryNoise | None):
    rng = make_rng(seed)
    T = 1.0 / rate_hz
    t = np.arange(n_states) * T
    speed = 0.35 + np.abs(_smooth_signal(rng, t, 3, 0.25, 0.005, 0.03, 1)[:, 0])
    yaw_rate = _smooth_signal(rng, t, 3, 0.5, 0.005, 0.04, 1)[:, 0]
    u = np.column_stack([speed, yaw_rate])[: n_states - 1]
    X = est.dead_reckon(np.eye(3), u, est.ProcessModel("unicycle_se2", SE2), t)
    inputs = u.copy()
    if noise is not None:
        inputs += np.column_stack([noise.speed_sigma * rng.standard_normal(len(u)),
                                   noise.yaw_rate_sigma * rng.standard_normal(len(u))])
    return t, X, inputs, rng


def _place_landmarks(rng, positions, noise: OdometryNoise, attempts=200):
    lo, hi = positions.min(0) - 2.0, positions.max(0) + 2.0
    for _ in range(attempts):
        pts = rng.uniform(lo, hi, (noise.n_landmarks, 2))
        d = np.linalg.norm(positions[:, None, :] - pts[None], axis=2)
        if np.all(np.min(d, axis=1) <= noise.max_range) and np.all(d > 0.5):
            return {i + 1: pts[i] for i in range(noise.n_landmarks)}
    raise DataError("could not place landmarks visible from every pose")


def generate_synthetic(kind: str, duration: float, seed: int = 0, noise="default",
                       rate_hz: float | None = None, measurement_rate_hz: float | None = None,
                       sensor_offset: float = 0.0) -> SyntheticRun:
    """Smooth ground truth with matching inputs and measurements.

    ``kind`` is ``"imu_se23"`` (25 Hz IMU, 10 Hz positions by default) or
    ``"unicycle_se2"`` (5 Hz odometry and range-bearing). ``noise=None`` gives
    exact data: dead reckoning reproduces the truth and every measurement error
    vanishes. Otherwise ``noise`` is an :class:`ImuNoise` / :class:`OdometryNoise`
    or ``"default"``.
    """
    if not duration > 0:
        raise DataError("duration must be positive")
    if kind == "imu_se23":
        rate_hz = rate_hz or 25.0
        measurement_rate_hz = measurement_rate_hz or 10.0
        noise = ImuNoise() if noise == "default" else noise
        n = int(round(duration * rate_hz))
        t, X, inputs, rng = _synthetic_imu(n, rate_hz, seed, noise)
        sigma = 0.0 if noise is None else noise.position_sigma
        truth = Trajectory.from_matrices(t, X)
        sub = downsample(truth, measurement_rate_hz)
        pos = sub.position + sigma * rng.standard_normal(sub.position.shape)
        meas = Stream(sub.times.copy(), pos, ("x", "y", "z"))
        return SyntheticRun(kind, t, X, inputs, meas, None, seed)
    if kind == "unicycle_se2":
        rate_hz = rate_hz or 5.0
        measurement_rate_hz = measurement_rate_hz or rate_hz
        noise_cfg = OdometryNoise() if noise in ("default", None) else noise
        n = int(round(duration * rate_hz))
        t, X, inputs, rng = _synthetic_unicycle(n, rate_hz, seed, None if noise is None else noise_cfg)
        landmarks = _place_landmarks(rng, X[:, :2, 2], noise_cfg)
        keep, u = downsample_indices(t, measurement_rate_hz)
        ids = np.array(sorted(landmarks))
        pts = np.array([landmarks[i] for i in ids])
        rows = []
        for k in np.searchsorted(t, u[keep]):
            pred = np.real(est.predict_range_bearing(X[k], pts, sensor_offset))
            visible = np.flatnonzero(pred[:, 0] <= noise_cfg.max_range)
            for j in visible:
                rows.append([t[k], ids[j], pred[j, 0], pred[j, 1]])
        rows = np.array(rows)
        if noise is not None:
            rows[:, 2] += noise_cfg.range_sigma * rng.standard_normal(len(rows))
            rows[:, 3] += noise_cfg.bearing_sigma * rng.standard_normal(len(rows))
        rows[:, 3] = wrap_angle(rows[:, 3])
        meas = Stream(rows[:, 0], rows[:, 1:], RANGEBEARING_COLUMNS[1:])
        return SyntheticRun(kind, t, X, inputs, meas, landmarks, seed)
    raise DataError(f"unknown synthetic kind {kind!r}")


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Settings of one batch run, loadable from JSON (unknown keys rejected).

    Covariance overrides are given as diagonals (lists) or full matrices
    (nested lists). ``None`` selects the model default.
    """

    model: str = "imu_se23"
    t_start: float = 60.0
    t_end: float = 80.0
    input_rate_hz: float = 25.0
    measurement_rate_hz: float = 10.0
    prior_cov: list | None = None
    process_cov: list | None = None
    meas_cov: list | None = None
    position_sigma: float = 0.1
    lateral_sigma: float = 0.05
    sensor_offset: float | None = None
    h: float = 1e-20
    fd_step: float = 1e-6
    jacobian: str = "complex_step"
    linear_solver: str = "sparse"
    max_iterations: int = 50
    step_tol: float = 1e-8
    cost_tol: float = 1e-10
    seed: int = 0
    imu_path: str | None = None
    groundtruth_path: str | None = None
    odometry_path: str | None = None
    rangebearing_path: str | None = None
    landmarks_path: str | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.model not in est.MODELS:
            raise DataError(f"unknown model {self.model!r}")
        if not self.t_start < self.t_end:
            raise DataError("t_start must be before t_end")
        if not (self.input_rate_hz > 0 and self.measurement_rate_hz > 0):
            raise DataError("rates must be positive")
        if self.position_sigma < 0 or self.lateral_sigma <= 0:
            raise DataError("noise levels must be positive")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "RunConfig":
        if model == "unicycle_se2":
            base = dict(model=model, t_start=500.0, t_end=620.0, input_rate_hz=5.0,
                        measurement_rate_hz=5.0, prior_cov=[1.0, 1.0, 1.0])
        else:
            base = dict(model="imu_se23", prior_cov=[1e-10] * 9,
                        process_cov=[1.6e-7] * 3 + [2e-6] * 3 + [1e-10] * 3)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        model = doc.get("model", "imu_se23")
        return cls.for_model(model, **{k: v for k, v in doc.items() if k != "model"})

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise DataError(f"{path}: top level must be an object")
        base = Path(path).parent
        for k in ("imu_path", "groundtruth_path", "odometry_path", "rangebearing_path", "landmarks_path"):
            if doc.get(k) and not Path(doc[k]).is_absolute():
                doc[k] = str(base / doc[k])
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def as_covariance(spec, n: int, name: str = "covariance") -> np.ndarray:
    """Diagonal list, scalar or full matrix to an ``(n, n)`` array."""
    a = np.asarray(spec, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1 and a.shape == (n,):
        return np.diag(a)
    if a.shape == (n, n):
        return a
    raise DataError(f"{name} must be a scalar, a length-{n} diagonal or an {n}x{n} matrix")


# --------------------------------------------------------------------------
# Writers
# --------------------------------------------------------------------------

def write_trajectory_csv(path, times, states) -> None:
    """Estimated trajectory in the ground-truth layout (seconds, not ns)."""
    traj = Trajectory.from_matrices(times, states)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if traj.planar:
            w.writerow(PLANAR_TRUTH_COLUMNS)
            for t, p, th in zip(traj.times, traj.position, traj.attitude):
                w.writerow([f"{t:.9f}", f"{p[0]:.17g}", f"{p[1]:.17g}", f"{th:.17g}"])
        else:
            w.writerow(("t_s", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"))
            for t, p, q, v in zip(traj.times, traj.position, traj.attitude, traj.velocity):
                w.writerow([f"{t:.9f}"] + [f"{x:.17g}" for x in (*p, *q, *v)])


def error_table(times, estimates, truth, sigmas=None) -> tuple[tuple, np.ndarray]:
    """Per-state error columns and their header.

    SE_2(3): ``t,pos_err,vel_err,att_err`` with norms and the rotation angle of
    ``C_est^T C_true``. SE(2): ``t,x_err,y_err,theta_err,sigma_x,sigma_y,sigma_theta``
    with signed errors; sigma columns are NaN when no covariance is given.
    """
    est_m, tru = np.real(np.asarray(estimates)), np.asarray(truth)
    if est_m.shape != tru.shape or len(times) != len(est_m):
        raise DataError(f"length mismatch: {len(times)} times, {est_m.shape} estimates, {tru.shape} truth")
    t = np.asarray(times, float)
    if est_m.shape[-1] == 5:
        pos = np.linalg.norm(est_m[:, :3, 4] - tru[:, :3, 4], axis=1)
        vel = np.linalg.norm(est_m[:, :3, 3] - tru[:, :3, 3], axis=1)
        att = est.attitude_errors(est_m, tru)
        return ("t", "pos_err", "vel_err", "att_err"), np.column_stack([t, pos, vel, att])
    dx = est_m[:, :2, 2] - tru[:, :2, 2]
    dth = np.arctan2(est_m[:, 1, 0], est_m[:, 0, 0]) - np.arctan2(tru[:, 1, 0], tru[:, 0, 0])
    dth = wrap_angle(dth)
    sig = np.full((len(t), 3), np.nan) if sigmas is None else np.asarray(sigmas, float)
    return (("t", "x_err", "y_err", "theta_err", "sigma_x", "sigma_y", "sigma_theta"),
            np.column_stack([t, dx, dth, sig]))


def write_error_csv(path, times, estimates, truth, sigmas=None) -> np.ndarray:
    header, table = error_table(times, estimates, truth, sigmas)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([f"{row[0]:.9f}"] + [f"{x:.17g}" for x in row[1:]])
    return table


def write_stream_csv(path, stream: Stream, time_column="t_s") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((time_column,) + tuple(stream.columns))
        for t, row in zip(stream.times + stream.t0, stream.values):
            w.writerow([f"{t:.9f}"] + [f"{x:.17g}" for x in row])
