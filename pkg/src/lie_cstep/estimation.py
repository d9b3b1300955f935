"""Batch MAP trajectory estimation problems.

Two models are provided:

* ``imu_se23``: SE_2(3) states ``[[C, v, r], [0, 1, 0], [0, 0, 1]]`` driven by
  gyroscope and accelerometer inputs, observed through noisy positions.
* ``unicycle_se2``: SE(2) states driven by wheel odometry (forward speed and
  yaw rate), observed through range and bearing to known landmarks.

The error stack is ``[prior; process 1..K; measurements]`` with the weight
``diag(P0^-1, Q_1^-1, ..., Q_K^-1, R^-1, ...)``. Every model function is written
with complex-safe operations so that complex-step Jacobians pass through it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import solver
from .groups import (SE2, SE23, GroupKind, ctranspose, complexified_atan2, cnorm,
                     so3_exp, so3_log, wrap_angle)

GRAVITY = np.array([0.0, 0.0, -9.81])

MODELS = ("imu_se23", "unicycle_se2")
MODEL_KINDS = {"imu_se23": SE23, "unicycle_se2": SE2}
INPUT_DIMS = {"imu_se23": 6, "unicycle_se2": 2}
MEASUREMENT_DIMS = {"imu_se23": 3, "unicycle_se2": 2}


class CovarianceError(ValueError):
    """A covariance block is not symmetric positive definite."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


# --------------------------------------------------------------------------
# Process models
# --------------------------------------------------------------------------

def imu_propagate(X, u, w=None, T=1.0, gravity=GRAVITY):
    """One step of the discrete IMU kinematics on SE_2(3).

    ``u = [omega (3), a (3)]`` in the body frame and ``w`` has the same layout.
    ``C_k = C exp(T (omega + w_g)^x)``, ``v_k = v + T g + T C (a + w_a)`` and
    ``r_k = r + T v``. Batched over leading axes; ``T`` broadcasts.
    """
    X = np.asarray(X)
    u = np.asarray(u)
    if w is not None:
        u = u + np.asarray(w)
    T = np.asarray(T, dtype=float)[..., None]
    C, v, r = X[..., :3, :3], X[..., :3, 3], X[..., :3, 4]
    out = np.array(X, dtype=np.result_type(X, u, np.float64))
    out[..., :3, :3] = C @ so3_exp(T * u[..., :3])
    out[..., :3, 3] = v + T * np.asarray(gravity) + T * np.einsum("...ij,...j->...i", C, u[..., 3:])
    out[..., :3, 4] = r + T * v
    return out


def unicycle_increment(u, w=None, T=1.0):
    """Body-frame increment ``[[R(T w_ang), [T v, 0]], [0, 1]]`` of the unicycle."""
    u = np.asarray(u)
    if w is not None:
        u = u + np.asarray(w)
    T = np.asarray(T, dtype=float)
    th = T * u[..., 1]
    out = np.zeros(u.shape[:-1] + (3, 3), dtype=np.result_type(u, np.float64))
    c, s = np.cos(th), np.sin(th)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 0, 2] = T * u[..., 0]
    out[..., 2, 2] = 1.0
    return out


def unicycle_propagate(X, u, w=None, T=1.0):
    """``X_k = X_{k-1} Psi``; ``u = [forward speed, yaw rate]``."""
    return np.asarray(X) @ unicycle_increment(u, w, T)


@dataclass(frozen=True)
class ProcessModel:
    name: str
    kind: GroupKind
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def propagate(self, X, u, w=None, T=1.0):
        if self.name == "imu_se23":
            return imu_propagate(X, u, w, T, self.gravity)
        if self.name == "unicycle_se2":
            return unicycle_propagate(X, u, w, T)
        raise ValueError(f"unknown process model {self.name!r}")


# --------------------------------------------------------------------------
# Measurement models
# --------------------------------------------------------------------------

def predict_position(X):
    """Position ``[1 0 0] X p`` with ``p = [0, 0, 0, 0, 1]``."""
    return np.asarray(X)[..., :3, 4]


def predict_range_bearing(X, landmark, offset=0.0):
    """Range and bearing from the sensor at body point ``[offset, 0]`` to ``landmark``.

    The bearing is ``atan2`` of the datum-frame offset minus the heading taken
    from the SE(2) logarithm, so the imaginary part of a complex-step
    perturbation flows through both terms.
    """
    X = np.asarray(X)
    sensor = X[..., :2, 0] * offset + X[..., :2, 2]
    rel = np.asarray(landmark) - sensor
    rng = cnorm(rel)
    heading = SE2.log(X)[..., 0]
    bearing = complexified_atan2(rel[..., 1], rel[..., 0]) - heading
    return np.stack([rng, bearing], axis=-1)


# --------------------------------------------------------------------------
# Error terms
# --------------------------------------------------------------------------

def error_prior(X0, X_check, kind: GroupKind):
    """``log(X0^-1 X_check)``."""
    return kind.log(kind.compose(kind.inverse(X0), X_check))


def error_process(X_k, X_prev, u, model: ProcessModel, T):
    """``log(X_k^-1 F(X_prev, u, 0))``."""
    kind = model.kind
    return kind.log(kind.compose(kind.inverse(X_k), model.propagate(X_prev, u, None, T)))


def error_position(X, y):
    return np.asarray(y) - predict_position(X)


def error_range_bearing(X, y, landmark, offset=0.0):
    """Measured minus predicted, with the bearing residual wrapped on its real part."""
    e = np.asarray(y) - predict_range_bearing(X, landmark, offset)
    return np.stack([e[..., 0], wrap_angle(e[..., 1])], axis=-1)


# --------------------------------------------------------------------------
# Problem description
# --------------------------------------------------------------------------

@dataclass
class BatchProblem:
    """Everything needed to form the MAP least-squares problem.

    Attributes
    ----------
    model : str
        ``"imu_se23"`` or ``"unicycle_se2"``.
    times : (K+1,) state timestamps, strictly increasing.
    prior, prior_cov : initial-state guess and its covariance.
    inputs : (K, d) inputs ``u_0 .. u_{K-1}``.
    process_cov : (K, n, n) covariances ``Q_1 .. Q_K``.
    meas_index : (M,) state index of each measurement block.
    measurements : (M, p) measured values.
    meas_cov : (M, p, p) covariances.
    landmark_ids : (M,) landmark of each range-bearing block.
    landmarks : dict id -> (2,) position.
    """

    model: str
    times: np.ndarray
    prior: np.ndarray
    prior_cov: np.ndarray
    inputs: np.ndarray
    process_cov: np.ndarray
    meas_index: np.ndarray
    measurements: np.ndarray
    meas_cov: np.ndarray
    landmark_ids: np.ndarray | None = None
    landmarks: dict | None = None
    sensor_offset: float = 0.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        self.times = np.asarray(self.times, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.process_cov = np.asarray(self.process_cov, dtype=float)
        self.meas_index = np.asarray(self.meas_index, dtype=int)
        self.measurements = np.asarray(self.measurements, dtype=float)
        self.meas_cov = np.asarray(self.meas_cov, dtype=float)
        K = len(self.times) - 1
        n, p = self.kind.dof, MEASUREMENT_DIMS[self.model]
        if K < 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("state timestamps must be strictly increasing")
        if self.inputs.shape != (K, INPUT_DIMS[self.model]):
            raise ValueError(f"inputs must be ({K}, {INPUT_DIMS[self.model]}), got {self.inputs.shape}")
        if self.process_cov.shape != (K, n, n):
            raise ValueError(f"process covariances must be ({K}, {n}, {n})")
        M = len(self.meas_index)
        if self.measurements.shape != (M, p) or self.meas_cov.shape != (M, p, p):
            raise ValueError("measurement arrays disagree in shape")
        if M and (self.meas_index.min() < 0 or self.meas_index.max() > K):
            raise ValueError("measurement references a state outside the window")
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.measurements)):
            raise ValueError("inputs and measurements must be finite")
        if self.model == "unicycle_se2":
            if self.landmark_ids is None or self.landmarks is None:
                raise ValueError("range-bearing problems need landmark ids and a landmark map")
            self.landmark_ids = np.asarray(self.landmark_ids, dtype=int)
            unknown = sorted(set(self.landmark_ids.tolist()) - set(self.landmarks))
            if unknown:
                raise ValueError(f"measurements reference unknown landmark ids {unknown}")

    @property
    def kind(self) -> GroupKind:
        return MODEL_KINDS[self.model]

    @property
    def process_model(self) -> ProcessModel:
        return ProcessModel(self.model, self.kind, np.asarray(self.gravity))

    @property
    def n_states(self) -> int:
        return len(self.times)

    @property
    def periods(self) -> np.ndarray:
        return np.diff(self.times)

    def landmark_positions(self) -> np.ndarray:
        return np.array([self.landmarks[i] for i in self.landmark_ids], dtype=float).reshape(-1, 2)


def match_to_states(meas_times, state_times, period=None):
    """Index of the nearest state for each measurement time, within half a period."""
    meas_times = np.asarray(meas_times, dtype=float)
    state_times = np.asarray(state_times, dtype=float)
    if period is None:
        period = float(np.median(np.diff(state_times)))
    idx = np.clip(np.searchsorted(state_times, meas_times), 1, len(state_times) - 1)
    left = state_times[idx - 1]
    right = state_times[idx]
    idx = np.where(meas_times - left <= right - meas_times, idx - 1, idx)
    gap = np.abs(state_times[idx] - meas_times)
    bad = np.flatnonzero(gap > 0.5 * period + 1e-9)
    if bad.size:
        raise ValueError(f"measurement at t={meas_times[bad[0]]:.6f} s has no state within "
                         f"{0.5 * period:.6f} s")
    return idx


# --------------------------------------------------------------------------
# Weights
# --------------------------------------------------------------------------

def spd_inverse(cov, block=None):
    """Inverse of one SPD block through its Cholesky factor."""
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14 * max(1.0, np.max(np.abs(cov)))):
        raise CovarianceError(f"covariance block {block} is not symmetric", block)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise CovarianceError(f"covariance block {block} is not positive definite", block) from None
    Linv = np.linalg.inv(L)
    W = Linv.T @ Linv
    return 0.5 * (W + W.T)


def covariance_blocks(problem: BatchProblem) -> list[np.ndarray]:
    """Covariances in error-stack order: P0, Q_1..Q_K, R blocks."""
    return [np.asarray(problem.prior_cov)] + list(problem.process_cov) + list(problem.meas_cov)


def build_weight_blocks(problem: BatchProblem) -> list[np.ndarray]:
    return [spd_inverse(c, i) for i, c in enumerate(covariance_blocks(problem))]


def build_weight(problem: BatchProblem) -> sp.csr_matrix:
    """Block-diagonal weight in the same order as the error stack."""
    return sp.block_diag(build_weight_blocks(problem), format="csr")


# --------------------------------------------------------------------------
# Error stack as solver factors
# --------------------------------------------------------------------------

def _imu_process_jacobian(X_prev, X_k, u, T, gravity):
    """Right Jacobian blocks ``[F_k, -1]`` of the IMU process error, first order."""
    B_ = X_prev.shape[0]
    Fop = np.array(X_prev)
    Tcol = T[:, None]
    Fop[:, :3, 3] = X_prev[:, :3, 3] + Tcol * gravity
    Fop[:, :3, 4] = X_prev[:, :3, 4] + Tcol * X_prev[:, :3, 3]
    Bm = np.tile(np.eye(9), (B_, 1, 1))
    Bm[:, 6:, 3:6] = T[:, None, None] * np.eye(3)
    F = SE23.adjoint(SE23.inverse(X_k) @ Fop) @ Bm
    return np.concatenate([F, -np.tile(np.eye(9), (B_, 1, 1))], axis=2)


def _position_jacobian(X):
    J = np.zeros((X.shape[0], 3, 9))
    J[:, :, 6:] = -X[:, :3, :3]
    return J


def build_factors(problem: BatchProblem) -> list[solver.Factor]:
    """Prior, process and measurement factors in error-stack order."""
    kind = problem.kind
    model = problem.process_model
    K = problem.n_states - 1
    n = kind.dof
    prior = np.asarray(problem.prior, dtype=float)
    W = build_weight_blocks(problem)
    Wp, Wq, Wr = np.array(W[:1]), np.array(W[1:K + 1]).reshape(K, n, n), np.array(W[K + 1:])

    def prior_error(X0):
        return error_prior(X0, prior, kind)

    def prior_jac(X0):
        return -np.tile(np.eye(n), (X0.shape[0], 1, 1))

    factors = [solver.Factor("prior", [[0]], prior_error, Wp, prior_jac)]

    if K > 0:
        u, T = problem.inputs, problem.periods
        grav = np.asarray(problem.gravity)

        def process_error(X_prev, X_k):
            return error_process(X_k, X_prev, u, model, T)

        process_jac = None
        if problem.model == "imu_se23":
            def process_jac(X_prev, X_k):
                return _imu_process_jacobian(X_prev, X_k, u, T, grav)

        pairs = np.stack([np.arange(K), np.arange(1, K + 1)], axis=1)
        factors.append(solver.Factor("process", pairs, process_error, Wq, process_jac))

    M = len(problem.meas_index)
    if M:
        y = problem.measurements
        idx = problem.meas_index[:, None]
        if problem.model == "imu_se23":
            factors.append(solver.Factor("position", idx, lambda X: error_position(X, y), Wr,
                                         _position_jacobian))
        else:
            lm = problem.landmark_positions()
            d = problem.sensor_offset
            factors.append(solver.Factor("range_bearing", idx,
                                         lambda X: error_range_bearing(X, y, lm, d), Wr))
    return factors


def build_least_squares(problem: BatchProblem, x0=None, side: str = "right") -> solver.LeastSquaresProblem:
    """The solver problem; ``x0`` defaults to the dead-reckoned trajectory."""
    if x0 is None:
        x0 = dead_reckon(problem.prior, problem.inputs, problem.process_model, problem.times)
    return solver.LeastSquaresProblem(problem.kind, np.asarray(x0, dtype=float),
                                      build_factors(problem), side)


@dataclass
class ErrorStack:
    """The stacked error as one function of the composite state."""

    function: object
    offsets: dict
    size: int


def build_error_stack(problem: BatchProblem) -> ErrorStack:
    """Composite-state error function plus the start row of each block group."""
    ls = build_least_squares(problem, np.tile(np.asarray(problem.prior), (problem.n_states, 1, 1)))
    offs = ls.row_offsets()
    offsets = {f.name: (offs[i], offs[i + 1]) for i, f in enumerate(ls.factors)}
    if offs[-1] != ls.n_errors:
        raise AssertionError("error stack bookkeeping mismatch")
    return ErrorStack(ls.error_function(), offsets, ls.n_errors)


def analytic_jacobian_euroc(states, problem: BatchProblem) -> sp.csr_matrix:
    """Sparse first-order right Jacobian of the SE_2(3) error stack.

    ``-1`` on the prior row and on the process diagonal, ``F_k`` on the process
    sub-diagonal and ``-[0 0 C_k]`` on each position row.
    """
    if problem.model != "imu_se23":
        raise ValueError(f"no analytic Jacobian for model {problem.model!r}")
    ls = build_least_squares(problem, states)
    blocks, _ = solver.factor_jacobians(ls, np.asarray(states), solver.SolveOptions(jacobian="analytic"))
    return blocks_to_sparse(ls, blocks)


def blocks_to_sparse(ls: solver.LeastSquaresProblem, blocks) -> sp.csr_matrix:
    """Scatter per-factor Jacobian blocks into a sparse ``(q, N n)`` matrix."""
    n = ls.kind.dof
    rows, cols, vals = [], [], []
    row = 0
    for f, Jb in zip(ls.factors, blocks):
        p = f.rows
        r_idx = row + np.arange(f.size)[:, None, None] * p + np.arange(p)[None, :, None]
        for s in range(f.arity):
            c_idx = f.states[:, s][:, None, None] * n + np.arange(n)[None, None, :]
            rr, cc = np.broadcast_arrays(r_idx, c_idx)
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(Jb[:, :, s * n:(s + 1) * n].ravel())
        row += f.size * p
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ls.n_errors, ls.n_dof))


# --------------------------------------------------------------------------
# Dead reckoning
# --------------------------------------------------------------------------

def dead_reckon(X0, inputs, model: ProcessModel, times, max_gap: float | None = None) -> np.ndarray:
    """Integrate the noise-free process model from ``X0``; returns ``(K+1, m, m)``."""
    times = np.asarray(times, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if len(inputs) < len(times) - 1:
        raise ValueError(f"{len(inputs)} inputs cannot cover {len(times) - 1} steps")
    periods = np.diff(times)
    if np.any(periods <= 0):
        raise ValueError("timestamps must be strictly increasing")
    if max_gap is not None and np.any(periods > max_gap):
        k = int(np.argmax(periods > max_gap))
        raise ValueError(f"timestamp gap of {periods[k]:.6f} s after t={times[k]:.6f} s")
    out = np.empty((len(times),) + np.shape(X0))
    out[0] = X0
    for k in range(1, len(times)):
        out[k] = model.propagate(out[k - 1], inputs[k - 1], None, periods[k - 1])
    return out


def position_rmse(states, truth) -> float:
    """Root-mean-square of the Euclidean position error; works for SE(2) and SE_2(3)."""
    states, truth = np.asarray(states), np.asarray(truth)
    if states.shape[-1] == 3:
        d = states[:, :2, 2] - truth[:, :2, 2]
    else:
        d = states[:, :3, 4] - truth[:, :3, 4]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


def attitude_errors(states, truth) -> np.ndarray:
    """``|log(C_est^T C_true)|`` per state (rotation angle of the attitude error)."""
    states, truth = np.asarray(states), np.asarray(truth)
    if states.shape[-1] == 3:
        dC = ctranspose(states[:, :2, :2]) @ truth[:, :2, :2]
        return np.abs(np.arctan2(dC[:, 1, 0], dC[:, 0, 0]))
    dC = ctranspose(states[:, :3, :3]) @ truth[:, :3, :3]
    return np.linalg.norm(so3_log(dC), axis=-1)
