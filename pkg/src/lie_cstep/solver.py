"""Gauss-Newton for weighted nonlinear least squares over Lie-group states.

A problem is a list of states of one group kind plus a list of
:class:`Factor` objects. Each factor is a homogeneous batch of error blocks:
block ``b`` depends on the states ``factor.states[b]`` (one state, or two
consecutive ones) and is weighted by ``factor.weight[b]``. Stacking the factor
outputs in order gives the error vector ``e`` and the cost ``0.5 e^T W e``.

The step solves ``(J^T W J) d = -J^T W e`` by Cholesky, either densely or with a
block-tridiagonal factorisation that is linear in the number of states, and the
states are updated on the manifold with ``X exp(d^)`` (right) or ``exp(d^) X``
(left). There is no damping or line search, so the cost is free to rise on the
first iterations.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import cstep
from .groups import Composite, GroupElement, GroupKind


class SingularSystemError(np.linalg.LinAlgError):
    """The normal-equations matrix is not positive definite."""

    def __init__(self, message, block=None, pivot=None):
        super().__init__(message)
        self.block = block
        self.pivot = pivot


@dataclass
class Factor:
    """A batch of error blocks of identical shape and state dependency.

    ``error(*mats)`` receives one ``(B, m, m)`` stack per dependency slot and
    returns ``(B, p)``. The optional ``jacobian(*mats)`` returns the analytic
    ``(B, p, a * n)`` Jacobian for the problem's perturbation side.
    """

    name: str
    states: np.ndarray
    error: Callable
    weight: np.ndarray
    jacobian: Callable | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=int))
        self.weight = np.asarray(self.weight, dtype=float)
        if self.weight.ndim != 3 or self.weight.shape[0] != self.states.shape[0]:
            raise ValueError(f"factor {self.name}: weight must be (B, p, p) with B = {len(self.states)}")
        if self.weight.shape[1] != self.weight.shape[2]:
            raise ValueError(f"factor {self.name}: weight blocks must be square")
        if self.states.shape[1] > 2:
            raise ValueError(f"factor {self.name}: at most two states per block")
        if self.states.shape[1] == 2 and np.any(np.abs(np.diff(self.states, axis=1)) != 1):
            raise ValueError(f"factor {self.name}: two-state blocks must link consecutive states")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def arity(self) -> int:
        return self.states.shape[1]

    @property
    def rows(self) -> int:
        return self.weight.shape[1]

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(self.error(*[states[self.states[:, s]] for s in range(self.arity)]))


@dataclass
class LeastSquaresProblem:
    kind: GroupKind
    x0: np.ndarray
    factors: list
    side: str = "right"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.ndim == 2:
            self.x0 = self.x0[None]
        if self.x0.shape[1:] != (self.kind.dim, self.kind.dim):
            raise ValueError("initial states must be an (N, m, m) stack")
        if self.side not in cstep.SIDES:
            raise ValueError(f"side must be 'right' or 'left', got {self.side!r}")
        for fac in self.factors:
            if fac.states.size and (fac.states.min() < 0 or fac.states.max() >= self.n_states):
                raise ValueError(f"factor {fac.name} references a state outside 0..{self.n_states - 1}")

    @classmethod
    def single(cls, kind: GroupKind, x0, error: Callable, weight, side: str = "right",
               jacobian: Callable | None = None) -> "LeastSquaresProblem":
        """One state and one error function ``error(X_matrix) -> (p,)``."""
        def batched(mats):
            return np.stack([np.asarray(error(M)) for M in mats])

        batched_jac = None
        if jacobian is not None:
            def batched_jac(mats):
                return np.stack([np.asarray(jacobian(M)) for M in mats])

        W = np.atleast_2d(np.asarray(weight, dtype=float))[None]
        x0 = getattr(x0, "matrix", x0)
        return cls(kind, np.asarray(x0)[None], [Factor("error", [[0]], batched, W, batched_jac)], side)

    @property
    def n_states(self) -> int:
        return self.x0.shape[0]

    @property
    def n_dof(self) -> int:
        return self.n_states * self.kind.dof

    @property
    def n_errors(self) -> int:
        return sum(f.size * f.rows for f in self.factors)

    def row_offsets(self) -> list[int]:
        """Start row of each factor in the stacked error vector."""
        offsets = [0]
        for f in self.factors:
            offsets.append(offsets[-1] + f.size * f.rows)
        return offsets

    def error(self, states) -> np.ndarray:
        return np.concatenate([f.evaluate(states).reshape(-1) for f in self.factors])

    def weight_blocks(self) -> list[np.ndarray]:
        return [W for f in self.factors for W in f.weight]

    def dense_weight(self) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*self.weight_blocks())

    def composite_kind(self) -> Composite:
        return Composite([self.kind] * self.n_states)

    def pack(self, states) -> GroupElement:
        from scipy.linalg import block_diag
        return GroupElement(self.composite_kind(), block_diag(*states))

    def unpack(self, X: GroupElement) -> np.ndarray:
        return np.stack(X.kind.blocks(X.matrix))

    def error_function(self) -> cstep.GroupFunction:
        """The stacked error as a function of one composite group element."""
        def f(X: GroupElement):
            return self.error(self.unpack(X))
        return f


@dataclass
class SolveOptions:
    max_iterations: int = 50
    step_tol: float = 1e-8
    cost_tol: float = 1e-10
    h: float = cstep.DEFAULT_STEP
    fd_step: float = cstep.DEFAULT_FD_STEP
    jacobian: str = "complex_step"  # complex_step | central | analytic
    linear_solver: str = "sparse"  # sparse | dense

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("step_tol", "cost_tol", "h", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.jacobian not in ("complex_step", "central", "analytic"):
            raise ValueError(f"unknown Jacobian backend {self.jacobian!r}")
        if self.linear_solver not in ("sparse", "dense"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    @property
    def step(self) -> float:
        return self.h if self.jacobian == "complex_step" else self.fd_step


@dataclass(frozen=True)
class IterationRecord:
    index: int
    cost: float
    step_norm: float
    jacobian_evaluations: int


@dataclass
class SolveResult:
    states: np.ndarray
    history: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def final_cost(self) -> float:
        return self.history[-1].cost

    @property
    def iterations(self) -> int:
        """Number of Gauss-Newton updates applied."""
        return len(self.history) - 1


def cost(problem: LeastSquaresProblem, states=None) -> float:
    """``0.5 e^T W e``."""
    states = problem.x0 if states is None else np.asarray(states)
    total = 0.0
    for f in problem.factors:
        e = np.asarray(f.evaluate(states))
        if not np.all(np.isfinite(e)):
            raise cstep.NonFiniteError(f"factor {f.name} produced a non-finite error")
        if np.iscomplexobj(e):
            e = np.real(e)
        total += 0.5 * float(np.einsum("bi,bij,bj->", e, f.weight, e))
    return total


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------

def factor_jacobians(problem: LeastSquaresProblem, states, options: SolveOptions):
    """Per-factor ``(B, p, a * n)`` Jacobian blocks and the number of calls made."""
    blocks = []
    calls = 0
    for f in problem.factors:
        mats = [states[f.states[:, s]] for s in range(f.arity)]
        if options.jacobian == "analytic":
            if f.jacobian is None:
                raise ValueError(f"factor {f.name} has no analytic Jacobian")
            J = np.asarray(f.jacobian(*mats), dtype=float)
        else:
            J, c = cstep.jacobian_batched(f.error, mats, problem.kind, problem.side,
                                          options.jacobian, options.step)
            calls += c
        expected = (f.size, f.rows, f.arity * problem.kind.dof)
        if J.shape != expected:
            raise ValueError(f"factor {f.name}: Jacobian has shape {J.shape}, expected {expected}")
        blocks.append(J)
    return blocks, calls


def scatter_jacobian(problem: LeastSquaresProblem, blocks) -> np.ndarray:
    """Dense ``(q, N n)`` Jacobian from per-factor blocks."""
    n = problem.kind.dof
    J = np.zeros((problem.n_errors, problem.n_dof))
    row = 0
    for f, Jb in zip(problem.factors, blocks):
        for b in range(f.size):
            for s in range(f.arity):
                k = f.states[b, s]
                J[row:row + f.rows, k * n:(k + 1) * n] = Jb[b, :, s * n:(s + 1) * n]
            row += f.rows
    return J


def dense_jacobian(problem: LeastSquaresProblem, states, options: SolveOptions):
    """Full Jacobian of the stacked error through the composite-group recasting.

    Complex-step and central differences perturb the composite element
    ``diag(X_0, ..., X_K)`` directly, one column at a time.
    """
    if options.jacobian == "analytic":
        blocks, _ = factor_jacobians(problem, states, options)
        return scatter_jacobian(problem, blocks), 0
    X = problem.pack(states)
    res = cstep.jacobian(problem.error_function(), X, options.jacobian, problem.side, options.step)
    return res.matrix, res.evaluations


# --------------------------------------------------------------------------
# Normal equations
# --------------------------------------------------------------------------

@dataclass
class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix: ``diag[k] = H[k, k]``, ``lower[k] = H[k+1, k]``."""

    diag: np.ndarray
    lower: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    def to_dense(self) -> np.ndarray:
        N, n, _ = self.diag.shape
        H = np.zeros((N * n, N * n))
        for k in range(N):
            H[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.diag[k]
            if k < N - 1:
                H[(k + 1) * n:(k + 2) * n, k * n:(k + 1) * n] = self.lower[k]
                H[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = self.lower[k].T
        return H

    def bandwidth(self, tol: float = 0.0) -> int:
        """Block bandwidth of the nonzero pattern."""
        return int(np.any(np.abs(self.lower) > tol)) if self.n_blocks > 1 else 0

    def cholesky(self):
        N, n, _ = self.diag.shape
        Ld = np.zeros_like(self.diag)
        Ll = np.zeros_like(self.lower)
        for k in range(N):
            S = self.diag[k] - (Ll[k - 1] @ Ll[k - 1].T if k > 0 else 0.0)
            try:
                Ld[k] = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                pivot = float(np.min(np.linalg.eigvalsh(0.5 * (S + S.T))))
                raise SingularSystemError(
                    f"normal matrix is not positive definite at state block {k} "
                    f"(smallest pivot eigenvalue {pivot:.3e})", block=k, pivot=pivot) from None
            if k < N - 1:
                Ll[k] = solve_triangular(Ld[k], self.lower[k].T, lower=True).T
        return Ld, Ll

    def solve(self, rhs) -> np.ndarray:
        N, n, _ = self.diag.shape
        Ld, Ll = self.cholesky()
        b = np.asarray(rhs, dtype=float).reshape(N, n)
        z = np.zeros_like(b)
        for k in range(N):
            r = b[k] - (Ll[k - 1] @ z[k - 1] if k > 0 else 0.0)
            z[k] = solve_triangular(Ld[k], r, lower=True)
        x = np.zeros_like(b)
        for k in range(N - 1, -1, -1):
            r = z[k] - (Ll[k].T @ x[k + 1] if k < N - 1 else 0.0)
            x[k] = solve_triangular(Ld[k], r, lower=True, trans="T")
        return x.reshape(-1)


def assemble_sparse_normal(problem: LeastSquaresProblem, states, blocks, debug: bool = False):
    """Block-tridiagonal ``J^T W J`` and right-hand side ``-J^T W e``.

    With ``debug`` the result is cross-checked against dense assembly from the
    composite complex-step Jacobian, which catches factors whose declared state
    dependencies miss a nonzero Jacobian entry.
    """
    N, n = problem.n_states, problem.kind.dof
    D = np.zeros((N, n, n))
    L = np.zeros((max(N - 1, 0), n, n))
    g = np.zeros((N, n))
    for f, Jb in zip(problem.factors, blocks):
        e = np.real(f.evaluate(states))
        JtW = np.einsum("bpi,bpq->biq", Jb, f.weight)
        H = JtW @ Jb
        r = -np.einsum("biq,bq->bi", JtW, e)
        for s in range(f.arity):
            np.add.at(D, f.states[:, s], H[:, s * n:(s + 1) * n, s * n:(s + 1) * n])
            np.add.at(g, f.states[:, s], r[:, s * n:(s + 1) * n])
        if f.arity == 2:
            i, j = f.states[:, 0], f.states[:, 1]
            Hji = H[:, n:, :n]
            fwd = j > i
            np.add.at(L, i[fwd], Hji[fwd])
            np.add.at(L, j[~fwd], np.swapaxes(Hji[~fwd], 1, 2))
    system = BlockTridiagonal(D, L)
    if debug:
        J, _ = dense_jacobian(problem, states, SolveOptions())
        W = problem.dense_weight()
        H_dense = J.T @ W @ J
        scale = max(1.0, np.max(np.abs(H_dense)))
        mismatch = np.max(np.abs(system.to_dense() - H_dense)) / scale
        if mismatch > 1e-8:
            raise ValueError(f"declared state dependencies disagree with the Jacobian "
                             f"(relative mismatch {mismatch:.3e})")
    return system, g.reshape(-1)


def _dense_solve(H, rhs):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        idx = int(np.argmax(np.abs(V[:, 0])))
        raise SingularSystemError(
            f"normal matrix is not positive definite (smallest pivot eigenvalue {w[0]:.3e}, "
            f"dominant coordinate {idx})", block=idx, pivot=float(w[0])) from None
    z = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L, z, lower=True, trans="T")


def normal_equations(problem: LeastSquaresProblem, states, options: SolveOptions):
    """Return ``(H, rhs, evaluations)``; ``H`` is dense or :class:`BlockTridiagonal`."""
    if options.linear_solver == "dense":
        J, evals = dense_jacobian(problem, states, options)
        W = problem.dense_weight()
        e = np.real(problem.error(states))
        JtW = J.T @ W
        return JtW @ J, -JtW @ e, evals
    blocks, evals = factor_jacobians(problem, states, options)
    H, rhs = assemble_sparse_normal(problem, states, blocks)
    return H, rhs, evals


def gauss_newton_step(problem: LeastSquaresProblem, states, options: SolveOptions | None = None):
    """Solve for the step ``d``; returns ``(d, evaluations)``."""
    options = options or SolveOptions()
    H, rhs, evals = normal_equations(problem, states, options)
    if isinstance(H, BlockTridiagonal):
        return H.solve(rhs), evals
    return _dense_solve(H, rhs), evals


def apply_update(kind: GroupKind, states, delta, side: str = "right") -> np.ndarray:
    """``X_k exp(d_k^)`` (right) or ``exp(d_k^) X_k`` (left) for every state."""
    states = np.asarray(states)
    E = kind.exp(np.asarray(delta, dtype=float).reshape(states.shape[0], kind.dof))
    return states @ E if side == "right" else E @ states


def solve(problem: LeastSquaresProblem, options: SolveOptions | None = None,
          callback: Callable | None = None) -> SolveResult:
    """Plain Gauss-Newton until the step or the cost change falls under tolerance."""
    options = options or SolveOptions()
    states = np.array(problem.x0)
    history = []
    prev = None
    for it in range(options.max_iterations):
        J = cost(problem, states)
        if not math.isfinite(J):
            raise cstep.NonFiniteError(f"cost is not finite at iteration {it}")
        if prev is not None and abs(prev - J) < options.cost_tol:
            history.append(IterationRecord(it, J, 0.0, 0))
            return SolveResult(states, history, True, "cost change below tolerance")
        delta, evals = gauss_newton_step(problem, states, options)
        step_norm = float(np.linalg.norm(delta))
        history.append(IterationRecord(it, J, step_norm, evals))
        if callback is not None:
            callback(history[-1])
        if step_norm < options.step_tol:
            return SolveResult(states, history, True, "step norm below tolerance")
        states = apply_update(problem.kind, states, delta, problem.side)
        prev = J
    history.append(IterationRecord(options.max_iterations, cost(problem, states), math.nan, 0))
    return SolveResult(states, history, False, "maximum iterations reached")


def posterior_covariance(problem: LeastSquaresProblem, states, options: SolveOptions | None = None):
    """Per-state ``(N, n, n)`` covariance blocks from the inverse of ``J^T W J``."""
    options = options or SolveOptions()
    H, _, _ = normal_equations(problem, states, options)
    if isinstance(H, BlockTridiagonal):
        H = H.to_dense()
    n = problem.kind.dof
    L = np.linalg.cholesky(H)
    Linv = solve_triangular(L, np.eye(H.shape[0]), lower=True)
    cov = Linv.T @ Linv
    return np.stack([cov[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(problem.n_states)])


def write_convergence_csv(history: Sequence[IterationRecord], target) -> str:
    lines = ["iter,cost,step_norm"]
    for r in history:
        lines.append(f"{r.index},{r.cost:.17e},{r.step_norm:.17e}")
    text = "\n".join(lines) + "\n"
    if target is not None:
        Path(target).write_text(text, encoding="utf-8")
    return text


def read_convergence_csv(source) -> list[IterationRecord]:
    with open(source, newline="", encoding="utf-8") as fh:
        return [IterationRecord(int(r["iter"]), float(r["cost"]), float(r["step_norm"]), 0)
                for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# Pose-alignment test problem: e(T) = log(T^-1 T_ref)
# --------------------------------------------------------------------------

def pose_alignment_problem(T0: GroupElement, T_ref: GroupElement, W, side: str = "left"):
    """Single-pose problem ``e(T) = log(T^-1 T_ref)^v`` with its first-order Jacobian.

    The analytic Jacobian is ``-Ad(T^-1)`` for left perturbations and ``-1`` for
    right ones; both drop the higher BCH terms.
    """
    kind = T0.kind
    Tr = np.asarray(T_ref.matrix)

    def error(T):
        return kind.log(kind.inverse(T) @ Tr)

    def jac(T):
        if side == "left":
            return -kind.adjoint(kind.inverse(T))
        return -np.eye(kind.dof)

    return LeastSquaresProblem.single(kind, T0.matrix, error, W, side, jac)
