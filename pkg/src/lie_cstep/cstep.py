"""Complex-step and finite-difference Jacobians of functions on matrix Lie groups.

A function ``f`` of a group element is differentiated through a perturbation of
its argument, either on the right, ``X = Xbar exp(eps^)``, or on the left,
``X = exp(eps^) Xbar``. Column ``i`` of the complex-step Jacobian is
``Im f(Xbar exp(j h e_i^)) / h`` and costs one evaluation of ``f``.

``f`` must take a :class:`~lie_cstep.groups.GroupElement` and return a flat
vector (or scalar) built only from operations that keep it analytic. Matrix
valued functions have to be vectorised by the caller.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .groups import SE3, GroupElement, random_element

DEFAULT_STEP = 1e-20
DEFAULT_FD_STEP = 1e-6

GroupFunction = Callable[[GroupElement], np.ndarray]

SIDES = ("right", "left")
METHODS = ("complex_step", "central", "forward")


class NonFiniteError(FloatingPointError):
    """The differentiated function produced NaN or Inf."""


@dataclass(frozen=True)
class JacobianResult:
    matrix: np.ndarray
    side: str
    step: float
    evaluations: int
    method: str = "complex_step"

    @property
    def shape(self):
        return self.matrix.shape


class CountingFunction:
    """Wrap ``f`` and count calls; handy for checking evaluation budgets."""

    def __init__(self, f: Callable):
        self.f = f
        self.calls = 0

    def __call__(self, *args, **kwargs):
        self.calls += 1
        return self.f(*args, **kwargs)


def _check_side(side):
    if side not in SIDES:
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")


def _check_step(h):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")


def _as_output(y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.ndim != 1:
        raise ValueError(f"function must return a flat vector, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("function returned a non-finite value")
    return y


def perturb(X: GroupElement, xi, side: str = "right") -> GroupElement:
    """``X exp(xi^)`` on the right or ``exp(xi^) X`` on the left."""
    E = X.kind.exp(np.asarray(xi))
    if side == "right":
        return GroupElement(X.kind, X.kind.compose(X.matrix, E))
    return GroupElement(X.kind, X.kind.compose(E, X.matrix))


def complex_step_scalar(f: Callable, x: float, h: float = DEFAULT_STEP) -> float:
    """Derivative of a real analytic scalar function as ``Im f(x + jh) / h``."""
    _check_step(h)
    y = f(complex(x, h))
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("function returned a non-finite value")
    return np.imag(y) / h


def _complex_step(f, X: GroupElement, h, side, check_real):
    _check_step(h)
    _check_side(side)
    if not X.is_real:
        raise ValueError("the nominal point must be real for a complex-step Jacobian")
    X = X.real()
    n = X.kind.dof
    evaluations = 0
    if check_real:
        y0 = np.asarray(f(X))
        evaluations += 1
        if np.iscomplexobj(y0) and np.any(np.imag(y0) != 0):
            raise ValueError("f is not real at the nominal point")
    cols = []
    basis = np.eye(n)
    for i in range(n):
        y = _as_output(f(perturb(X, 1j * h * basis[i], side)))
        evaluations += 1
        cols.append(np.imag(y) / h)
    return JacobianResult(np.stack(cols, axis=1), side, h, evaluations, "complex_step")


def jacobian_right(f: GroupFunction, X: GroupElement, h: float = DEFAULT_STEP,
                   check_real: bool = False) -> JacobianResult:
    """Complex-step right Jacobian, one evaluation of ``f`` per column.

    With ``check_real`` the function is also evaluated at ``X`` to confirm it is
    real there; that costs one extra (counted) evaluation.
    """
    return _complex_step(f, X, h, "right", check_real)


def jacobian_left(f: GroupFunction, X: GroupElement, h: float = DEFAULT_STEP,
                  check_real: bool = False) -> JacobianResult:
    """Complex-step left Jacobian, perturbing as ``exp(j h e_i^) X``."""
    return _complex_step(f, X, h, "left", check_real)


def jacobian_central(f: GroupFunction, X: GroupElement, h: float = DEFAULT_FD_STEP,
                     side: str = "right") -> JacobianResult:
    _check_step(h)
    _check_side(side)
    n = X.kind.dof
    basis = np.eye(n)
    cols = []
    for i in range(n):
        fp = _as_output(f(perturb(X, h * basis[i], side)))
        fm = _as_output(f(perturb(X, -h * basis[i], side)))
        cols.append(np.real(fp - fm) / (2.0 * h))
    return JacobianResult(np.stack(cols, axis=1), side, h, 2 * n, "central")


def jacobian_forward(f: GroupFunction, X: GroupElement, h: float = DEFAULT_FD_STEP,
                     side: str = "right") -> JacobianResult:
    _check_step(h)
    _check_side(side)
    n = X.kind.dof
    basis = np.eye(n)
    f0 = _as_output(f(X))
    cols = [np.real(_as_output(f(perturb(X, h * basis[i], side))) - f0) / h for i in range(n)]
    return JacobianResult(np.stack(cols, axis=1), side, h, n + 1, "forward")


def jacobian(f: GroupFunction, X: GroupElement, method: str = "complex_step",
             side: str = "right", h: float | None = None) -> JacobianResult:
    if method == "complex_step":
        return _complex_step(f, X, DEFAULT_STEP if h is None else h, side, False)
    if method == "central":
        return jacobian_central(f, X, DEFAULT_FD_STEP if h is None else h, side)
    if method == "forward":
        return jacobian_forward(f, X, DEFAULT_FD_STEP if h is None else h, side)
    raise ValueError(f"unknown Jacobian method {method!r}")


def jacobian_batched(f: Callable, states: Sequence[np.ndarray], kind, side: str = "right",
                     method: str = "complex_step", h: float | None = None):
    """Jacobians of many independent error blocks sharing one vectorised function.

    ``f(*states)`` maps ``a`` stacks of ``(B, m, m)`` matrices to a ``(B, p)``
    array where row ``b`` depends only on ``states[s][b]``. Every column of the
    ``(B, p, a * n)`` result comes from one call of ``f`` (two for central
    differences), so the returned call count is ``a * n`` or ``2 * a * n``.
    """
    _check_side(side)
    h = (DEFAULT_STEP if method == "complex_step" else DEFAULT_FD_STEP) if h is None else h
    _check_step(h)
    states = [np.asarray(X) for X in states]
    n = kind.dof
    basis = np.eye(n)

    def shifted(s, xi):
        E = kind.exp(xi)
        args = list(states)
        args[s] = states[s] @ E if side == "right" else E @ states[s]
        return np.asarray(f(*args))

    cols = []
    calls = 0
    for s in range(len(states)):
        for i in range(n):
            if method == "complex_step":
                y = shifted(s, 1j * h * basis[i])
                calls += 1
                cols.append(np.imag(y) / h)
            elif method == "central":
                y = np.real(shifted(s, h * basis[i]) - shifted(s, -h * basis[i]))
                calls += 2
                cols.append(y / (2.0 * h))
            else:
                raise ValueError(f"unsupported batched method {method!r}")
    J = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(J)):
        raise NonFiniteError("function returned a non-finite value")
    return J, calls


def relative_error(J, J_ref) -> float:
    """Relative 2-norm (Frobenius for matrices) of ``J - J_ref``."""
    J = np.asarray(getattr(J, "matrix", J))
    J_ref = np.asarray(getattr(J_ref, "matrix", J_ref))
    return float(np.linalg.norm(J - J_ref) / np.linalg.norm(J_ref))


# --------------------------------------------------------------------------
# Step-size sweeps
# --------------------------------------------------------------------------

@dataclass
class SweepReport:
    rows: list = field(default_factory=list)  # (h, method, rel_error)
    reference: str = "analytic"

    def methods(self) -> list[str]:
        seen = []
        for _, m, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return seen

    def curve(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [(h, e) for h, m, e in self.rows if m == method]
        h, e = zip(*pts)
        return np.array(h), np.array(e)

    def floor(self, method: str) -> float:
        return float(np.min(self.curve(method)[1]))

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "method", "rel_error"])
        for h, m, e in self.rows:
            w.writerow([f"{h:.17e}", m, f"{e:.17e}"])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source, reference: str = "analytic") -> "SweepReport":
        text = Path(source).read_text(encoding="utf-8")
        reader = csv.DictReader(io.StringIO(text))
        rows = [(float(r["h"]), r["method"], float(r["rel_error"])) for r in reader]
        return cls(rows, reference)


def decade_steps(h_max: float = 1e-1, h_min: float = 1e-20) -> list[float]:
    """One step per decade from ``h_max`` down to ``h_min`` inclusive."""
    hi, lo = round(math.log10(h_max)), round(math.log10(h_min))
    if hi < lo:
        raise ValueError("h_max must not be smaller than h_min")
    return [float(f"1e{k}") for k in range(hi, lo - 1, -1)]


def step_sweep(f: GroupFunction, X: GroupElement, reference, h_list: Iterable[float],
               side: str = "left",
               methods: Sequence[str] = ("complex_step", "central")) -> SweepReport:
    """Relative error of each method against ``reference`` for every step size.

    ``reference`` is an analytic Jacobian (array) or ``None``, in which case a
    complex-step Jacobian at ``h = 1e-20`` is used and labelled as such.
    """
    h_list = sorted({float(h) for h in h_list}, reverse=True)
    if not h_list:
        raise ValueError("h_list must not be empty")
    if h_list[-1] <= 0:
        raise ValueError("step sizes must be positive")
    if reference is None:
        J_ref = jacobian(f, X, "complex_step", side, DEFAULT_STEP).matrix
        tag = f"complex_step(h={DEFAULT_STEP:g})"
    else:
        J_ref = np.asarray(getattr(reference, "matrix", reference))
        tag = "analytic"
    rows = []
    for h in h_list:
        for m in methods:
            J = jacobian(f, X, m, side, h)
            rows.append((h, m, relative_error(J.matrix, J_ref)))
    return SweepReport(rows, tag)


# --------------------------------------------------------------------------
# Scalar function of a pose: f(T) = v^T T y
# --------------------------------------------------------------------------

def pose_bilinear(v, y) -> GroupFunction:
    """``f(T) = v^T T y`` for homogeneous 4-vectors ``v`` and ``y``."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)

    def f(T: GroupElement):
        return np.atleast_1d(v @ T.matrix @ y)

    return f


def pose_bilinear_left_jacobian(v, y, T: GroupElement) -> np.ndarray:
    """Analytic left Jacobian ``v^T (T y)^odot`` as a 1 x 6 row."""
    v = np.asarray(v, dtype=float)
    return (v @ SE3.odot(T.matrix @ np.asarray(y, dtype=float)))[None, :]


def random_pose_bilinear(rng: np.random.Generator):
    """Random ``(v, y, Tbar)`` for the bilinear pose function."""
    v = rng.standard_normal(4)
    y = rng.standard_normal(4)
    return v, y, random_element(SE3, rng)
