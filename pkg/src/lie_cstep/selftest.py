"""Invariant suites run by ``lie-cstep selftest``.

Every suite is seeded and prints only pass/fail plus a rounded worst-case
figure, so two runs produce identical summaries. Group maps are looked up on
the ``groups`` module at call time, which lets a test swap in a broken
implementation and watch the relevant suite fail.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cstep, estimation, groups, solver

KINDS = ("SO3", "SE2", "SE3", "SE23")
DRAWS = 50


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.1e} (tol {self.tolerance:.0e})"


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(20240 + tag)


def suite_roundtrip():
    """log(exp(xi)) = xi and exp(log(X)) = X."""
    worst = 0.0
    rng = _rng(1)
    for name in KINDS:
        kind = groups.KINDS[name]
        for _ in range(DRAWS):
            xi = groups.random_tangent(kind, rng)
            X = groups.exp_map(xi, kind)
            worst = max(worst, np.max(np.abs(groups.log_map(X) - xi)))
            Y = groups.exp_map(groups.log_map(X), kind)
            worst = max(worst, np.max(np.abs(Y.matrix - X.matrix)))
    return worst, 1e-10


def suite_series():
    """Small-angle series against the closed forms just above the switch point."""
    worst = 0.0
    for phi in (2e-6, 5e-6, 1e-5, 1e-4):
        x = phi * phi
        pairs = [
            (groups._sinc(x), np.sin(phi) / phi),
            (groups._cosc(x), 2.0 * np.sin(phi / 2) ** 2 / x),
            (groups._sinc3(x), (phi - np.sin(phi)) / phi ** 3),
        ]
        for series_like, closed in pairs:
            worst = max(worst, abs(series_like - closed) / abs(closed))
    # and the series branch itself against a long Taylor sum
    for phi in (1e-7, 5e-7, 9e-7):
        x = phi * phi
        terms = [(-x) ** k / np.prod(np.arange(1, 2 * k + 2, dtype=float)) for k in range(30)]
        worst = max(worst, abs(groups._sinc(x) - sum(terms)))
    return worst, 1e-9


def suite_adjoint():
    """(Ad(X) z)^ = X z^ X^-1."""
    worst = 0.0
    rng = _rng(2)
    for name in KINDS:
        kind = groups.KINDS[name]
        for _ in range(DRAWS):
            X = groups.random_element(kind, rng).matrix
            z = rng.standard_normal(kind.dof)
            lhs = kind.wedge(kind.adjoint(X) @ z)
            rhs = X @ kind.wedge(z) @ kind.inverse(X)
            worst = max(worst, np.max(np.abs(lhs - rhs)))
    return worst, 1e-10


def suite_odot():
    """xi^ p = p^odot xi."""
    worst = 0.0
    rng = _rng(3)
    for name in ("SE2", "SE3", "SE23"):
        kind = groups.KINDS[name]
        for _ in range(DRAWS):
            xi = rng.standard_normal(kind.dof)
            p = rng.standard_normal(kind.dim)
            worst = max(worst, np.max(np.abs(kind.wedge(xi) @ p - kind.odot(p) @ xi)))
    return worst, 1e-12


def suite_left_right():
    """Complex-step left Jacobian equals the right one times Ad(X^-1)."""
    worst = 0.0
    rng = _rng(4)
    for name in ("SE2", "SE3", "SE23"):
        kind = groups.KINDS[name]
        for _ in range(10):
            X = groups.random_element(kind, rng)
            p = rng.standard_normal(kind.dim)
            def f(Y):
                return Y.matrix @ p
            Jr = cstep.jacobian_right(f, X).matrix
            Jl = cstep.jacobian_left(f, X).matrix
            rel = np.max(np.abs(Jl @ X.adjoint() - Jr)) / np.max(np.abs(Jr))
            worst = max(worst, rel)
    return worst, 1e-12


def suite_composite():
    """exp of a block-diagonal tangent is the block diagonal of the exps."""
    worst = 0.0
    rng = _rng(5)
    kinds = [groups.SE3, groups.SE2, groups.SO3, groups.SE23]
    comp = groups.Composite(kinds)
    for _ in range(DRAWS):
        parts = [groups.random_tangent(k, rng) for k in kinds]
        X = groups.exp_map(np.concatenate(parts), comp)
        blocks = comp.blocks(X.matrix)
        for k, xi, B in zip(kinds, parts, blocks):
            worst = max(worst, np.max(np.abs(B - groups.exp_map(xi, k).matrix)))
        worst = max(worst, np.max(np.abs(groups.log_map(X) - np.concatenate(parts))))
    return worst, 1e-10


def suite_step_insensitivity():
    """Complex-step Jacobians agree across h = 1e-12 .. 1e-30."""
    rng = _rng(6)
    v, y, T = cstep.random_pose_bilinear(rng)
    f = cstep.pose_bilinear(v, y)
    J_ref = cstep.pose_bilinear_left_jacobian(v, y, T)
    worst = 0.0
    for e in range(12, 31, 2):
        J = cstep.jacobian_left(f, T, 10.0 ** -e).matrix
        worst = max(worst, cstep.relative_error(J, J_ref))
    return worst, 1e-13


def suite_evaluation_counts():
    """n calls for complex-step, 2n for central differences."""
    rng = _rng(7)
    bad = 0
    for name in KINDS:
        kind = groups.KINDS[name]
        X = groups.random_element(kind, rng)
        f = cstep.CountingFunction(lambda Y: Y.matrix.reshape(-1))
        res = cstep.jacobian_right(f, X)
        bad += (f.calls != kind.dof) + (res.evaluations != kind.dof)
        f.calls = 0
        res = cstep.jacobian_central(f, X)
        bad += (f.calls != 2 * kind.dof) + (res.evaluations != 2 * kind.dof)
    return float(bad), 0.5


def suite_determinism():
    """Same seed, same solve history and same synthetic data."""
    from . import data

    def once():
        rng = np.random.default_rng(11)
        T0 = groups.random_element(groups.SE3, rng)
        Tr = groups.random_element(groups.SE3, rng)
        res = solver.solve(solver.pose_alignment_problem(T0, Tr, np.eye(6)))
        run = data.generate_synthetic("unicycle_se2", 4.0, 3)
        return [r.cost for r in res.history], run.measurements.values, run.inputs

    a, b = once(), once()
    same = a[0] == b[0] and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
    return 0.0 if same else 1.0, 0.5


def suite_dead_reckon_consistency():
    """Process errors vanish on a dead-reckoned chain."""
    rng = _rng(8)
    K = 30
    times = np.cumsum(np.r_[0.0, rng.uniform(0.02, 0.06, K)])
    u = rng.standard_normal((K, 6))
    model = estimation.ProcessModel("imu_se23", groups.SE23)
    X = estimation.dead_reckon(groups.random_element(groups.SE23, rng).matrix, u, model, times)
    e = estimation.error_process(X[1:], X[:-1], u, model, np.diff(times))
    return float(np.max(np.abs(e))), 1e-12


SUITES = {
    "exp/log roundtrip": suite_roundtrip,
    "series oracle": suite_series,
    "adjoint identity": suite_adjoint,
    "odot identity": suite_odot,
    "left/right Jacobian relation": suite_left_right,
    "composite block exp": suite_composite,
    "step-size insensitivity": suite_step_insensitivity,
    "evaluation counts": suite_evaluation_counts,
    "determinism": suite_determinism,
    "dead-reckoning consistency": suite_dead_reckon_consistency,
}


def run_all() -> list[SuiteResult]:
    results = []
    for name, suite in SUITES.items():
        try:
            worst, tol = suite()
            results.append(SuiteResult(name, bool(worst <= tol), float(worst), tol))
        except Exception:  # a crashing suite is a failing suite
            results.append(SuiteResult(name, False, float("inf"), 0.0))
    return results
