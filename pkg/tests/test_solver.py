import numpy as np
import pytest

from lie_cstep import groups as g
from lie_cstep import solver
from lie_cstep.groups import SE2, SE3, Rn
from lie_cstep.solver import Factor, LeastSquaresProblem, SolveOptions


def chain_problem(K=20, seed=0, side="right"):
    """SE(3) chain: absolute pose factors on every state, relative factors between neighbours."""
    rng = np.random.default_rng(seed)
    truth = np.stack([g.random_element(SE3, rng).matrix for _ in range(K + 1)])
    meas_abs = truth @ SE3.exp(0.05 * rng.standard_normal((K + 1, 6)))
    rel = SE3.inverse(truth[:-1]) @ truth[1:] @ SE3.exp(0.01 * rng.standard_normal((K, 6)))

    def abs_err(X):
        return SE3.log(SE3.inverse(X) @ meas_abs)

    def rel_err(A, B):
        return SE3.log(SE3.inverse(B) @ A @ rel)

    W_abs = np.tile(np.eye(6), (K + 1, 1, 1))
    W_rel = np.tile(100 * np.eye(6), (K, 1, 1))
    factors = [Factor("abs", np.arange(K + 1)[:, None], abs_err, W_abs),
               Factor("rel", np.stack([np.arange(K), np.arange(1, K + 1)], 1), rel_err, W_rel)]
    x0 = truth @ SE3.exp(0.2 * rng.standard_normal((K + 1, 6)))
    return LeastSquaresProblem(SE3, x0, factors, side), truth


def scalar_problem(c=3.0, x=0.5):
    kind = Rn(1)
    X = kind.exp(np.array([x]))
    return LeastSquaresProblem.single(kind, X, lambda M: np.array([M[0, 1] - c]), np.eye(1))


# ---- cost ----------------------------------------------------------------------

def test_cost_trivial_values():
    kind = Rn(2)
    p = LeastSquaresProblem.single(kind, kind.identity(), lambda M: np.array([1.0, 1.0]), np.eye(2))
    assert solver.cost(p) == 1.0
    p0 = LeastSquaresProblem.single(kind, kind.identity(), lambda M: np.zeros(2), np.eye(2))
    assert solver.cost(p0) == 0.0


def test_cost_rejects_non_finite():
    kind = Rn(1)
    p = LeastSquaresProblem.single(kind, kind.identity(), lambda M: np.array([np.nan]), np.eye(1))
    with pytest.raises(FloatingPointError):
        solver.cost(p)


def test_pose_alignment_cost_zero_at_reference():
    I = g.GroupElement.identity(SE3)
    assert solver.cost(solver.pose_alignment_problem(I, I, np.eye(6))) == 0.0
    T = g.random_element(SE3, np.random.default_rng(0))
    assert solver.cost(solver.pose_alignment_problem(T, T, np.eye(6))) < 1e-30


# ---- step and update ------------------------------------------------------------

def test_scalar_linear_residual_step_is_exact():
    p = scalar_problem(3.0, 0.5)
    for jac in ("complex_step", "central"):
        d, _ = solver.gauss_newton_step(p, p.x0, SolveOptions(jacobian=jac))
        assert d[0] == pytest.approx(2.5, abs=1e-9 if jac == "central" else 1e-15)


def test_zero_error_gives_zero_step():
    I = g.GroupElement.identity(SE3)
    p = solver.pose_alignment_problem(I, I, np.eye(6))
    d, _ = solver.gauss_newton_step(p, p.x0)
    assert np.all(d == 0)


@pytest.mark.parametrize("side", ["left", "right"])
def test_pose_alignment_single_step(side):
    rng = np.random.default_rng(2)
    T0, Tr = g.random_element(SE3, rng), g.random_element(SE3, rng)
    p = solver.pose_alignment_problem(T0, Tr, np.eye(6), side)
    d, _ = solver.gauss_newton_step(p, p.x0)
    X1 = solver.apply_update(SE3, p.x0, d, side)
    assert np.linalg.norm(p.error(X1)) <= 1e-10


def test_apply_update_properties():
    rng = np.random.default_rng(3)
    X = np.stack([g.random_element(SE3, rng).matrix for _ in range(2)])
    d = rng.standard_normal(12)
    assert np.array_equal(solver.apply_update(SE3, X, np.zeros(12)), X)
    for side in ("left", "right"):
        back = solver.apply_update(SE3, solver.apply_update(SE3, X, d, side), -d, side)
        assert np.allclose(back, X, atol=1e-12)
    Y = solver.apply_update(SE3, X, np.r_[d[:6], np.zeros(6)])
    assert np.array_equal(Y[1], X[1]) and np.allclose(Y[0], X[0] @ SE3.exp(d[:6]))


def test_singular_system_names_pivot():
    kind = Rn(2)
    p = LeastSquaresProblem.single(kind, kind.identity(), lambda M: np.array([M[0, 2]]), np.eye(1))
    for ls in ("dense", "sparse"):
        with pytest.raises(solver.SingularSystemError) as err:
            solver.gauss_newton_step(p, p.x0, SolveOptions(linear_solver=ls))
        assert "pivot" in str(err.value)


def test_quadratic_model_error_is_third_order():
    p, _ = chain_problem(K=3, seed=4)
    opts = SolveOptions(linear_solver="dense")
    J, _ = solver.dense_jacobian(p, p.x0, opts)
    W = p.dense_weight()
    e0 = p.error(p.x0)
    d, _ = solver.gauss_newton_step(p, p.x0, opts)

    def model_gap(s):
        e_lin = e0 + J @ (s * d)
        actual = solver.cost(p, solver.apply_update(SE3, p.x0, s * d))
        return abs(actual - 0.5 * e_lin @ W @ e_lin)

    # the cost gap is dominated by e^T W (second-order error), so check the error itself
    def err_gap(s):
        return np.linalg.norm(p.error(solver.apply_update(SE3, p.x0, s * d)) - (e0 + J @ (s * d)))

    r1 = err_gap(1e-2) / err_gap(5e-3)
    assert 3.5 < r1 < 4.5  # residual error O(|d|^2)
    assert model_gap(1e-2) > model_gap(5e-3)


# ---- sparse assembly --------------------------------------------------------------

def test_chain_hessian_is_block_tridiagonal():
    p, _ = chain_problem(K=3, seed=5)
    blocks, _ = solver.factor_jacobians(p, p.x0, SolveOptions())
    H, _ = solver.assemble_sparse_normal(p, p.x0, blocks, debug=True)
    dense = H.to_dense()
    assert H.bandwidth() == 1
    n = 6
    assert np.all(dense[:n, 2 * n:] == 0) and np.any(dense[:n, n:2 * n] != 0)


def test_sparse_matches_dense_assembly_and_solve():
    p, _ = chain_problem(K=20, seed=6)
    opts = SolveOptions()
    blocks, _ = solver.factor_jacobians(p, p.x0, opts)
    H, rhs = solver.assemble_sparse_normal(p, p.x0, blocks)
    J, _ = solver.dense_jacobian(p, p.x0, opts)
    W = p.dense_weight()
    Hd = J.T @ W @ J
    assert np.max(np.abs(H.to_dense() - Hd)) <= 1e-10 * np.max(np.abs(Hd))
    assert np.allclose(rhs, -J.T @ W @ p.error(p.x0), rtol=1e-10, atol=1e-10)
    ds, _ = solver.gauss_newton_step(p, p.x0, SolveOptions(linear_solver="sparse"))
    dd, _ = solver.gauss_newton_step(p, p.x0, SolveOptions(linear_solver="dense"))
    assert np.max(np.abs(ds - dd)) < 1e-9


def test_single_state_problem_is_dense_block():
    T0, Tr = (g.random_element(SE3, np.random.default_rng(7)) for _ in range(2))
    p = solver.pose_alignment_problem(T0, Tr, np.eye(6))
    blocks, _ = solver.factor_jacobians(p, p.x0, SolveOptions())
    H, _ = solver.assemble_sparse_normal(p, p.x0, blocks)
    assert H.diag.shape == (1, 6, 6) and H.lower.shape == (0, 6, 6)


def test_debug_mode_detects_undeclared_dependency():
    rng = np.random.default_rng(8)
    x0 = np.stack([g.random_element(SE2, rng).matrix for _ in range(3)])
    hidden = {"X2": x0[2]}

    def sneaky(X):  # secretly reads a state it did not declare
        return SE2.log(SE2.inverse(X) @ hidden["X2"])

    p = LeastSquaresProblem(SE2, x0, [Factor("sneaky", [[0]], sneaky, np.eye(3)[None]),
                                      Factor("abs", [[1], [2]], lambda X: SE2.log(X), np.tile(np.eye(3), (2, 1, 1)))])
    blocks, _ = solver.factor_jacobians(p, x0, SolveOptions())
    solver.assemble_sparse_normal(p, x0, blocks, debug=True)  # consistent so far

    orig = p.error_function

    def leaky_error_function():
        f = orig()

        def wrapped(X):
            states = p.unpack(X)
            hidden["X2"] = states[2]
            return f(X)
        return wrapped
    p.error_function = leaky_error_function
    with pytest.raises(ValueError, match="dependencies"):
        solver.assemble_sparse_normal(p, x0, blocks, debug=True)


def test_factor_validation():
    with pytest.raises(ValueError):
        Factor("bad", [[0, 2]], lambda A, B: A, np.eye(3)[None])
    with pytest.raises(ValueError):
        Factor("bad", [[0]], lambda A: A, np.eye(3))
    with pytest.raises(ValueError):
        LeastSquaresProblem(SE2, np.eye(3), [Factor("f", [[1]], lambda A: A, np.eye(3)[None])])


# ---- solve --------------------------------------------------------------------------

def test_solve_from_optimum_is_one_record():
    I = g.GroupElement.identity(SE3)
    res = solver.solve(solver.pose_alignment_problem(I, I, np.eye(6)))
    assert len(res.history) == 1 and res.history[0].step_norm == 0.0 and res.converged
    T = g.random_element(SE3, np.random.default_rng(9))
    res = solver.solve(solver.pose_alignment_problem(T, T, np.eye(6)))
    assert len(res.history) == 1 and res.history[0].step_norm < 1e-15


def test_pose_alignment_history():
    rng = np.random.default_rng(10)
    T0, Tr = g.random_element(SE3, rng), g.random_element(SE3, rng)
    for jac in ("complex_step", "analytic", "central"):
        res = solver.solve(solver.pose_alignment_problem(T0, Tr, np.eye(6)), SolveOptions(jacobian=jac))
        assert 2 <= len(res.history) <= 3
        assert [r.index for r in res.history] == list(range(len(res.history)))
        if jac != "central":
            assert res.history[1].cost <= 1e-18


def test_backend_equivalence_on_pose_alignment():
    rng = np.random.default_rng(11)
    T0, Tr = g.random_element(SE3, rng), g.random_element(SE3, rng)
    p = solver.pose_alignment_problem(T0, Tr, np.eye(6))
    dc, _ = solver.gauss_newton_step(p, p.x0, SolveOptions(jacobian="complex_step"))
    da, _ = solver.gauss_newton_step(p, p.x0, SolveOptions(jacobian="analytic"))
    assert np.max(np.abs(dc - da)) < 1e-8


def test_chain_converges_and_is_deterministic():
    p, truth = chain_problem(K=10, seed=12)
    a = solver.solve(p)
    b = solver.solve(p)
    assert a.converged and len(a.history) < 10
    assert [r.cost for r in a.history] == [r.cost for r in b.history]
    assert a.final_cost < a.history[0].cost


def test_max_iterations_adds_final_record():
    p, _ = chain_problem(K=4, seed=13)
    res = solver.solve(p, SolveOptions(max_iterations=1))
    assert not res.converged and len(res.history) == 2 and np.isnan(res.history[-1].step_norm)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(max_iterations=0)
    with pytest.raises(ValueError):
        SolveOptions(step_tol=0)
    with pytest.raises(ValueError):
        SolveOptions(jacobian="magic")
    with pytest.raises(ValueError):
        SolveOptions(linear_solver="qr")


def test_convergence_csv_roundtrip(tmp_path):
    T0, Tr = (g.random_element(SE3, np.random.default_rng(14)) for _ in range(2))
    res = solver.solve(solver.pose_alignment_problem(T0, Tr, np.eye(6)))
    path = tmp_path / "conv.csv"
    text = solver.write_convergence_csv(res.history, path)
    assert text.splitlines()[0] == "iter,cost,step_norm"
    back = solver.read_convergence_csv(path)
    assert [r.cost for r in back] == [r.cost for r in res.history]
