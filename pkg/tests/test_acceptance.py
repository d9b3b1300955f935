"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured figures
(visible with ``pytest -s`` or by running this file directly), then asserts.
Thresholds are the documented ones and are not loosened here.
"""
import time

import numpy as np
import pytest

from lie_cstep import cli, cstep, data, groups, selftest, solver
from lie_cstep import estimation as est

Q_IMU = np.diag([1.6e-7] * 3 + [2e-6] * 3 + [1e-10] * 3)


def report(number, title, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}")
    return ok


def test_1_step_sweep():
    t0 = time.perf_counter()
    rep = cli.run_sweep(seed=0)
    elapsed = time.perf_counter() - t0
    h_cs, e_cs = rep.curve("complex_step")
    h_cd, e_cd = rep.curve("central")
    cs_small = float(np.max(e_cs[h_cs <= 1e-10]))
    i_min = int(np.argmin(e_cd))
    interior = 0 < i_min < len(e_cd) - 1
    floor_gap = e_cd[i_min] > rep.floor("complex_step")
    ok = cs_small <= 1e-13 and interior and floor_gap and elapsed < 1.0
    assert report(1, "step sweep", ok,
                  f"max complex-step error for h<=1e-10 {cs_small:.2e}, central minimum "
                  f"{e_cd[i_min]:.2e} at h={h_cd[i_min]:.0e}, {elapsed:.2f} s")


def test_2_pose_alignment_single_step():
    t0 = time.perf_counter()
    res = cli.run_example2(seed=0)
    elapsed = time.perf_counter() - t0
    cs = res["complex_step"].history[1].cost
    an = res["analytic"].history[1].cost
    ok = cs <= 1e-18 and cs <= an and elapsed < 1.0
    assert report(2, "pose alignment", ok,
                  f"start {res['complex_step'].history[0].cost:.3e}, after one step complex-step "
                  f"{cs:.3e} vs analytic {an:.3e}, {elapsed:.2f} s")


def test_3_analytic_oracle_agreement():
    K = 50
    run = data.generate_synthetic("imu_se23", (K + 1) * 0.04, 0)
    idx = est.match_to_states(run.measurements.times, run.times)
    bp = est.BatchProblem("imu_se23", run.times, run.truth[0], 1e-4 * np.eye(9), run.inputs,
                          np.tile(Q_IMU, (len(run.times) - 1, 1, 1)), idx, run.measurements.values,
                          np.tile(0.01 * np.eye(3), (len(idx), 1, 1)))
    ls = est.build_least_squares(bp)  # linearized at dead reckoning
    t0 = time.perf_counter()
    Jc, calls = solver.dense_jacobian(ls, ls.x0, solver.SolveOptions(jacobian="complex_step"))
    elapsed = time.perf_counter() - t0
    Ja = est.analytic_jacobian_euroc(ls.x0, bp).toarray()
    offs = est.build_error_stack(bp).offsets

    def rel(name):
        a, b = offs[name]
        A = Ja[a:b]
        return np.linalg.norm(Jc[a:b] - A, np.inf) / np.linalg.norm(A, np.inf)

    e_proc, e_meas = rel("process"), rel("position")
    ok = e_proc <= 1e-9 and e_meas <= 1e-12 and elapsed < 30.0 and calls == 9 * (K + 1)
    assert report(3, "analytic oracle", ok,
                  f"process rows {e_proc:.2e}, position rows {e_meas:.2e}, {calls} evaluations, {elapsed:.1f} s")


@pytest.mark.slow
def test_4_imu_batch():
    cfg = data.RunConfig.for_model("imu_se23")
    t0 = time.perf_counter()
    out = cli.run_batch(cfg, synthetic=True)
    elapsed = time.perf_counter() - t0
    res = out.result
    costs = [r.cost for r in res.history]
    rmse = est.position_rmse(res.states, out.setup.truth)
    rise = len(costs) > 1 and costs[1] > costs[0]
    ok = (res.converged and res.iterations <= 10 and rise and rmse < 0.1 and elapsed < 300
          and len(res.states) == 500)
    assert report(4, "IMU batch", ok,
                  f"{len(res.states)} states, {res.iterations} iterations, cost {costs[0]:.3e} -> "
                  f"{costs[1]:.3e} -> {costs[-1]:.3e}, RMSE {rmse:.4f} m, {elapsed:.1f} s")


@pytest.mark.slow
def test_5_unicycle_batch():
    cfg = data.RunConfig.for_model("unicycle_se2")
    t0 = time.perf_counter()
    out = cli.run_batch(cfg, synthetic=True)
    elapsed = time.perf_counter() - t0
    res = out.result
    _, table = data.error_table(out.setup.problem.times, res.states, out.setup.truth)
    pos, head = float(np.max(table[:, 1])), float(np.max(table[:, 2]))
    ok = (res.converged and res.iterations <= 15 and pos < 0.1 and head < 0.1 and elapsed < 300
          and len(res.states) == 600)
    assert report(5, "unicycle batch", ok,
                  f"{len(res.states)} states, {res.iterations} iterations, max position error {pos:.4f} m, "
                  f"max heading error {head:.4f} rad, {elapsed:.1f} s")


def test_6_evaluation_counts():
    rng = np.random.default_rng(6)
    bad = []
    kinds = [groups.SO3, groups.SE2, groups.SE3, groups.SE23, groups.Composite([groups.SE3, groups.SE2])]
    for kind in kinds:
        X = groups.random_element(kind, rng)
        for method, factor in (("complex_step", 1), ("central", 2)):
            f = cstep.CountingFunction(lambda Y: np.real(Y.matrix).reshape(-1) if method == "central"
                                       else Y.matrix.reshape(-1))
            res = cstep.jacobian(f, X, method, "right")
            if f.calls != factor * kind.dof or res.evaluations != f.calls:
                bad.append((kind.name, method, f.calls))
    assert report(6, "evaluation counts", not bad,
                  "n for complex-step, 2n for central" if not bad else f"mismatches {bad}")


def test_7_selftest():
    t0 = time.perf_counter()
    results = selftest.run_all()
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 60.0
    assert report(7, "property suites", ok,
                  f"{len(results) - len(failed)}/{len(results)} suites, {elapsed:.2f} s"
                  + (f", failed {failed}" if failed else ""))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
