"""``lie-cstep`` command line.

Commands::

    sweep        step-size sweep of complex-step vs central differences
    example2     single-pose alignment solved with analytic and complex-step Jacobians
    batch-se23   IMU + position batch estimation on SE_2(3)
    batch-se2    odometry + range-bearing batch estimation on SE(2)
    selftest     invariant suites

Exit codes: 0 success, 1 validation failure (bad input, failed suite),
2 numerical failure (threshold missed, singular system, non-finite values).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cstep, data, estimation as est, groups, selftest, solver

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

SWEEP_FLOOR = 1e-13


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Step-size sweep
# --------------------------------------------------------------------------

def run_sweep(h_max=1e-1, h_min=1e-20, seed=0) -> cstep.SweepReport:
    rng = np.random.default_rng(seed)
    v, y, T = cstep.random_pose_bilinear(rng)
    J_ref = cstep.pose_bilinear_left_jacobian(v, y, T)
    return cstep.step_sweep(cstep.pose_bilinear(v, y), T, J_ref, cstep.decade_steps(h_max, h_min), "left")


def cmd_sweep(args) -> int:
    report = run_sweep(args.h_max, args.h_min, args.seed)
    report.to_csv(args.out)
    floor = report.floor("complex_step")
    print(f"complex_step floor {floor:.3e}, central floor {report.floor('central'):.3e}")
    if floor > SWEEP_FLOOR:
        print(f"error: complex-step floor {floor:.3e} exceeds {SWEEP_FLOOR:.0e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# --------------------------------------------------------------------------
# Pose alignment
# --------------------------------------------------------------------------

def run_example2(seed=0):
    """Histories of the analytic and complex-step solves from the same random start."""
    rng = np.random.default_rng(seed)
    T0 = groups.random_element(groups.SE3, rng)
    T_ref = groups.random_element(groups.SE3, rng)
    out = {}
    for backend in ("analytic", "complex_step"):
        problem = solver.pose_alignment_problem(T0, T_ref, np.eye(6), side="left")
        out[backend] = solver.solve(problem, solver.SolveOptions(jacobian=backend))
    return out


def cmd_example2(args) -> int:
    results = run_example2(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for backend, res in results.items():
        solver.write_convergence_csv(res.history, out / f"convergence_{backend}.csv")
        print(f"{backend}: cost {res.history[0].cost:.6e} -> {res.history[1].cost:.6e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Batch problems
# --------------------------------------------------------------------------

@dataclass
class BatchSetup:
    problem: est.BatchProblem
    truth: np.ndarray | None
    metadata: dict


def _cov_stack(spec, n, K, name):
    return np.tile(data.as_covariance(spec, n, name), (K, 1, 1))


def se23_setup(cfg: data.RunConfig, synthetic: bool) -> BatchSetup:
    n = 9
    meta = {"model": "imu_se23", "seed": cfg.seed, "rng": data.RNG_ALGORITHM, "synthetic": synthetic}
    sigma = cfg.position_sigma
    if synthetic:
        noise = data.ImuNoise(position_sigma=sigma)
        run = data.generate_synthetic("imu_se23", cfg.duration, cfg.seed, noise,
                                      cfg.input_rate_hz, cfg.measurement_rate_hz)
        times = run.times + cfg.t_start
        truth = run.truth
        inputs = run.inputs
        meas_t, meas = run.measurements.times + cfg.t_start, run.measurements.values
    else:
        if not (cfg.imu_path and cfg.groundtruth_path):
            raise data.DataError("imu_path and groundtruth_path are required without --synthetic")
        imu = data.load_imu_csv(cfg.imu_path)
        gt = data.load_groundtruth_csv(cfg.groundtruth_path)
        if gt.planar:
            raise data.DataError("SE_2(3) runs need a 3-D ground-truth file")
        shift = (gt.t0_ns - imu.t0_ns) / 1e9 if gt.t0_ns is not None else 0.0
        gt.times = gt.times + shift
        imu = data.downsample(imu.window(cfg.t_start, cfg.t_end), cfg.input_rate_hz)
        if len(imu) < 2:
            raise data.DataError("fewer than two IMU samples in the time window")
        times = imu.times
        gi = est.match_to_states(times, gt.times, float(np.median(np.diff(gt.times))))
        truth = gt.select(gi).matrices()
        inputs = imu.values[:-1]
        gwin = gt.select((gt.times >= times[0] - 1e-9) & (gt.times <= times[-1] + 1e-9))
        pos = data.simulate_position_measurements(gwin, sigma, cfg.measurement_rate_hz, cfg.seed)
        meas_t, meas = pos.times, pos.values
        meta["t0_ns"] = imu.t0_ns
    K = len(times) - 1
    idx = est.match_to_states(meas_t, times)
    R = data.as_covariance(cfg.meas_cov if cfg.meas_cov is not None else sigma ** 2, 3, "meas_cov")
    problem = est.BatchProblem(
        "imu_se23", times, truth[0], data.as_covariance(cfg.prior_cov, n, "prior_cov"), inputs,
        _cov_stack(cfg.process_cov, n, K, "process_cov"), idx, meas, np.tile(R, (len(idx), 1, 1)))
    meta.update(states=K + 1, measurements=len(idx))
    return BatchSetup(problem, truth, meta)


def se2_setup(cfg: data.RunConfig, synthetic: bool) -> BatchSetup:
    meta = {"model": "unicycle_se2", "seed": cfg.seed, "rng": data.RNG_ALGORITHM, "synthetic": synthetic}
    nz = data.OdometryNoise()
    offset = 0.0 if cfg.sensor_offset is None else float(cfg.sensor_offset)
    if synthetic:
        run = data.generate_synthetic("unicycle_se2", cfg.duration, cfg.seed, nz, cfg.input_rate_hz,
                                      cfg.measurement_rate_hz, offset)
        times, truth, inputs, landmarks = run.times + cfg.t_start, run.truth, run.inputs, run.landmarks
        rb_t, rb = run.measurements.times + cfg.t_start, run.measurements.values
    else:
        for k in ("odometry_path", "rangebearing_path", "landmarks_path", "groundtruth_path"):
            if not getattr(cfg, k):
                raise data.DataError(f"{k} is required without --synthetic")
        odo = data.downsample(data.load_odometry_csv(cfg.odometry_path).window(cfg.t_start, cfg.t_end),
                              cfg.input_rate_hz)
        times, inputs = odo.times, odo.values[:-1]
        gt = data.load_groundtruth_csv(cfg.groundtruth_path)
        if not gt.planar:
            raise data.DataError("SE(2) runs need a planar t_s,x_m,y_m,theta_rad ground-truth file")
        truth = gt.select(est.match_to_states(times, gt.times, float(np.median(np.diff(gt.times))))).matrices()
        rbs = data.load_rangebearing_csv(cfg.rangebearing_path).window(cfg.t_start, cfg.t_end)
        rbs = data.downsample(rbs, cfg.measurement_rate_hz)
        rb_t, rb = rbs.times, rbs.values
        landmarks = data.load_landmarks_csv(cfg.landmarks_path)
    K = len(times) - 1
    T = np.diff(times)
    if cfg.process_cov is not None:
        Q = _cov_stack(cfg.process_cov, 3, K, "process_cov")
    else:
        Q = np.zeros((K, 3, 3))
        Q[:, 0, 0] = (T * nz.yaw_rate_sigma) ** 2
        Q[:, 1, 1] = (T * nz.speed_sigma) ** 2
        Q[:, 2, 2] = (T * cfg.lateral_sigma) ** 2
    R = data.as_covariance(cfg.meas_cov if cfg.meas_cov is not None
                           else [nz.range_sigma ** 2, nz.bearing_sigma ** 2], 2, "meas_cov")
    P0 = data.as_covariance(cfg.prior_cov, 3, "prior_cov")
    delta = np.linalg.cholesky(P0) @ data.make_rng(cfg.seed + 1).standard_normal(3)
    prior = truth[0] @ groups.SE2.exp(delta)
    idx = est.match_to_states(rb_t, times)
    problem = est.BatchProblem(
        "unicycle_se2", times, prior, P0, inputs, Q, idx, rb[:, 1:], np.tile(R, (len(idx), 1, 1)),
        rb[:, 0].astype(int), landmarks, offset)
    meta.update(states=K + 1, measurements=len(idx), sensor_offset=offset, prior_perturbation=delta.tolist())
    return BatchSetup(problem, truth, meta)


@dataclass
class BatchOutcome:
    setup: BatchSetup
    initial: np.ndarray
    result: solver.SolveResult
    sigmas: np.ndarray | None = None

    @property
    def evaluations(self) -> int:
        return sum(r.jacobian_evaluations for r in self.result.history)


def options_from_config(cfg: data.RunConfig, **overrides) -> solver.SolveOptions:
    kw = dict(max_iterations=cfg.max_iterations, step_tol=cfg.step_tol, cost_tol=cfg.cost_tol, h=cfg.h,
              fd_step=cfg.fd_step, jacobian=cfg.jacobian, linear_solver=cfg.linear_solver)
    kw.update(overrides)
    return solver.SolveOptions(**kw)


def run_batch(cfg: data.RunConfig, synthetic: bool, with_sigmas: bool = False, **overrides) -> BatchOutcome:
    setup = se23_setup(cfg, synthetic) if cfg.model == "imu_se23" else se2_setup(cfg, synthetic)
    ls = est.build_least_squares(setup.problem)
    options = options_from_config(cfg, **overrides)
    result = solver.solve(ls, options)
    sigmas = None
    if with_sigmas:
        cov = solver.posterior_covariance(ls, result.states, options)
        # tangent order is [theta, x, y] in the body frame; rotate position into the datum frame
        C = np.real(result.states[:, :2, :2])
        pos = C @ cov[:, 1:, 1:] @ np.swapaxes(C, 1, 2)
        sigmas = np.sqrt(np.column_stack([pos[:, 0, 0], pos[:, 1, 1], cov[:, 0, 0]]))
    return BatchOutcome(setup, ls.x0, result, sigmas)


def write_outputs(outcome: BatchOutcome, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times = outcome.setup.problem.times
    data.write_trajectory_csv(out / "trajectory.csv", times, outcome.result.states)
    if outcome.setup.truth is not None:
        data.write_error_csv(out / "errors.csv", times, outcome.result.states, outcome.setup.truth,
                             outcome.sigmas)
    solver.write_convergence_csv(outcome.result.history, out / "convergence.csv")
    meta = dict(outcome.setup.metadata, converged=outcome.result.converged, reason=outcome.result.reason,
                iterations=outcome.result.iterations, jacobian_evaluations=outcome.evaluations)
    (out / "run.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def _load_config(args, model):
    if args.config:
        cfg = data.RunConfig.from_json(args.config)
        if cfg.model != model:
            raise data.DataError(f"config model {cfg.model!r} does not match command ({model!r})")
    else:
        cfg = data.RunConfig.for_model(model)
    changes = {}
    for name in ("seed", "jacobian", "h"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if args.out:
        changes["output_dir"] = args.out
    if changes:
        cfg = data.RunConfig(**dict(cfg.to_dict(), **changes))
    return cfg


def _cmd_batch(args, model) -> int:
    cfg = _load_config(args, model)
    outcome = run_batch(cfg, args.synthetic, with_sigmas=(model == "unicycle_se2"))
    write_outputs(outcome, cfg.output_dir)
    res = outcome.result
    print(f"{model}: {outcome.setup.metadata['states']} states, {res.iterations} iterations, "
          f"cost {res.history[0].cost:.6e} -> {res.final_cost:.6e}, "
          f"{outcome.evaluations} {cfg.jacobian} Jacobian evaluations")
    if outcome.setup.truth is not None:
        print(f"position RMSE {est.position_rmse(res.states, outcome.setup.truth):.4f} m")
    if not res.converged:
        print(f"error: not converged ({res.reason})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_batch_se23(args) -> int:
    return _cmd_batch(args, "imu_se23")


def cmd_batch_se2(args) -> int:
    return _cmd_batch(args, "unicycle_se2")


def cmd_selftest(args) -> int:
    results = selftest.run_all()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lie-cstep", description="Complex-step Jacobians on matrix Lie groups.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="step-size sweep on the bilinear pose function")
    s.add_argument("--h-min", type=float, default=1e-20)
    s.add_argument("--h-max", type=float, default=1e-1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="sweep.csv")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("example2", help="single-pose alignment with both Jacobian backends")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="example2")
    s.set_defaults(func=cmd_example2)

    for name, func, help_ in (("batch-se23", cmd_batch_se23, "IMU + position batch estimation"),
                              ("batch-se2", cmd_batch_se2, "odometry + range-bearing batch estimation")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="RunConfig JSON file")
        s.add_argument("--synthetic", action="store_true", help="use generated data instead of dataset files")
        s.add_argument("--seed", type=int)
        s.add_argument("--jacobian", choices=("complex_step", "central", "analytic"))
        s.add_argument("--h", type=float)
        s.add_argument("--out", help="output directory (overrides the config)")
        s.set_defaults(func=func)

    s = sub.add_parser("selftest", help="run the invariant suites")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (solver.SingularSystemError, cstep.NonFiniteError, groups.LogDomainError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (data.DataError, est.CovarianceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
