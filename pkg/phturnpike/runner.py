"""Horizon sweeps and verification suites behind the command line."""
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .config import Config
from .errors import ConfigError, NoGap, NotConverged, PHTurnpikeError
from .experiment import load_experiment, resolve_profile
from .export import horizon_tag, write_report, write_snapshot_csv, write_trajectory_csv
from .ocp_solver import ControlSet, OCPProblem, solve, transcribe
from .operator_core import norm2, skew_defect
from .ph_models import DiffusionConfig, TimoshenkoConfig, build_diffusion, build_timoshenko
from .simulate import ControlSignal, TimeGrid, energy_report, simulate
from .turnpike import (bound_estimate, control_coast_mean, default_phase_length, field_split,
                       midpoint_profile, reachable_dimension, three_phase_control, turnpike_report)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_FAILURE = 2

REFINEMENT_INTERVALS = (100, 200, 400, 800)
REFINEMENT_RATIO = 8.0
ORACLE_INTERVALS = 20
ORACLE_RTOL = 1e-6


def solve_horizon(cfg, T, N, G, F, T0, T1, out_dir):
    """Solve one horizon, write its CSV files and return its report entry"""
    tag = horizon_tag(T)
    entry = {'T': T, 'N': N}
    try:
        sys = cfg.build_system()
        prob = cfg.problem(sys, T, N)
        try:
            result = solve(prob, transcribe(prob))
        except NotConverged as e:
            result = e.result

        energy = result.energy
        entry.update(converged=result.converged, iterations=result.iterations,
                     outer_iterations=result.outer_iterations, cost_supplied=result.cost_supplied,
                     cost_equiv=result.cost_equiv, hamiltonian_delta=energy.hamiltonian_delta,
                     residual=energy.residual, terminal_error=result.terminal_error,
                     target_gap=result.target_gap, kkt_residual=result.kkt_residual, polished=result.polished)

        if F is not None:
            tp_report = turnpike_report(sys, result, G, F)
            entry.update(integral_metric=tp_report.integral_metric, midpoint_dist=tp_report.midpoint_dist,
                         F=F, bound_satisfied=tp_report.bound_satisfied)
        else:
            entry.update(integral_metric=None, midpoint_dist=None, F=None, bound_satisfied=False)

        try:
            tp = three_phase_control(sys, prob.x0, prob.xT, T, T0, T1, N, prob.uset)
            entry['three_phase_cost'] = energy_report(sys, tp.trajectory, tp.control).dissipated
        except PHTurnpikeError as e:
            logger.warning(f"{tag}: no three-phase comparison: {e}")
            entry['three_phase_cost'] = None
        entry['control_coast_mean'] = control_coast_mean(result.u_star)
        if len(sys.grid.fields) > 1:
            entry['field_split'] = field_split(sys, result.x_star)

        traj_file = write_trajectory_csv(out_dir / f"traj_{tag}.csv", sys, result.x_star, result.u_star,
                                         cfg.full_state)
        snap_file = write_snapshot_csv(out_dir / f"snapshot_{tag}.csv", sys, midpoint_profile(result.x_star))
        entry.update(file=traj_file.name, snapshot=snap_file.name)
    except PHTurnpikeError as e:
        logger.error(f"{tag}: {e}")
        entry.update(converged=False, error=str(e))
    return entry


def _run_horizons(cfg, G, F, T0, T1, out_dir, jobs):
    sweep = cfg.sweep()
    if jobs <= 1 or len(sweep) == 1:
        return [solve_horizon(cfg, T, N, G, F, T0, T1, out_dir) for T, N in sweep]
    with ProcessPoolExecutor(max_workers=min(jobs, len(sweep))) as pool:
        futures = [pool.submit(solve_horizon, cfg, T, N, G, F, T0, T1, out_dir) for T, N in sweep]
        return [f.result() for f in futures]


def run(config_path, out=None, jobs=None):
    """Solve every horizon of an experiment and write CSV files plus report.json"""
    try:
        cfg = load_experiment(config_path)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR

    out_dir = Path(out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs or Config.JOBS

    try:
        sys = cfg.build_system()
        x0 = cfg.initial_state(sys)
        xT = cfg.target_state(sys)
        uset = cfg.uset(sys)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR

    report = {
        'model': cfg.model,
        'sigma_plus': None,
        'kernel_dimension': sys.spectral.kernel_dim,
        'input_norm': sys.input_norm,
        'u_max': uset.u_max_norm,
        'control_set': uset.to_dict(),
        'reachable_dimension': None,
        'bound': None,
    }

    T_min, N_min = cfg.sweep()[0]
    T0 = default_phase_length(T_min) if cfg.T0 is None else cfg.T0
    T1 = default_phase_length(T_min) if cfg.T1 is None else cfg.T1
    G = F = None
    try:
        report['sigma_plus'] = sys.spectral.sigma_plus
        estimate = bound_estimate(sys, x0, xT, TimeGrid(T_min, N_min), uset, T0, T1, cfg.steer_tol)
        G, F = estimate.G, estimate.F
        T0, T1 = estimate.T0, estimate.T1
        report['bound'] = dict(estimate.to_dict(), three_phase_cost=estimate.three_phase_cost)
        logger.info(f"Turnpike bound: G={G:.6g}, F={F:.6g}, correction={100 * estimate.correction_ratio:.2f}% of G")
    except NoGap as e:
        logger.warning(f"Bound checks skipped: {e}")
    except PHTurnpikeError as e:
        logger.error(f"Bound estimate failed: {e}")
    try:
        report['reachable_dimension'] = reachable_dimension(sys, TimeGrid(T_min, N_min))
    except PHTurnpikeError as e:
        logger.error(f"Reachability rank failed: {e}")

    entries = _run_horizons(cfg, G, F, T0, T1, out_dir, jobs)
    report['horizons'] = entries
    report['all_converged'] = all(entry.get('converged', False) for entry in entries)
    write_report(out_dir / 'report.json', report)

    for entry in entries:
        logger.info(f"T={entry['T']:g}: converged={entry.get('converged')}, "
                    f"cost_equiv={entry.get('cost_equiv')}, bound_satisfied={entry.get('bound_satisfied')}")
    return EXIT_OK if report['all_converged'] else EXIT_FAILURE


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name, fn):
    try:
        passed, detail = fn()
        return CheckResult(name, bool(passed), detail)
    except NoGap as e:
        return CheckResult(name, False, f"NoGap: {e}")
    except Exception as e:
        logger.error(f"Check {name} raised: {e}")
        logger.debug(traceback.format_exc())
        return CheckResult(name, False, f"{type(e).__name__}: {e}")


def _structure_checks(cfg, sys):
    def skew():
        defect = skew_defect(sys.J)
        return defect == 0.0, f"max|J + J^T| = {defect:.3e}"

    def psd():
        scale = norm2(sys.R)
        low = float(linalg.eigvalsh(0.5 * (sys.R + sys.R.T))[0]) if sys.n else 0.0
        return low >= -1e-12 * scale, f"lambda_min(R) = {low:.3e}, ||R|| = {scale:.3e}"

    def closed_form():
        sigma = sys.spectral.sigma_plus
        if cfg.model == 'diffusion':
            h = sys.h
            expected = 2.0 * cfg.model_config.d * (1.0 - math.cos(math.pi * h)) / h ** 2
        else:
            expected = min(cfg.model_config.R1, cfg.model_config.R2)
        rel = abs(sigma - expected) / expected
        return rel <= 1e-10, f"sigma_plus = {sigma:.12g}, closed form {expected:.12g}, rel {rel:.1e}"

    return [_check('structure.skew', skew), _check('structure.psd', psd),
            _check('structure.sigma_plus', closed_form)]


def _projector_checks(sys):
    def algebra():
        P = sys.kernel_projector
        scale = max(norm2(sys.R), 1.0)
        idem = norm2(P @ P - P)
        sym = float(np.max(np.abs(P - P.T))) if P.size else 0.0
        annihil = norm2(sys.R @ P) / scale
        trace_ok = abs(np.trace(P) - sys.spectral.kernel_dim) <= 1e-8
        ok = idem <= 1e-10 and sym <= 1e-12 and annihil <= 1e-9 and trace_ok
        return ok, f"|P^2 - P| = {idem:.1e}, |RP|/|R| = {annihil:.1e}, dim ker R = {sys.spectral.kernel_dim}"

    def spectral_bound():
        sigma = sys.spectral.sigma_plus
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, sys.n))
        lhs = sys.h * np.einsum('ki,ij,kj->k', X, sys.R, X)
        dist2 = sys.h * np.sum((X - X @ sys.kernel_projector.T) ** 2, axis=1)
        slack = 1e-9 * np.maximum(lhs, 1.0)
        worst = float(np.min(lhs - sigma * dist2 + slack))
        return worst >= 0.0, f"min(||R^1/2 x||^2 - sigma_plus dist^2) = {worst:.3e}"

    return [_check('projector.algebra', algebra), _check('bound.spectral_gap', spectral_bound)]


def _refinement_check(cfg, sys):
    def study():
        x0 = cfg.initial_state(sys)
        residuals = []
        scale = 0.0
        for N in REFINEMENT_INTERVALS:
            grid = TimeGrid(1.0, N)
            u = ControlSignal.constant(grid, np.ones(sys.m))
            rep = energy_report(sys, simulate(sys, x0, u), u)
            residuals.append(abs(rep.residual))
            scale = max(scale, abs(rep.supplied), abs(rep.dissipated), abs(rep.hamiltonian_delta))
        floor = 1e-12 * max(scale, 1.0)
        ok = all(coarse <= floor or coarse / max(fine, 1e-300) >= REFINEMENT_RATIO
                 for coarse, fine in zip(residuals, residuals[1:]))
        detail = ", ".join(f"N={N}: {r:.2e}" for N, r in zip(REFINEMENT_INTERVALS, residuals))
        return ok, detail

    return [_check('energy.refinement', study)]


def _oracle_system(cfg):
    if cfg.model == 'diffusion':
        return build_diffusion(DiffusionConfig(n_cells=5, d=cfg.model_config.d))
    mc = cfg.model_config
    return build_timoshenko(TimoshenkoConfig(n_nodes=4, R1=mc.R1, R2=mc.R2, nu=mc.nu))


def dense_kkt_cost(tr, sys, xT):
    """Equality-constrained least squares solved directly on the dense KKT system"""
    L, c = tr.stacked_operator()
    sqrt_w = np.sqrt(sys.weights)
    Mw = sqrt_w[:, None] * tr.M
    rw = sqrt_w * (xT - tr.x_free_T)
    k, n = L.shape[1], Mw.shape[0]
    K = np.block([[2.0 * L.T @ L, Mw.T], [Mw, np.zeros((n, n))]])
    rhs = np.concatenate([-2.0 * L.T @ c, rw])
    u = linalg.lstsq(K, rhs)[0][:k]
    return float(np.sum((L @ u + c) ** 2)), u


def _oracle_check(cfg):
    def oracle():
        sys = _oracle_system(cfg)
        try:
            x0 = resolve_profile(cfg.x0, sys, cfg.base_dir)
        except ConfigError:
            x0 = resolve_profile('sin_pi', sys)
        grid = TimeGrid(1.0, ORACLE_INTERVALS)
        xT = simulate(sys, x0, ControlSignal.constant(grid, 0.5 * np.ones(sys.m))).final
        prob = OCPProblem(sys, x0, xT, grid, ControlSet.box(1e3, sys.m))
        tr = transcribe(prob)
        result = solve(prob, tr)
        expected, _ = dense_kkt_cost(tr, sys, xT)
        rel = abs(result.cost_equiv - expected) / max(abs(expected), 1e-12)
        return rel <= ORACLE_RTOL, f"solver {result.cost_equiv:.10g}, dense KKT {expected:.10g}, rel {rel:.1e}"

    return [_check('oracle.dense_kkt', oracle)]


def run_checks(cfg, system_hook=None):
    sys = cfg.build_system()
    if system_hook is not None:
        sys = system_hook(sys)
    checks = []
    checks += _structure_checks(cfg, sys)
    checks += _projector_checks(sys)
    checks += _refinement_check(cfg, sys)
    checks += _oracle_check(cfg)
    return checks


def format_checks(checks):
    width = max(len(c.name) for c in checks)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for c in checks:
        lines.append(f"{c.name.ljust(width)}  {'PASS' if c.passed else 'FAIL':6}  {c.detail}")
    return "\n".join(lines)


def verify(config_path, system_hook=None, echo=print):
    """Run the invariant suites and print a pass/fail table; 0 iff every check passes"""
    try:
        cfg = load_experiment(config_path)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR
    checks = run_checks(cfg, system_hook)
    echo(format_checks(checks))
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_FAILURE
    return EXIT_OK
