"""Turnpike diagnostics toward ker R and the three-phase reference construction.

The bound compares the optimal trajectory with a feasible competitor that
steers x0 close to 0 in time T0, coasts with u = 0, and steers from 0 to xT in
the last T1 time units. Its cost is bounded independently of T, which bounds
the integral of dist^2(x*(t), ker R) by G(x0) / sigma_plus.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, linalg

from .config import Config
from .errors import HorizonTooShort, InvalidArgument
from .ocp_solver import fit_control, numerical_rank, terminal_map
from .operator_core import dist_to_kernel, weighted_norm
from .simulate import ControlSignal, TimeGrid, energy_report, field_energies, hamiltonian, simulate

logger = logging.getLogger(__name__)

DEFAULT_PHASE_CAP = 2.0
STEER_MAX_ITER = 2000


def default_phase_length(T_min):
    """T0 = T1 = min(2, T_min / 4)"""
    return min(DEFAULT_PHASE_CAP, T_min / 4.0)


def _terminal_error(sys, u, x_from, x_to):
    return float(weighted_norm(simulate(sys, x_from, u).final - x_to, sys.weights))


def steer(sys, x_from, x_to, T_steer, N, uset, max_iter=STEER_MAX_ITER):
    """Best-effort control driving x_from toward x_to in time T_steer.

    Minimizes ||x(T_steer) - x_to||^2 over piecewise-constant u in U with a
    projected least-squares start and accelerated projected gradient. Never
    raises on unreachable targets; the achieved error is returned instead.
    """
    if not T_steer > 0:
        raise InvalidArgument(f"steering time must be > 0, got {T_steer}")
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    grid = TimeGrid(T_steer, N)
    M, x_free = terminal_map(sys, x_from, grid)
    sqrt_w = np.sqrt(sys.weights)
    Mw = sqrt_w[:, None] * M
    rw = sqrt_w * (x_to - x_free)

    rtol = Config.RANK_RTOL or np.finfo(float).eps * max(Mw.shape)
    u = uset.project(linalg.lstsq(Mw, rw, cond=rtol)[0].reshape(N, sys.m)).ravel()
    if np.linalg.norm(rw) <= np.linalg.norm(Mw @ u - rw):
        u = np.zeros_like(u)
    u = fit_control(Mw, rw, uset, N, u, max_iter)

    control = ControlSignal(u.reshape(N, sys.m), grid)
    error = _terminal_error(sys, control, x_from, x_to)
    logger.debug(f"steer over T={T_steer:g} (N={N}): error={error:.3e}")
    return control, error


@dataclass(frozen=True, eq=False)
class ThreePhaseControl:
    """Steer to 0 on [0, T0], coast with u = 0, steer 0 -> xT on [T - T1, T]"""
    u0: Optional[ControlSignal]
    u1: Optional[ControlSignal]
    control: ControlSignal
    T0: float
    T1: float
    intermediate_error: float
    terminal_steering_error: float
    terminal_error: float
    trajectory: object = field(repr=False)

    @property
    def coast(self):
        return self.T0, self.control.grid.T - self.T1


def three_phase_control(sys, x0, xT, T, T0, T1, N, uset):
    """Concatenate the three phases on the uniform grid with N intervals on [0, T].

    Phase lengths are rounded to whole intervals of length T / N.
    """
    if T0 < 0 or T1 < 0:
        raise InvalidArgument("phase lengths must be nonnegative")
    if T < T0 + T1 - 1e-12 * T:
        raise HorizonTooShort(T, T0, T1)
    grid = TimeGrid(T, N)
    dt = grid.dt
    N0 = int(round(T0 / dt))
    N1 = int(round(T1 / dt))
    if N0 + N1 > N:
        raise HorizonTooShort(T, N0 * dt, N1 * dt)
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    zero = np.zeros(sys.n)

    if N0:
        u0, e0 = steer(sys, x0, zero, N0 * dt, N0, uset)
    else:
        u0, e0 = None, float(weighted_norm(x0, sys.weights))
    if N1:
        u1, e1 = steer(sys, zero, xT, N1 * dt, N1, uset)
    else:
        u1, e1 = None, float(weighted_norm(xT, sys.weights))

    values = np.zeros((N, sys.m))
    if u0 is not None:
        values[:N0] = u0.values
    if u1 is not None:
        values[N - N1:] = u1.values
    control = ControlSignal(values, grid)
    traj = simulate(sys, x0, control)
    terminal_error = float(weighted_norm(traj.final - xT, sys.weights))
    logger.info(f"Three-phase control on T={T:g}: |x(T0)|={e0:.3e}, terminal steering error={e1:.3e}, "
                f"terminal error={terminal_error:.3e}")
    return ThreePhaseControl(u0, u1, control, N0 * dt, N1 * dt, e0, e1, terminal_error, traj)


def turnpike_bound(sys, x0, u0, T0, T1, uset):
    """G(x0) and F(x0) = G(x0) / sigma_plus. Raises NoGap when ker R has no spectral gap."""
    if u0 is not None and not uset.contains(u0.values, tol=1e-12):
        logger.warning("steering control leaves the control set; the bound assumes u0 in U")
    x0 = np.asarray(x0, dtype=float)
    b = sys.input_norm
    u_max = uset.u_max_norm
    x0_norm = float(weighted_norm(x0, sys.weights))
    G = (float(hamiltonian(sys, x0))
         + b * T0 * u_max * (x0_norm + b * T0 * u_max)
         + b ** 2 * T1 ** 2 * u_max ** 2)
    F = G / sys.spectral.sigma_plus
    return G, F


def steering_correction(sys, error, T1, uset):
    """Extra coast/final-phase cost when the intermediate state misses 0 by `error`"""
    return 0.5 * error ** 2 + sys.input_norm * T1 * uset.u_max_norm * error


def dist2_profile(traj, P, ip=1.0):
    return dist_to_kernel(traj.states, P, ip) ** 2


def turnpike_metric(traj, P, ip=1.0):
    """Simpson quadrature of dist^2(x(t), ker R) over the trajectory grid.

    Uses the stored interval midpoints when available; otherwise composite
    Simpson on the nodes.
    """
    f_nodes = dist2_profile(traj, P, ip)
    if traj.midpoints is not None:
        f_mids = dist_to_kernel(traj.midpoints, P, ip) ** 2
        dt = traj.grid.dt
        return float(np.sum(dt / 6.0 * (f_nodes[:-1] + 4.0 * f_mids + f_nodes[1:])))
    return float(integrate.simpson(f_nodes, x=traj.grid.times))


def midpoint_profile(traj):
    """x(T/2)"""
    return traj.state_at_half_horizon()


def midpoint_dist(traj, P, ip=1.0):
    return float(dist_to_kernel(midpoint_profile(traj), P, ip) ** 2)


def reachable_dimension(sys, grid):
    """Numerical rank of u -> x(T) on the given grid"""
    M, _ = terminal_map(sys, np.zeros(sys.n), grid)
    Mw = np.sqrt(sys.weights)[:, None] * M
    if Mw.size == 0:
        return 0
    return numerical_rank(linalg.svdvals(Mw), Mw.shape)


def _coast_mask(times, T):
    return (times >= T / 3.0) & (times <= 2.0 * T / 3.0)


def field_split(sys, traj):
    """Per field: mean squared norm on [T/3, 2T/3], over [0, T], and at t = 0"""
    energies = field_energies(sys, traj)
    mask = _coast_mask(traj.grid.times, traj.grid.T)
    return {
        name: {
            'coast_mean': float(np.mean(energies[mask, k])),
            'full_mean': float(np.mean(energies[:, k])),
            'initial': float(energies[0, k]),
        }
        for k, name in enumerate(sys.grid.fields)
    }


def control_coast_mean(u):
    """Mean |u(t)| over the intervals centred in [T/3, 2T/3]"""
    mask = _coast_mask(u.grid.midpoint_times, u.grid.T)
    return float(np.mean(np.linalg.norm(u.values[mask], axis=1)))


@dataclass(frozen=True)
class BoundEstimate:
    T0: float
    T1: float
    G: float
    F: float
    steering_error: float
    terminal_steering_error: float
    correction: float
    steer_tol: float
    three_phase_cost: float = math.nan

    @property
    def correction_ratio(self):
        return self.correction / self.G if self.G > 0 else 0.0

    @property
    def steering_within_tol(self):
        return self.steering_error <= self.steer_tol

    def to_dict(self):
        return {
            'T0': self.T0,
            'T1': self.T1,
            'G': self.G,
            'F': self.F,
            'steering_error': self.steering_error,
            'terminal_steering_error': self.terminal_steering_error,
            'steer_tol': self.steer_tol,
            'steering_within_tol': self.steering_within_tol,
            'correction': self.correction,
            'correction_ratio': self.correction_ratio,
        }


def bound_estimate(sys, x0, xT, grid, uset, T0=None, T1=None, steer_tol=None):
    """Build the three-phase competitor on `grid` and evaluate G, F and the correction.

    F does not depend on the horizon, so one estimate serves a whole sweep.
    """
    T0 = default_phase_length(grid.T) if T0 is None else T0
    T1 = default_phase_length(grid.T) if T1 is None else T1
    x0 = np.asarray(x0, dtype=float)
    if steer_tol is None:
        steer_tol = 1e-4 * float(weighted_norm(x0, sys.weights))
    tp = three_phase_control(sys, x0, xT, grid.T, T0, T1, grid.N, uset)
    G, F = turnpike_bound(sys, x0, tp.u0, tp.T0, tp.T1, uset)
    correction = steering_correction(sys, tp.intermediate_error, tp.T1, uset)
    cost = energy_report(sys, tp.trajectory, tp.control).dissipated
    estimate = BoundEstimate(tp.T0, tp.T1, G, F, tp.intermediate_error, tp.terminal_steering_error,
                             correction, steer_tol, cost)
    if not estimate.steering_within_tol:
        logger.warning(f"Steering to 0 missed by {tp.intermediate_error:.3e} (> {steer_tol:.3e}); "
                       f"correction is {100 * estimate.correction_ratio:.2f}% of G")
    return estimate


@dataclass(frozen=True)
class TurnpikeReport:
    sigma_plus: float
    G_x0: float
    F_x0: float
    integral_metric: float
    midpoint_dist: float
    bound_satisfied: bool
    dissipated: float = math.nan

    def to_dict(self):
        return {
            'sigma_plus': self.sigma_plus,
            'G_x0': self.G_x0,
            'F_x0': self.F_x0,
            'integral_metric': self.integral_metric,
            'midpoint_dist': self.midpoint_dist,
            'bound_satisfied': self.bound_satisfied,
        }


def turnpike_report(sys, result, G, F):
    """Turnpike metrics of a solved problem against a precomputed bound"""
    P = sys.kernel_projector
    traj = result.x_star
    metric = turnpike_metric(traj, P, sys.weights)
    mid = midpoint_dist(traj, P, sys.weights)
    satisfied = bool(result.converged and metric <= F)
    return TurnpikeReport(sys.spectral.sigma_plus, G, F, metric, mid, satisfied, result.cost_equiv)
