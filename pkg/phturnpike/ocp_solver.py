"""Minimum energy supply: direct transcription and a projected augmented Lagrangian.

The cost integral_0^T ||R^{1/2} x||^2 dt is a convex quadratic in the stacked
control vector u (interval-major, u[k * m + a] is channel a on interval k):

    J(u) = u^T H u + 2 g^T u + c0,      x(T) = M u + x_free(T)

Because the interval map is time invariant, the response to an impulse on
interval s is the response to an impulse on interval 0 shifted by s. One
impulse simulation per channel therefore gives every column of the
transcription, and H is assembled from Gram matrices of those responses.

The problem is singular (no control penalty), so the first-order iterate is
finished by an exact solve on its active set, in the manner of solution
polishing in operator-splitting QP solvers.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .config import Config
from .errors import DimensionMismatch, InvalidArgument, NotConverged
from .operator_core import weighted_norm
from .simulate import (ControlSignal, TimeGrid, energy_report, simpson_weights,
                       simulate)

logger = logging.getLogger(__name__)

FIT_MAX_ITER = 2000
# inner tolerance starts loose and tightens tenfold per outer iteration down to
# a quarter of kkt_tol
INITIAL_INNER_TOL = 1e-1
INNER_TOL_DECAY = 0.1
INNER_TOL_FLOOR = 0.25
# relative distance to a bound below which a box component counts as active
ACTIVE_RTOL = 1e-9
POLISH_ROUNDS = 10
# the penalty grows only when an outer iteration shrinks the terminal error by
# less than this factor
FEASIBILITY_DECREASE = 0.25


@dataclass(frozen=True)
class ControlSet:
    """Box{|u_a| <= u_max[a]} or Ball{||u|| <= radius} in R^m"""
    kind: str
    bound: tuple
    m: int

    def __post_init__(self):
        if self.kind not in ('box', 'ball'):
            raise InvalidArgument(f"control set kind must be 'box' or 'ball', got {self.kind!r}")
        bound = tuple(float(b) for b in np.atleast_1d(self.bound))
        if self.kind == 'box' and len(bound) == 1:
            bound = bound * self.m
        if self.kind == 'box' and len(bound) != self.m:
            raise DimensionMismatch(f"box needs {self.m} bounds, got {len(bound)}")
        if self.kind == 'ball' and len(bound) != 1:
            raise InvalidArgument("ball takes a single radius")
        if not all(b > 0 for b in bound):
            raise InvalidArgument(f"control set must contain 0 in its interior, got bounds {bound}")
        object.__setattr__(self, 'bound', bound)

    @classmethod
    def box(cls, u_max, m):
        return cls('box', u_max, m)

    @classmethod
    def ball(cls, radius, m):
        return cls('ball', radius, m)

    @property
    def u_max_norm(self):
        """max ||v|| over the set"""
        if self.kind == 'ball':
            return self.bound[0]
        return float(np.linalg.norm(self.bound))

    def project(self, v):
        """Euclidean projection of one value (m,) or of a stack (..., m)"""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.m:
            raise DimensionMismatch(f"control vector has {v.shape[-1]} channels, set has {self.m}")
        if self.kind == 'box':
            u_max = np.array(self.bound)
            return np.clip(v, -u_max, u_max)
        r = self.bound[0]
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.where(norms > r, r / np.where(norms > 0, norms, 1.0), 1.0)
        return v * scale

    def contains(self, v, tol=0.0):
        v = np.asarray(v, dtype=float)
        if self.kind == 'box':
            return bool(np.all(np.abs(v) <= np.array(self.bound) + tol))
        return bool(np.all(np.linalg.norm(v, axis=-1) <= self.bound[0] + tol))

    def to_dict(self):
        return {'kind': self.kind, 'bound': list(self.bound), 'u_max': self.u_max_norm}


def project_uset(v, uset):
    return uset.project(v)


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-6
    max_outer: int = 12
    max_inner: int = 5000
    rho0: float = 1.0
    rho_factor: float = 10.0
    rho_max: float = 1e8
    power_iterations: int = 100
    warm_start: bool = False
    polish: bool = True
    project_target: bool = False
    fit_iterations: int = FIT_MAX_ITER

    def validate(self):
        if not self.kkt_tol > 0:
            raise InvalidArgument(f"kkt_tol must be > 0, got {self.kkt_tol}")
        if self.max_outer < 1 or self.max_inner < 1 or self.fit_iterations < 1:
            raise InvalidArgument("max_outer, max_inner and fit_iterations must be at least 1")
        if not self.rho0 > 0 or not self.rho_factor > 1:
            raise InvalidArgument("penalty schedule needs rho0 > 0 and rho_factor > 1")
        if not self.rho_max >= self.rho0:
            raise InvalidArgument(f"rho_max must be >= rho0, got {self.rho_max}")
        return self


@dataclass(frozen=True, eq=False)
class OCPProblem:
    sys: object
    x0: np.ndarray
    xT: np.ndarray
    grid: TimeGrid
    uset: ControlSet
    terminal_tol: Optional[float] = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        n = self.sys.n
        for name in ('x0', 'xT'):
            x = np.array(getattr(self, name), dtype=float)
            if x.shape != (n,):
                raise DimensionMismatch(f"{name} has shape {x.shape}, expected ({n},)")
            x.setflags(write=False)
            object.__setattr__(self, name, x)
        if self.uset.m != self.sys.m:
            raise DimensionMismatch(f"control set has {self.uset.m} channels, system has {self.sys.m}")
        if self.terminal_tol is None:
            tol = 1e-6 * (1.0 + float(weighted_norm(self.xT, self.sys.weights)))
            object.__setattr__(self, 'terminal_tol', tol)
        if not self.terminal_tol > 0:
            raise InvalidArgument(f"terminal_tol must be > 0, got {self.terminal_tol}")
        self.options.validate()


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """node[j] = x(t_{j+1}) and mid[j] = x(t_j + dt/2) after a unit impulse on interval 0"""
    node: np.ndarray
    mid: np.ndarray


def impulse_response(sys, grid):
    N, n, m = grid.N, sys.n, sys.m
    node = np.empty((N, n, m))
    mid = np.empty((N, n, m))
    for a in range(m):
        values = np.zeros((N, m))
        values[0, a] = 1.0
        traj = simulate(sys, np.zeros(n), ControlSignal(values, grid))
        node[:, :, a] = traj.states[1:]
        mid[:, :, a] = traj.midpoints
    return ImpulseResponse(node, mid)


def _stack_lags(resp):
    """(N, n, m) -> (n, N * m) with column j * m + a"""
    N, n, m = resp.shape
    return resp.transpose(1, 0, 2).reshape(n, N * m)


def terminal_map(sys, x0, grid, response=None):
    """x(T) = M u + x_free(T)"""
    response = response or impulse_response(sys, grid)
    M = _stack_lags(response.node[::-1])
    x_free_T = simulate(sys, x0, ControlSignal.zeros(grid, sys.m)).final
    return M, x_free_T


@dataclass(frozen=True, eq=False)
class Transcription:
    H: np.ndarray
    g: np.ndarray
    c0: float
    M: np.ndarray
    x_free_T: np.ndarray
    free: object = field(repr=False)
    response: ImpulseResponse = field(repr=False)
    sys: object = field(repr=False)

    def cost(self, u):
        u = np.ravel(u)
        return float(u @ (self.H @ u) + 2.0 * (self.g @ u) + self.c0)

    def terminal(self, u):
        return self.M @ np.ravel(u) + self.x_free_T

    def stacked_operator(self):
        """Dense (L, c) with ||L u + c||^2 = J(u).

        Rows follow the sample order node 0, mid 0, node 1, ..., node N, each
        block scaled by the square root of its Simpson weight and of the state
        weights, so that the Euclidean norm reproduces the quadrature.
        """
        sys, grid = self.sys, self.free.grid
        N, n, m = grid.N, sys.n, sys.m
        w_nodes, w_mids = simpson_weights(grid)
        S = np.sqrt(sys.weights)[:, None] * sys.sqrt_R
        node, mid = self.response.node, self.response.mid

        L = np.zeros(((2 * N + 1) * n, N * m))
        c = np.zeros((2 * N + 1) * n)
        for k in range(N + 1):
            rows = slice(2 * k * n, (2 * k + 1) * n)
            scale = math.sqrt(w_nodes[k])
            c[rows] = scale * (S @ self.free.states[k])
            for s in range(k):
                L[rows, s * m:(s + 1) * m] = scale * (S @ node[k - 1 - s])
        for k in range(N):
            rows = slice((2 * k + 1) * n, (2 * k + 2) * n)
            scale = math.sqrt(w_mids[k])
            c[rows] = scale * (S @ self.free.midpoints[k])
            for s in range(k + 1):
                L[rows, s * m:(s + 1) * m] = scale * (S @ mid[k - s])
        return L, c


def _suffix_diagonal_sums(E):
    """out[s, :, t, :] = sum_p E[s + p, :, t + p, :] over all in-range p"""
    out = E.copy()
    for r in range(E.shape[0] - 2, -1, -1):
        out[r, :, :-1, :] += out[r + 1, :, 1:, :]
    return out


def transcribe(prob):
    sys, grid = prob.sys, prob.grid
    N, m = grid.N, sys.m
    dt = grid.dt
    response = impulse_response(sys, grid)
    free = simulate(sys, prob.x0, ControlSignal.zeros(grid, m))

    # state-space weight of the integrand x^T Q x = ||R^{1/2} x||^2_W
    S = sys.sqrt_R
    Q = S @ (sys.weights[:, None] * S)
    Q = 0.5 * (Q + Q.T)

    # Node t_{k+1} and midpoint t_k + dt/2 see u_s at the same lag k - s, so the
    # two Simpson contributions share one Toeplitz structure. The last node
    # carries weight dt/6 instead of 2 dt/6.
    Nst = _stack_lags(response.node)
    Mst = _stack_lags(response.mid)
    Knn = (Nst.T @ Q @ Nst).reshape(N, m, N, m)
    Kmm = (Mst.T @ Q @ Mst).reshape(N, m, N, m)
    E = (2.0 * dt / 6.0) * Knn + (4.0 * dt / 6.0) * Kmm
    E = E[::-1, :, ::-1, :]
    H = _suffix_diagonal_sums(E) - (dt / 6.0) * Knn[::-1, :, ::-1, :]
    H = H.reshape(N * m, N * m)
    H = 0.5 * (H + H.T)

    w_nodes, w_mids = simpson_weights(grid)
    QX = (free.states @ Q) * w_nodes[:, None]
    QY = (free.midpoints @ Q) * w_mids[:, None]
    g = np.empty((N, m))
    for a in range(m):
        An = response.node[:, :, a] @ QX.T
        Am = response.mid[:, :, a] @ QY.T
        for s in range(N):
            g[s, a] = np.trace(An, offset=s + 1) + np.trace(Am, offset=s)

    c0 = float(w_nodes @ np.einsum('ki,ki->k', free.states @ Q, free.states)
               + w_mids @ np.einsum('ki,ki->k', free.midpoints @ Q, free.midpoints))
    M = _stack_lags(response.node[::-1])
    logger.debug(f"Transcribed {sys.name}: N={N}, m={m}, ||H||={linalg.norm(H, 2):.4g}, c0={c0:.6g}")
    return Transcription(H, g.ravel(), c0, M, free.final, free, response, sys)


@dataclass(frozen=True, eq=False)
class OCPResult:
    u_star: ControlSignal
    x_star: object
    cost_supplied: float
    cost_equiv: float
    terminal_error: float
    kkt_residual: float
    iterations: int
    converged: bool
    outer_iterations: int = 0
    energy: object = field(default=None, repr=False)
    target_gap: float = 0.0
    polished: bool = False

    def to_dict(self):
        return {
            'cost_supplied': self.cost_supplied,
            'cost_equiv': self.cost_equiv,
            'terminal_error': self.terminal_error,
            'target_gap': self.target_gap,
            'kkt_residual': self.kkt_residual,
            'iterations': self.iterations,
            'outer_iterations': self.outer_iterations,
            'converged': self.converged,
            'polished': self.polished,
        }


def power_iteration(apply, size, iterations=100):
    """Largest eigenvalue of a symmetric PSD operator"""
    if size == 0:
        return 0.0
    v = np.linspace(1.0, 2.0, size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = apply(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def numerical_rank(s, shape):
    """Singular values above RANK_RTOL * s_max (eps * max(shape) when unset)"""
    if s.size == 0 or s[0] == 0.0:
        return 0
    rtol = Config.RANK_RTOL or np.finfo(float).eps * max(shape)
    return int(np.count_nonzero(s > rtol * s[0]))


def fit_control(Mw, rw, uset, N, u=None, max_iter=FIT_MAX_ITER):
    """Control in U^N reducing ||Mw u - rw|| by accelerated projected gradient.

    Starts from u (zero when omitted) and returns the best iterate seen, so the
    residual never exceeds the one of the start.
    """
    m = uset.m

    def project(v):
        return uset.project(v.reshape(N, m)).ravel()

    def residual(v):
        return float(np.linalg.norm(Mw @ v - rw))

    u = np.zeros(N * m) if u is None else np.array(u, dtype=float)
    lip = 2.0 * power_iteration(lambda v: Mw.T @ (Mw @ v), Mw.shape[1]) * 1.01
    if lip == 0 or residual(u) == 0:
        return u
    step = 1.0 / lip
    y, t, best = u.copy(), 1.0, u.copy()
    tol = 1e-12 * max(1.0, float(np.linalg.norm(rw)))
    for _ in range(max_iter):
        u_new = project(y - step * 2.0 * (Mw.T @ (Mw @ y - rw)))
        if np.linalg.norm(u_new - y) / step <= tol:
            u = u_new
            break
        if np.dot(y - u_new, u_new - u) > 0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = u_new + ((t - 1.0) / t_new) * (u_new - u)
        u, t = u_new, t_new
        if residual(u) < residual(best):
            best = u
    return best if residual(best) < residual(u) else u


def _equality_constrained_minimizer(H, g, Mw, rw):
    """Minimum-norm KKT point of min u^T H u + 2 g^T u s.t. Mw u = rw, with its multiplier"""
    U, s, Vh = linalg.svd(Mw, full_matrices=True)
    r = numerical_rank(s, Mw.shape)
    u_p = Vh[:r].T @ ((U[:, :r].T @ rw) / s[:r])
    Z = Vh[r:].T
    if Z.shape[1]:
        w = linalg.lstsq(Z.T @ H @ Z, -(Z.T @ (H @ u_p + g)))[0]
        u = u_p + Z @ w
    else:
        u = u_p
    lam = linalg.lstsq(Mw.T, -2.0 * (H @ u + g))[0]
    return u, lam


class _AugmentedLagrangian:
    """J(u) + lam^T c + rho/2 ||c||^2, c = Mw u - rw, minimized over U^N"""

    def __init__(self, H, g, Mw, rw, uset, N):
        self.H = H
        self.g = g
        self.Mw = Mw
        self.rw = rw
        self.uset = uset
        self.N = N

    def project(self, u):
        return self.uset.project(u.reshape(self.N, self.uset.m)).ravel()

    def constraint(self, u):
        return self.Mw @ u - self.rw

    def gradient(self, u, lam, rho):
        return 2.0 * (self.H @ u + self.g) + self.Mw.T @ (lam + rho * self.constraint(u))

    def lipschitz(self, rho, iterations):
        H, Mw = self.H, self.Mw
        lip = power_iteration(lambda v: 2.0 * (H @ v) + rho * (Mw.T @ (Mw @ v)), H.shape[0], iterations)
        return 1.01 * lip if lip > 0 else 1.0

    def kkt_residual(self, u, lam, rho, lip):
        step = 1.0 / lip
        return float(np.linalg.norm(u - self.project(u - step * self.gradient(u, lam, rho))) / step)

    def fista(self, u, lam, rho, lip, tol, max_iter):
        """Accelerated projected gradient with gradient-based restart"""
        step = 1.0 / lip
        y = u.copy()
        t = 1.0
        for it in range(1, max_iter + 1):
            u_new = self.project(y - step * self.gradient(y, lam, rho))
            if np.linalg.norm(u_new - y) / step <= tol:
                return u_new, it
            if np.dot(y - u_new, u_new - u) > 0:
                t = 1.0
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = u_new + ((t - 1.0) / t_new) * (u_new - u)
            u, t = u_new, t_new
        return u, max_iter

    def _free_solve(self, base, free):
        """Move the free components of base to the constrained minimizer, as little as possible"""
        F = np.flatnonzero(free)
        if F.size == 0:
            return base.copy(), np.zeros(self.Mw.shape[0])
        d, lam = _equality_constrained_minimizer(self.H[np.ix_(F, F)], self.H[F] @ base + self.g[F],
                                                 self.Mw[:, F], self.rw - self.Mw @ base)
        u = base.copy()
        u[F] += d
        return u, lam

    def polish(self, u, kkt_tol):
        """Exact minimizer on the active set read off u, or None.

        Components on a bound stay there and the others solve the equality
        constrained quadratic. Free components that leave the box join the
        active set; active ones whose multiplier has the wrong sign are freed.
        """
        N, m = self.N, self.uset.m
        if self.uset.kind == 'ball':
            radius = self.uset.bound[0]
            if np.any(np.linalg.norm(u.reshape(N, m), axis=1) >= radius * (1.0 - ACTIVE_RTOL)):
                return None
            u_new, lam = self._free_solve(u, np.ones(u.size, dtype=bool))
            if np.any(np.linalg.norm(u_new.reshape(N, m), axis=1) > radius):
                return None
            return u_new, lam

        ub = np.tile(np.asarray(self.uset.bound), N)
        side = np.zeros(u.size)
        side[u >= ub * (1.0 - ACTIVE_RTOL)] = 1.0
        side[u <= -ub * (1.0 - ACTIVE_RTOL)] = -1.0
        for _ in range(POLISH_ROUNDS):
            free = side == 0.0
            u_new, lam = self._free_solve(np.where(free, u, side * ub), free)
            outside = free & (np.abs(u_new) > ub)
            if outside.any():
                side[outside] = np.sign(u_new[outside])
                continue
            wrong = side * self.gradient(u_new, lam, 0.0) > kkt_tol
            if wrong.any():
                side[wrong] = 0.0
                continue
            return u_new, lam
        return None


def _result(prob, u, kkt, iterations, outer, converged, target_gap=0.0, polished=False):
    u_sig = ControlSignal(u.reshape(prob.grid.N, prob.sys.m), prob.grid)
    traj = simulate(prob.sys, prob.x0, u_sig)
    report = energy_report(prob.sys, traj, u_sig)
    terminal_error = float(weighted_norm(traj.final - prob.xT, prob.sys.weights))
    return OCPResult(u_sig, traj, report.supplied, report.dissipated, terminal_error,
                     kkt, iterations, converged, outer, report, target_gap, polished)


def solve(prob, transcription=None):
    """Minimize the dissipated energy subject to x(T) = xT and u(t) in U.

    Augmented Lagrangian on the terminal constraint with FISTA inner solves,
    started from u = 0. After each outer iteration the active set of the
    iterate is polished by an exact equality-constrained solve, which is kept
    only when it meets both tolerances. With `project_target` the target is
    first replaced by the closest reachable state found in U.

    Raises NotConverged (carrying the last iterate as `result`) when the
    terminal tolerance or the stationarity tolerance is still violated after
    the last outer iteration.
    """
    opts = prob.options
    tr = transcription or transcribe(prob)
    sys, grid = prob.sys, prob.grid
    tol = prob.terminal_tol
    sqrt_w = np.sqrt(sys.weights)
    Mw = sqrt_w[:, None] * tr.M
    rw = sqrt_w * (prob.xT - tr.x_free_T)

    target_gap = 0.0
    if opts.project_target:
        fitted = Mw @ fit_control(Mw, rw, prob.uset, grid.N, max_iter=opts.fit_iterations)
        gap = float(np.linalg.norm(fitted - rw))
        if gap > tol:
            logger.info(f"{sys.name} T={grid.T:g}: target lies {gap:.3e} from the reachable states, "
                        f"steering to the closest one found")
            rw = fitted
            target_gap = gap
    al = _AugmentedLagrangian(tr.H, tr.g, Mw, rw, prob.uset, grid.N)

    rho = opts.rho0
    lip = al.lipschitz(rho, opts.power_iterations)
    if opts.warm_start:
        u, lam = _equality_constrained_minimizer(tr.H, tr.g, Mw, rw)
        u = al.project(u)
        err = float(np.linalg.norm(al.constraint(u)))
        kkt = al.kkt_residual(u, lam, 0.0, lip)
        if err <= tol and kkt <= opts.kkt_tol:
            logger.info(f"{sys.name} T={grid.T:g}: warm start is optimal "
                        f"(terminal_error={err:.3e}, kkt={kkt:.3e})")
            return _result(prob, u, kkt, 0, 0, True, target_gap)
    else:
        u = np.zeros(grid.N * sys.m)
        lam = np.zeros(sys.n)

    iterations = 0
    converged = polished = False
    inner_tol = max(INITIAL_INNER_TOL, opts.kkt_tol)
    kkt = err_prev = math.inf
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        u, inner = al.fista(u, lam, rho, lip, inner_tol, opts.max_inner)
        iterations += inner
        c = al.constraint(u)
        err = float(np.linalg.norm(c))
        lam = lam + rho * c
        # stationarity of the Lagrangian at the updated multiplier
        kkt = al.kkt_residual(u, lam, 0.0, lip)
        logger.debug(f"outer {outer}: rho={rho:.1e}, inner={inner}, terminal_error={err:.3e}, kkt={kkt:.3e}")
        if err <= tol and kkt <= opts.kkt_tol:
            converged = True
            break
        if opts.polish:
            candidate = al.polish(u, opts.kkt_tol)
            if candidate is not None:
                u_p = al.project(candidate[0])
                err_p = float(np.linalg.norm(al.constraint(u_p)))
                kkt_p = al.kkt_residual(u_p, candidate[1], 0.0, lip)
                logger.debug(f"outer {outer}: polished terminal_error={err_p:.3e}, kkt={kkt_p:.3e}")
                if err_p <= tol and kkt_p <= opts.kkt_tol:
                    u, lam, err, kkt = u_p, candidate[1], err_p, kkt_p
                    converged = polished = True
                    break
        if err > tol and err > FEASIBILITY_DECREASE * err_prev and rho < opts.rho_max:
            rho = min(rho * opts.rho_factor, opts.rho_max)
            lip = al.lipschitz(rho, opts.power_iterations)
        err_prev = err
        inner_tol = max(INNER_TOL_FLOOR * opts.kkt_tol, INNER_TOL_DECAY * inner_tol)

    result = _result(prob, u, kkt, iterations, outer, converged, target_gap, polished)
    if not converged:
        logger.warning(f"{sys.name} T={grid.T:g}: no convergence after {outer} outer iterations "
                       f"(terminal_error={result.terminal_error:.3e}, kkt={kkt:.3e})")
        raise NotConverged(result.terminal_error, kkt, result)
    logger.info(f"{sys.name} T={grid.T:g}: converged in {outer} outer / {iterations} inner iterations"
                f"{' (polished)' if polished else ''}, cost_equiv={result.cost_equiv:.6g}")
    return result
