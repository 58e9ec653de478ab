"""Time integration of x' = (J - R) x + B u for piecewise-constant controls.

Each control interval is advanced with classical RK4, subdivided into
substeps whenever dt * rho(J - R) would leave the stability region. The
interval map is affine, x_{k+1} = Phi x_k + Gamma u_k, and is assembled once
per (system, dt) by stepping identity columns, so every simulation and the
transcription in ocp_solver share the same arithmetic.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import Config
from .errors import DimensionMismatch, GridMismatch, InvalidArgument, UnstableStep
from .operator_core import weighted_sq_norm
from .ph_models import output_map

logger = logging.getLogger(__name__)

# |1 + z + z^2/2 + z^3/6 + z^4/24| <= 1 on the negative real axis up to here
STABILITY_LIMIT = 2.78


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument(f"horizon T must be > 0, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidArgument(f"number of intervals N must be an integer >= 1, got {self.N}")
        object.__setattr__(self, 'T', float(self.T))
        object.__setattr__(self, 'N', int(self.N))

    @property
    def dt(self):
        return self.T / self.N

    @property
    def times(self):
        return self.T * np.arange(self.N + 1) / self.N

    @property
    def midpoint_times(self):
        return self.T * (np.arange(self.N) + 0.5) / self.N


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """values[k] is held constant on [t_k, t_{k+1})"""
    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.N:
            raise DimensionMismatch(f"control values have shape {values.shape}, expected ({self.grid.N}, m)")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("control values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def m(self):
        return self.values.shape[1]

    @classmethod
    def zeros(cls, grid, m):
        return cls(np.zeros((grid.N, m)), grid)

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (grid.N, 1)), grid)

    @classmethod
    def from_function(cls, grid, fn):
        """Sample fn(t) at the interval midpoints"""
        return cls(np.array([np.atleast_1d(fn(t)) for t in grid.midpoint_times]), grid)

    def node_values(self):
        """Control seen at each node: u_k at t_k, the last value repeated at t_N"""
        return np.vstack([self.values, self.values[-1:]])


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    grid: TimeGrid
    midpoints: np.ndarray = field(default=None, repr=False)

    @property
    def final(self):
        return self.states[-1]

    def state_at_half_horizon(self):
        """x(T/2): a node when N is even, an interval midpoint otherwise"""
        N = self.grid.N
        if N % 2 == 0:
            return self.states[N // 2]
        if self.midpoints is None:
            raise InvalidArgument("odd N needs midpoint samples to evaluate x(T/2)")
        return self.midpoints[(N - 1) // 2]


@dataclass(frozen=True)
class EnergyReport:
    supplied: float
    hamiltonian_delta: float
    dissipated: float
    residual: float
    profile: dict = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            'supplied': self.supplied,
            'hamiltonian_delta': self.hamiltonian_delta,
            'dissipated': self.dissipated,
            'residual': self.residual,
        }


@dataclass(frozen=True, eq=False)
class Propagator:
    """Affine interval maps for a full step dt and for the half step dt/2"""
    Phi: np.ndarray
    Gamma: np.ndarray
    Phi_half: np.ndarray
    Gamma_half: np.ndarray
    dt: float
    substeps: int


def max_stable_dt(sys):
    rho = sys.spectral_radius
    return math.inf if rho == 0.0 else STABILITY_LIMIT / rho


def step_rk4(sys, x, u, dt):
    """One classical RK4 step with u held constant.

    x may be a state (n,) or a matrix of column states (n, k); u is then
    (m,) or (m, k) respectively. The step is checked against dt * rho(J - R) <= 2.78;
    with J = 0 this is the bound dt * lambda_max(R) <= 2.78.
    """
    if dt > max_stable_dt(sys):
        raise UnstableStep(dt, max_stable_dt(sys))
    A = sys.A
    b = sys.B @ u
    k1 = A @ x + b
    k2 = A @ (x + 0.5 * dt * k1) + b
    k3 = A @ (x + 0.5 * dt * k2) + b
    k4 = A @ (x + dt * k3) + b
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _interval_map(sys, dt, substeps):
    h = dt / substeps
    Phi_s = step_rk4(sys, np.eye(sys.n), np.zeros((sys.m, sys.n)), h)
    Gamma_s = step_rk4(sys, np.zeros((sys.n, sys.m)), np.eye(sys.m), h)
    Phi = np.eye(sys.n)
    Gamma = np.zeros((sys.n, sys.m))
    for _ in range(substeps):
        Phi = Phi_s @ Phi
        Gamma = Phi_s @ Gamma + Gamma_s
    return Phi, Gamma


def substeps_for(sys, dt):
    rho = sys.spectral_radius
    target = Config.SUBSTEP_SAFETY * STABILITY_LIMIT
    return max(1, math.ceil(dt * rho / target))


@lru_cache(maxsize=64)
def propagator(sys, dt, substep=True):
    """Interval maps for step dt; substep=False refuses to subdivide"""
    s = substeps_for(sys, dt) if substep else 1
    Phi, Gamma = _interval_map(sys, dt, s)
    Phi_half, Gamma_half = _interval_map(sys, 0.5 * dt, math.ceil(s / 2))
    if s > 1:
        logger.debug(f"{sys.name}: dt={dt:.4g} split into {s} RK4 substeps (rho={sys.spectral_radius:.4g})")
    return Propagator(Phi, Gamma, Phi_half, Gamma_half, dt, s)


def simulate(sys, x0, u, substep=True):
    """Node states (and interval midpoints) of the discrete mild solution"""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise DimensionMismatch(f"x0 has shape {x0.shape}, expected ({sys.n},)")
    if u.m != sys.m:
        raise DimensionMismatch(f"control has {u.m} channels, system has {sys.m}")
    grid = u.grid
    prop = propagator(sys, grid.dt, substep)

    forcing = u.values @ prop.Gamma.T
    X = np.empty((grid.N + 1, sys.n))
    X[0] = x0
    Phi = prop.Phi
    for k in range(grid.N):
        X[k + 1] = Phi @ X[k] + forcing[k]
    mids = X[:-1] @ prop.Phi_half.T + u.values @ prop.Gamma_half.T
    return Trajectory(X, grid, mids)


def hamiltonian(sys, x):
    """H(x) = 1/2 ||x||^2 in the state inner product"""
    return 0.5 * weighted_sq_norm(x, sys.weights)


def dissipation_rate(sys, x):
    """||R^{1/2} x||^2 in the state inner product; x may be a batch"""
    x = np.asarray(x, dtype=float)
    return weighted_sq_norm(x @ sys.sqrt_R, sys.weights)


def simpson_weights(grid):
    """Composite Simpson with one midpoint per interval: node and midpoint weights"""
    dt = grid.dt
    nodes = np.full(grid.N + 1, 2.0 * dt / 6.0)
    nodes[0] = nodes[-1] = dt / 6.0
    mids = np.full(grid.N, 4.0 * dt / 6.0)
    return nodes, mids


def interval_simpson(grid, f_nodes, f_mids):
    """Per-interval Simpson integrals of sampled values"""
    return grid.dt / 6.0 * (f_nodes[:-1] + 4.0 * f_mids + f_nodes[1:])


def _midpoints(sys, traj, u):
    if traj.midpoints is not None:
        return traj.midpoints
    prop = propagator(sys, traj.grid.dt)
    return traj.states[:-1] @ prop.Phi_half.T + u.values @ prop.Gamma_half.T


def energy_report(sys, traj, u):
    """Terms of the dissipation equality, integrated by composite Simpson"""
    if traj.grid != u.grid:
        raise GridMismatch(f"trajectory grid {traj.grid} differs from control grid {u.grid}")
    grid = traj.grid
    X = traj.states
    Y = _midpoints(sys, traj, u)

    # supplied power <u, y> with u constant on each interval
    y_nodes = output_map(sys, X)
    y_mids = output_map(sys, Y)
    p_left = np.sum(u.values * y_nodes[:-1], axis=1)
    p_mid = np.sum(u.values * y_mids, axis=1)
    p_right = np.sum(u.values * y_nodes[1:], axis=1)
    supplied_k = grid.dt / 6.0 * (p_left + 4.0 * p_mid + p_right)
    dissipated_k = interval_simpson(grid, dissipation_rate(sys, X), dissipation_rate(sys, Y))

    H = hamiltonian(sys, X)
    supplied = float(np.sum(supplied_k))
    dissipated = float(np.sum(dissipated_k))
    delta = float(H[-1] - H[0])
    profile = {
        't': grid.times,
        'H': H,
        'supplied': np.concatenate([[0.0], np.cumsum(supplied_k)]),
        'dissipated': np.concatenate([[0.0], np.cumsum(dissipated_k)]),
    }
    return EnergyReport(supplied, delta, dissipated, supplied - delta - dissipated, profile)


def field_energies(sys, traj):
    """Squared norm of every field over time, shape (N + 1, number of fields)"""
    fields = sys.grid.fields
    out = np.empty((traj.states.shape[0], len(fields)))
    for k, name in enumerate(fields):
        sl = sys.grid.field_slice(name)
        out[:, k] = sys.h * np.sum(traj.states[:, sl] ** 2, axis=1)
    return out
