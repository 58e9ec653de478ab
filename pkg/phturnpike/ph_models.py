"""Port-Hamiltonian model builders: 1-D Neumann diffusion and the Timoshenko beam."""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .operator_core import StructuredOperatorPair, eig_sym, kernel_projector, operator_norm, sqrt_psd

logger = logging.getLogger(__name__)

# Actuator/patch membership is decided on grid positions; a tiny slack keeps
# points that sit exactly on an interval end inside the interval.
_EDGE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    """Spatial metadata. `positions[i]` and `field_index[i]` describe coordinate i."""
    h: float
    size: int
    domain: str
    fields: tuple
    positions: np.ndarray = field(repr=False)
    field_index: np.ndarray = field(repr=False)

    def field_slice(self, name):
        k = self.fields.index(name)
        idx = np.flatnonzero(self.field_index == k)
        return slice(int(idx[0]), int(idx[-1]) + 1)


@dataclass(frozen=True, eq=False)
class PHSystem:
    """x' = (J - R) x + B u with output y = B^T W x, W = h I."""
    ops: StructuredOperatorPair
    B: np.ndarray
    grid: Grid
    labels: tuple
    name: str = "custom"

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if B.shape[0] != self.ops.n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, state dimension is {self.ops.n}")
        B.setflags(write=False)
        object.__setattr__(self, 'B', B)
        if len(self.labels) != self.ops.n:
            raise DimensionMismatch(f"{len(self.labels)} labels for {self.ops.n} coordinates")
        if B.shape[1] and np.linalg.matrix_rank(B) < B.shape[1]:
            logger.warning(f"{self.name}: input map B has rank {np.linalg.matrix_rank(B)} < m = {B.shape[1]}")

    @classmethod
    def from_matrices(cls, J, R, B, h=1.0, name="custom", check=True):
        J = np.asarray(J, dtype=float)
        n = J.shape[0]
        grid = Grid(h=float(h), size=n, domain="abstract", fields=("x",),
                    positions=np.arange(n, dtype=float), field_index=np.zeros(n, dtype=int))
        labels = tuple(f"x{i + 1}" for i in range(n))
        return cls(StructuredOperatorPair(J, R, check=check), B, grid, labels, name)

    def with_operators(self, J=None, R=None, check=True):
        """Copy with J and/or R replaced (used by verification hooks)"""
        ops = StructuredOperatorPair(self.J if J is None else J, self.R if R is None else R, check=check)
        return PHSystem(ops, self.B, self.grid, self.labels, self.name)

    @property
    def J(self):
        return self.ops.J

    @property
    def R(self):
        return self.ops.R

    @property
    def A(self):
        return self.ops.A

    @property
    def n(self):
        return self.ops.n

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def h(self):
        return self.grid.h

    @property
    def weights(self):
        return np.full(self.n, self.grid.h)

    @cached_property
    def spectral(self):
        return eig_sym(self.R)

    @cached_property
    def sqrt_R(self):
        return sqrt_psd(self.spectral)

    @cached_property
    def kernel_projector(self):
        return kernel_projector(self.spectral)

    @cached_property
    def spectral_radius(self):
        """rho(J - R), which governs the explicit RK4 step limit"""
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @cached_property
    def input_norm(self):
        return operator_norm(self.B, self.weights)

    def inner(self, x, y):
        return self.h * np.sum(np.asarray(x) * np.asarray(y), axis=-1)


@dataclass(frozen=True)
class DiffusionConfig:
    n_cells: int = 21
    d: float = 0.1
    delta: float = 0.1
    actuators: tuple = None

    def intervals(self):
        if self.actuators is None:
            return ((0.5 - self.delta, 0.5 + self.delta),)
        return tuple(tuple(a) for a in self.actuators)

    def validate(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ConfigError("n_cells", f"must be an integer >= 2, got {self.n_cells}")
        if not self.d > 0:
            raise ConfigError("d", f"diffusivity must be > 0, got {self.d}")
        if self.actuators is None and not 0 < self.delta <= 0.5:
            raise ConfigError("delta", f"actuator half-width must lie in (0, 0.5], got {self.delta}")
        intervals = self.intervals()
        if not intervals:
            raise ConfigError("actuators", "at least one actuator is required")
        for a, b in intervals:
            if not 0 <= a < b <= 1:
                raise ConfigError("actuators", f"interval [{a}, {b}] must satisfy 0 <= a < b <= 1")
        return self


@dataclass(frozen=True)
class TimoshenkoConfig:
    n_nodes: int = 50
    R1: float = 1.0
    R2: float = 1.0
    nu: float = 0.5

    def validate(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            raise ConfigError("n_nodes", f"must be an integer >= 2, got {self.n_nodes}")
        if not self.R1 > 0:
            raise ConfigError("R1", f"damping must be > 0, got {self.R1}")
        if not self.R2 > 0:
            raise ConfigError("R2", f"damping must be > 0, got {self.R2}")
        if not 0 < self.nu <= 1:
            raise ConfigError("nu", f"patch width must lie in (0, 1], got {self.nu}")
        return self


def _indicator(z, a, b):
    return ((z >= a - _EDGE_SLACK) & (z <= b + _EDGE_SLACK)).astype(float)


def neumann_laplacian_stencil(n):
    """Integer matrix of -h^2 * Laplacian on n cells with zero-flux end faces"""
    L = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    L[0, 0] = L[-1, -1] = 1
    return L


def build_diffusion(cfg=None):
    """Cell-centred finite differences for x' = d x'' + sum_i psi_i u_i, Neumann boundary"""
    cfg = (cfg or DiffusionConfig()).validate()
    n = int(cfg.n_cells)
    h = 1.0 / n
    centers = (np.arange(n) + 0.5) / n

    # R 1 = 0 exactly: integer stencil with zero row sums times one scalar
    R = (cfg.d / h ** 2) * neumann_laplacian_stencil(n)
    ops = StructuredOperatorPair(np.zeros((n, n)), R)

    columns = []
    for a, b in cfg.intervals():
        col = _indicator(centers, a, b)
        if not col.any():
            raise ConfigError("actuators", f"interval [{a}, {b}] contains no cell centre for n_cells={n}")
        columns.append(col)
    B = np.column_stack(columns)

    grid = Grid(h=h, size=n, domain="[0, 1], cell-centred", fields=("concentration",),
                positions=centers, field_index=np.zeros(n, dtype=int))
    labels = tuple(f"concentration@{z:.6f}" for z in centers)
    logger.info(f"Built diffusion model: n_cells={n}, d={cfg.d}, actuators={cfg.intervals()}")
    return PHSystem(ops, B, grid, labels, name="diffusion")


TIMOSHENKO_FIELDS = ("shear_displacement", "transverse_momentum", "angular_displacement", "angular_momentum")


def build_timoshenko(cfg=None):
    """Timoshenko beam, clamped left end, internal damping on both momenta.

    x1, x3 sit on z_i = i h (i = 0..n-1, x(1) = 0 eliminated), x2, x4 on
    z_i = (i + 1) h (x(0) = 0 eliminated). D is the forward difference onto the
    x1/x3 nodes and -D^T the matching backward difference, so the blocks
    (D, -D^T) integrate by parts exactly.
    """
    cfg = (cfg or TimoshenkoConfig()).validate()
    n = int(cfg.n_nodes)
    h = 1.0 / n
    D = (np.eye(n) - np.eye(n, k=-1)) / h
    I = np.eye(n)
    s1, s2, s3, s4 = (slice(k * n, (k + 1) * n) for k in range(4))

    K = np.zeros((4 * n, 4 * n))
    K[s1, s2] = D
    K[s3, s4] = D
    K[s1, s4] = -I
    J = K - K.T

    R = np.zeros((4 * n, 4 * n))
    R[s2, s2] = cfg.R1 * I
    R[s4, s4] = cfg.R2 * I
    ops = StructuredOperatorPair(J, R)

    left_nodes = np.arange(n) / n
    right_nodes = np.arange(1, n + 1) / n
    B = np.zeros((4 * n, 2))
    B[s4, 0] = _indicator(right_nodes, 0.0, cfg.nu)
    B[s4, 1] = _indicator(right_nodes, 1.0 - cfg.nu, 1.0)

    positions = np.concatenate([left_nodes, right_nodes, left_nodes, right_nodes])
    field_index = np.repeat(np.arange(4), n)
    grid = Grid(h=h, size=n, domain="[0, 1], staggered nodes", fields=TIMOSHENKO_FIELDS,
                positions=positions, field_index=field_index)
    labels = tuple(f"x{k + 1}@{z:.6f}" for k, z in zip(field_index, positions))
    logger.info(f"Built Timoshenko model: n_nodes={n}, R1={cfg.R1}, R2={cfg.R2}, nu={cfg.nu}")
    return PHSystem(ops, B, grid, labels, name="timoshenko")


def output_map(sys, x):
    """y = B^T W x; x may be a single state or a batch (k, n)"""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.n:
        raise DimensionMismatch(f"state of size {x.shape[-1]} does not match system dimension {sys.n}")
    return sys.h * (x @ sys.B)
