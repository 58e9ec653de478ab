"""Symmetric and skew-symmetric operator utilities.

All quantities live on the discrete state space with the quadrature inner
product <x, y> = sum_i w_i x_i y_i. The models use uniform weights w_i = h,
so the plain matrix transpose is the adjoint and J^T = -J is exactly the
skew-adjointness of the interconnection.
"""
import logging
from dataclasses import InitVar, dataclass

import numpy as np
from scipy import linalg

from .config import Config
from .errors import DimensionMismatch, NoGap, NotPSD, NotSkew, NotSymmetric

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def norm2(A):
    """Spectral norm, 0 for empty matrices"""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(linalg.norm(A, 2))


def skew_defect(J):
    J = np.asarray(J, dtype=float)
    if J.size == 0:
        return 0.0
    return float(np.max(np.abs(J + J.T)))


@dataclass(frozen=True, eq=False)
class StructuredOperatorPair:
    """J (skew part of the generator) and R (dissipation), both n x n."""
    J: np.ndarray
    R: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        J = _frozen(self.J)
        R = np.array(self.R, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or R.shape != J.shape:
            raise DimensionMismatch(f"J and R must be square of equal size, got {J.shape} and {R.shape}")
        if check:
            defect = skew_defect(J)
            if defect != 0.0:
                raise NotSkew(defect)
            scale = norm2(R)
            asym = float(np.max(np.abs(R - R.T))) if R.size else 0.0
            if asym > SYMMETRY_RTOL * scale:
                raise NotSymmetric(asym, scale)
            if asym > 0.0:
                R = 0.5 * (R + R.T)
        object.__setattr__(self, 'J', J)
        object.__setattr__(self, 'R', _frozen(R))

    @classmethod
    def from_skew_part(cls, K, R):
        """Build the pair with J = (K - K^T)/2, which is skew to the last bit"""
        K = np.asarray(K, dtype=float)
        return cls(0.5 * (K - K.T), R)

    @property
    def n(self):
        return self.J.shape[0]

    @property
    def A(self):
        return self.J - self.R


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigen-decomposition of R: ascending clamped eigenvalues, orthonormal V."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_tol: float

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    @property
    def kernel_mask(self):
        return self.eigenvalues <= self.kernel_tol

    @property
    def kernel_dim(self):
        return int(np.count_nonzero(self.kernel_mask))

    @property
    def has_gap(self):
        return self.kernel_dim < self.n

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1]) if self.n else 0.0

    @property
    def sigma_plus(self):
        """Smallest eigenvalue above kernel_tol; NoGap when there is none"""
        if not self.has_gap:
            raise NoGap(self.kernel_tol)
        return float(self.eigenvalues[~self.kernel_mask][0])


def eig_sym(R, kernel_tol=None):
    """Spectral data of a symmetric PSD matrix.

    kernel_tol defaults to Config.KERNEL_RTOL * lambda_max(R). Eigenvalues in
    [-kernel_tol, 0) are clamped to zero; anything lower raises NotPSD.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionMismatch(f"R must be square, got shape {R.shape}")
    scale = norm2(R)
    asym = float(np.max(np.abs(R - R.T))) if R.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetric(asym, scale)

    lam, V = linalg.eigh(0.5 * (R + R.T))
    if kernel_tol is None:
        kernel_tol = Config.KERNEL_RTOL * float(np.max(np.abs(lam))) if lam.size else 0.0
    kernel_tol = float(kernel_tol)

    if lam.size and lam[0] < -kernel_tol:
        raise NotPSD(float(lam[0]), kernel_tol)
    lam = np.where(lam < 0.0, 0.0, lam)

    spec = SpectralData(_frozen(lam), _frozen(V), kernel_tol)
    logger.debug(f"eig_sym: n={spec.n}, kernel_dim={spec.kernel_dim}, "
                 f"lambda_max={spec.lambda_max:.6g}, kernel_tol={kernel_tol:.3e}")
    return spec


def sqrt_psd(spec):
    """R^{1/2} = V diag(sqrt(lambda)) V^T"""
    V = spec.eigenvectors
    S = (V * np.sqrt(spec.eigenvalues)) @ V.T
    return 0.5 * (S + S.T)


def kernel_projector(spec):
    """Orthogonal projector onto span{v_i : lambda_i <= kernel_tol}"""
    Vk = spec.eigenvectors[:, spec.kernel_mask]
    P = Vk @ Vk.T
    return 0.5 * (P + P.T)


def _weights(ip, n):
    w = np.asarray(ip, dtype=float)
    if w.ndim == 0:
        return np.full(n, float(w))
    if w.shape != (n,):
        raise DimensionMismatch(f"inner product weights have shape {w.shape}, expected ({n},)")
    return w


def weighted_sq_norm(x, ip):
    """||x||^2 = sum_i w_i x_i^2; x may be (n,) or a batch (k, n)"""
    x = np.asarray(x, dtype=float)
    w = _weights(ip, x.shape[-1])
    return np.sum(w * x * x, axis=-1)


def weighted_norm(x, ip):
    return np.sqrt(weighted_sq_norm(x, ip))


def dist_to_kernel(x, P, ip):
    """||x - P x|| in the weighted inner product; x may be (n,) or (k, n)"""
    x = np.asarray(x, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or x.shape[-1] != P.shape[0]:
        raise DimensionMismatch(f"state of size {x.shape[-1]} does not match projector {P.shape}")
    return weighted_norm(x - x @ P.T, ip)


def operator_norm(B, ip):
    """Norm of B from Euclidean control space into the weighted state space"""
    B = np.asarray(B, dtype=float)
    w = _weights(ip, B.shape[0])
    return norm2(np.sqrt(w)[:, None] * B)
