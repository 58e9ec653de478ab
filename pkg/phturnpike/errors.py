"""Exceptions raised by the phturnpike library."""


class PHTurnpikeError(Exception):
    """Base class for all library errors"""


class NotSymmetric(PHTurnpikeError, ValueError):
    def __init__(self, asymmetry, scale):
        self.asymmetry = asymmetry
        self.scale = scale
        super().__init__(f"Matrix is not symmetric: max |R - R^T| = {asymmetry:.3e} "
                         f"exceeds 1e-12 * ||R|| = {1e-12 * scale:.3e}")


class NotSkew(PHTurnpikeError, ValueError):
    def __init__(self, defect):
        self.defect = defect
        super().__init__(f"J is not skew-symmetric: max |J + J^T| = {defect:.3e}")


class NotPSD(PHTurnpikeError, ValueError):
    def __init__(self, eigenvalue, kernel_tol):
        self.eigenvalue = eigenvalue
        self.kernel_tol = kernel_tol
        super().__init__(f"R has eigenvalue {eigenvalue:.3e} below -kernel_tol = {-kernel_tol:.3e}")


class InvalidArgument(PHTurnpikeError, ValueError):
    """An argument outside its admissible range (non-positive horizon, empty control set, ...)"""


class NoGap(PHTurnpikeError):
    def __init__(self, kernel_tol):
        self.kernel_tol = kernel_tol
        super().__init__(f"No eigenvalue of R exceeds kernel_tol = {kernel_tol:.3e}; sigma_plus is undefined")


class DimensionMismatch(PHTurnpikeError, ValueError):
    pass


class UnstableStep(PHTurnpikeError):
    def __init__(self, dt, max_dt):
        self.dt = dt
        self.max_dt = max_dt
        super().__init__(f"RK4 step dt = {dt:.6g} is outside the stability region; "
                         f"maximal admissible dt = {max_dt:.6g}")


class GridMismatch(PHTurnpikeError, ValueError):
    pass


class HorizonTooShort(PHTurnpikeError, ValueError):
    def __init__(self, T, T0, T1):
        self.T = T
        self.T0 = T0
        self.T1 = T1
        super().__init__(f"Horizon T = {T:g} is shorter than T0 + T1 = {T0 + T1:g}")


class NotConverged(PHTurnpikeError):
    def __init__(self, terminal_error, kkt_residual, result=None):
        self.terminal_error = terminal_error
        self.kkt_residual = kkt_residual
        self.result = result
        super().__init__(f"Solver did not converge: terminal_error = {terminal_error:.3e}, "
                         f"kkt_residual = {kkt_residual:.3e}")


class ConfigError(PHTurnpikeError, ValueError):
    def __init__(self, field, message, line=None, source=None):
        self.field = field
        self.line = line
        self.source = source
        self.message = message
        location = ""
        if source is not None:
            location = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            location = f"line {line}: "
        super().__init__(f"{location}{field}: {message}")
