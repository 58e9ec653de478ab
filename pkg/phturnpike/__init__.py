"""Singular minimum-energy-supply control of port-Hamiltonian systems and its turnpike toward ker R."""
from .errors import (ConfigError, DimensionMismatch, GridMismatch, HorizonTooShort, NoGap, NotConverged,
                     NotPSD, NotSkew, NotSymmetric, PHTurnpikeError, UnstableStep)
from .ocp_solver import ControlSet, OCPProblem, OCPResult, SolverOptions, project_uset, solve, transcribe
from .operator_core import (SpectralData, StructuredOperatorPair, dist_to_kernel, eig_sym, kernel_projector,
                            sqrt_psd)
from .ph_models import DiffusionConfig, PHSystem, TimoshenkoConfig, build_diffusion, build_timoshenko
from .simulate import (ControlSignal, EnergyReport, TimeGrid, Trajectory, energy_report, simulate,
                       step_rk4)
from .turnpike import (ThreePhaseControl, TurnpikeReport, steer, three_phase_control, turnpike_bound,
                       turnpike_metric)

__version__ = "0.1.0"
