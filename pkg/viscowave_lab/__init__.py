"""
Viscoelastic Wave Lab

Numerical laboratory for the radial viscoelastic wave equation with a
memory kernel, singular damping |x|^{-σ}u_t and a power source: kernel
certification, potential-well depth, energy-stable time stepping with
blow-up detection, and decay / blow-up analysis against the theoretical
bounds.
"""

__version__ = "0.1.0"
__license__ = "MIT"

from .kernel import KernelSpec, KernelCertificate, certify
from .mesh import ProblemSpec, RadialMesh, make_profile
from .functionals import FunctionalRecord, HistoryBuffer, WaveState, energy_balance
from .wellpot import WellReport, WellSet, classify, scale_into, well_depth
from .solver import SolverConfig, Trajectory, TrajectoryStatus, WaveSolver, mms_study
from .analysis import blowup_report, fit_decay
from .config_loader import ConfigLoader
from .exceptions import (ConfigError, DegenerateFieldError, InfeasibleError, PreconditionError,
                         ViscowaveError)

__all__ = [
    "KernelSpec",
    "KernelCertificate",
    "certify",
    "ProblemSpec",
    "RadialMesh",
    "make_profile",
    "FunctionalRecord",
    "HistoryBuffer",
    "WaveState",
    "energy_balance",
    "WellReport",
    "WellSet",
    "classify",
    "scale_into",
    "well_depth",
    "SolverConfig",
    "Trajectory",
    "TrajectoryStatus",
    "WaveSolver",
    "mms_study",
    "blowup_report",
    "fit_decay",
    "ConfigLoader",
    "ConfigError",
    "DegenerateFieldError",
    "InfeasibleError",
    "PreconditionError",
    "ViscowaveError",
]
