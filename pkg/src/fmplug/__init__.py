"""Inverse problems with flow-matching priors: warm-started plug-in solvers.

The package is organized by concern:

``autodiff``        reverse-mode differentiation over numpy arrays
``flow``            schedules, velocity fields, field training, checkpoints
``generator``       unrolled ODE integration ``G(z, t_start)``
``forward_models``  linear measurement operators
``solver``          warm start, shell projection, calibration, ``solve``
``baselines``       plain plug-in and D-Flow-style solvers
``harness``         metrics, oracles, configs and benchmark suites
"""

from .errors import FMPlugError
from .flow import GaussianPrior, GMMPrior, linear_schedule
from .generator import Generator, generate, invert
from .solver import ShellConstraint, SolveConfig, SolveResult, make_problem, shell_project, solve

__version__ = "0.1.0"

__all__ = [
    "FMPlugError", "GaussianPrior", "GMMPrior", "Generator", "ShellConstraint", "SolveConfig",
    "SolveResult", "generate", "invert", "linear_schedule", "make_problem", "shell_project",
    "solve",
]
