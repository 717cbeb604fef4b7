"""Joint deconvolution and sparse blind source separation for multichannel
data sampled on the sphere."""

from . import baselines, metrics, model, regularize, solver, sphere, starlet
from .errors import (
    ConvergenceWarning,
    DegenerateColumnWarning,
    DegenerateKernelError,
    GenerationError,
    InitializationError,
    InvalidArgumentError,
    SDecError,
    SingularSystemError,
    SolverError,
)
from .model import Dataset, SimulationParams, simulate
from .solver import SolverConfig, run_nonblind, run_sdecgmca

__version__ = "0.1.0"
