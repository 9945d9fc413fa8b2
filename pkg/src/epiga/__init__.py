"""Epigenetic genetic algorithm with a learnable attention-based encoding layer."""

from .autodiff import NumericError, ShapeError, Tape, Tensor, backward
from .benchmarks import BenchmarkProblem, DomainError, Peak, get_problem, grid_oracle
from .deepigen import DeepiGenConfig, DeepiGenModel, init_model
from .ga import GaConfig, run_epigeal, run_plain_ga

__all__ = [
    "BenchmarkProblem",
    "DeepiGenConfig",
    "DeepiGenModel",
    "DomainError",
    "GaConfig",
    "NumericError",
    "Peak",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "get_problem",
    "grid_oracle",
    "init_model",
    "run_epigeal",
    "run_plain_ga",
]
__version__ = "0.1.0"
