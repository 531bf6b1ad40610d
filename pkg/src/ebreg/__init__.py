"""Energy-based probabilistic regression on small numpy networks."""
from .densities import GroundTruthDensity, Proposal, make_rng
from .ebm import EnergyModel, YGrid, fit_ebm, partition_grid, partition_importance
from .errors import (ConfigurationError, ContractError, EvaluationError, RefinementError,
                     TrainingError)
from .harness import ExperimentConfig
from .predict import RefineConfig, refine_multi, refine_s1, refine_s2

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractError", "EnergyModel", "EvaluationError",
    "ExperimentConfig", "GroundTruthDensity", "Proposal", "RefineConfig",
    "RefinementError", "TrainingError", "YGrid", "fit_ebm", "make_rng",
    "partition_grid", "partition_importance", "refine_multi", "refine_s1", "refine_s2",
]
