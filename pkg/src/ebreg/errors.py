"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration or mismatched dimensions."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class TrainingError(RuntimeError):
    """Numerical failure during training (NaN loss, degenerate weights)."""


class RefinementError(RuntimeError):
    """Numerical failure during gradient-ascent refinement."""


class EvaluationError(RuntimeError):
    """Evaluation could not be carried out (e.g. grid too narrow)."""
