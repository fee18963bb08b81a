"""Exception hierarchy shared across the toolkit."""


class CausalLiftError(Exception):
    """Base class for all toolkit errors."""


class ExprSyntaxError(CausalLiftError):
    """Malformed expression text; carries a 0-based column offset."""

    def __init__(self, message, column):
        super().__init__(f"{message} (column {column})")
        self.column = column


class ModelSyntaxError(CausalLiftError):
    """Malformed model file; carries 1-based line and 0-based column."""

    def __init__(self, message, line, column=0):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.column = column


class ModelValidationError(CausalLiftError):
    """Structurally invalid network model."""


class EvalDomainError(CausalLiftError):
    """Expression evaluation hit a domain error (division by zero)."""


class MonotonicityError(CausalLiftError):
    """Law is not monotone on the requested bracket."""


class BracketError(CausalLiftError):
    """Bisection bracket does not enclose the target value."""


class NotIntegralCausalityError(CausalLiftError):
    """A storage element would be forced into derivative causality."""


class CausalConflictError(CausalLiftError):
    """Two members try to decide the same junction variable."""


class AlgebraicLoopError(CausalLiftError):
    """The causal evaluation order contains a cycle."""


class AugmentationError(CausalLiftError):
    """Invalid physical-augmentation request."""


class DivergenceError(CausalLiftError):
    """Simulation produced a non-finite state."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class SchemaMismatchError(CausalLiftError):
    """Trajectories or datasets with incompatible layouts."""


class UnderdeterminedError(CausalLiftError):
    """Fewer snapshot rows than regression columns."""


class DegenerateTlsError(CausalLiftError):
    """Degenerate smallest singular subspace in total least squares."""


class RolloutDivergenceError(CausalLiftError):
    """Linear rollout produced a non-finite iterate."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ConfigError(CausalLiftError):
    """Invalid experiment configuration."""


class DirectDriveWarning(UserWarning):
    """A resistor output is directly driven by a source; omit it from the
    lifted observables instead of augmenting the model."""
