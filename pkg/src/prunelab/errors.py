"""Exception types raised across the laboratory."""


class PruneLabError(Exception):
    """Base class for all package errors."""


class ShapeError(PruneLabError):
    """Layer shapes do not compose; message names the offending layer."""


class NumericError(PruneLabError):
    """NaN/Inf produced by an engine operation; message names the layer."""


class ConfigError(PruneLabError):
    """Invalid experiment configuration; message carries the key path."""


class FormatError(PruneLabError):
    """Malformed dataset or model file."""


class StateError(PruneLabError):
    """Operation called in the wrong phase (e.g. finalize before AllReached)."""


class ContractViolation(PruneLabError):
    """A caller broke an operation precondition (e.g. non-permutation ranks)."""


class ComparisonError(PruneLabError):
    """Runs being compared do not share a network/dataset/target setup."""


class BracketError(PruneLabError):
    """No local minimum found inside the requested bracket."""


class SaddleError(PruneLabError):
    """Stationary point found but second derivative is not positive."""


class DomainError(PruneLabError):
    """Input outside an operation's mathematical domain (e.g. omega == 0)."""
