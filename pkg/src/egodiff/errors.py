"""Exception hierarchy. CLI exit codes map onto these classes."""


class EgoDiffError(Exception):
    """Base class for package errors."""


class ContractError(EgoDiffError, ValueError):
    """An input violated a documented precondition."""


class DataError(EgoDiffError):
    """Malformed or inconsistent input data (bundles, CSVs, checkpoints)."""


class NumericalError(EgoDiffError, ArithmeticError):
    """Non-finite values appeared during training or integration."""


class NormalizationError(NumericalError):
    """Normalized energy requested for an all-zero feature matrix."""


class SolverDivergence(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
