class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class NumericalError(RuntimeError):
    """Raised when an iterative routine fails to converge or produces non-finite output."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""


class ProxInvariantError(RuntimeError):
    """No bracketing index was found in a hierarchical proximal map."""
