"""Exception types raised across the package."""


class RecurlabError(Exception):
    pass


class DimensionError(RecurlabError, ValueError):
    """An operand has the wrong shape for the owning system."""

    def __init__(self, operand, expected, got):
        self.operand = operand
        self.expected = expected
        self.got = got
        super().__init__(f"{operand}: expected dimension {expected}, got {got}")


class ContractError(RecurlabError, ValueError):
    pass


class NumericalError(RecurlabError, ArithmeticError):
    """Iterative computation failed to converge or diverged."""

    def __init__(self, message, last_residual=None):
        self.last_residual = last_residual
        super().__init__(message)


class DetectabilityError(RecurlabError):
    pass


class GridExitError(RecurlabError):
    def __init__(self, node, control, noise_node):
        self.node = node
        self.control = control
        self.noise_node = noise_node
        super().__init__(
            f"successor leaves the grid: node={node}, control={control}, noise node={noise_node}"
        )


class EmptyFeasibleSet(RecurlabError):
    pass


class ConfigError(RecurlabError, ValueError):
    """Carries every validation error found, not just the first."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
