"""Exception types shared across the package."""


class GhomError(Exception):
    pass


class ArgumentError(GhomError, ValueError):
    """Bad shapes, arities or out-of-range scalars."""


class CapabilityError(GhomError, NotImplementedError):
    """Requested order/structure is not supported by the component."""


class ConfigurationError(GhomError, ValueError):
    pass


class InsufficientDataError(GhomError, ValueError):
    pass


class NumericalError(GhomError, ArithmeticError):
    def __init__(self, msg, **diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


class DomainError(GhomError, ValueError):
    """Point outside dom f (simple part is +inf)."""
