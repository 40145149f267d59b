class InvalidParameter(ValueError):
    """Raised for inputs outside an operation's documented domain."""


class NumericalFailure(RuntimeError):
    """Raised when a solver cannot meet its residual contract.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (residual norms, iteration counts, inertia, ...).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
