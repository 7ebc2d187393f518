"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """A computation produced (or was fed) a NaN or infinity.

    ``where`` names the layer, parameter slice or function involved.
    """

    def __init__(self, message: str, where: str | None = None):
        super().__init__(message if where is None else f"{message} [{where}]")
        self.where = where


class DomainError(NonFiniteError):
    """An elementary function was evaluated outside its domain."""


class GridError(ValueError):
    """Invalid grid specification or node selection."""
