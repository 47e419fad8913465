class DataError(ValueError):
    """Malformed or invariant-violating input data."""


class NumericError(ArithmeticError):
    """Non-finite values appeared during a numeric computation."""
