class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input is valid in shape but the operation is undefined for it."""


class CapacityError(ValueError):
    """Bag holds more instances than the positional table can address."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""
