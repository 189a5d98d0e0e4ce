"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad inputs: shapes, parameter domains, malformed files or configs."""


class EstimationError(RuntimeError):
    """A numeric procedure could not produce a finite estimate."""
