class DataError(Exception):
    """Bad or missing input data (files, annotations, dimensions)."""


class ModelFormatError(DataError):
    """A model file is truncated, corrupt, or does not match expectations."""


class NumericalError(ArithmeticError):
    """An objective or gradient became non-finite during optimization."""

    def __init__(self, message, iteration=None, grad_norm=None):
        super().__init__(message)
        self.iteration = iteration
        self.grad_norm = grad_norm
