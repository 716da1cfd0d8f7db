"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An input or operand has a shape incompatible with the operation."""


class GraphStateError(RuntimeError):
    """A graph method was called out of order (e.g. backward before forward)."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class SupportError(ValueError):
    """A density ratio was requested between measures without shared support."""


class ConfigError(ValueError):
    """An experiment config could not be parsed or contains unknown keys."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss and stopped.

    Attributes
    ----------
    step : int
        The training step at which the abort happened.
    loss_name : str
        Which loss went non-finite.
    """

    def __init__(self, step, loss_name):
        super().__init__(f"non-finite value in {loss_name} at step {step}")
        self.step = step
        self.loss_name = loss_name
