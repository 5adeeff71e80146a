class NumericalError(RuntimeError):
    """Base for failures of a numerical procedure (CLI exit code 2)."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, iterations: int, change: float):
        super().__init__(f"{message} (iterations={iterations}, last change={change:.3g})")
        self.iterations = iterations
        self.change = change


class CalibrationError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class TableMismatchError(ValueError):
    """A stored table does not match the configuration asking for it."""
