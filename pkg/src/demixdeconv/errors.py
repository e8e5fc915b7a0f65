"""Exception types raised across the package."""


class DemixError(Exception):
    """Base class for all package errors."""


class DimensionError(DemixError, ValueError):
    """Shapes or sizes are invalid or mutually incompatible."""


class NormalizationError(DemixError, ValueError):
    """A vector that must have unit norm does not."""


class NumericError(DemixError, ArithmeticError):
    """Non-finite values or divergence inside a numerical routine.

    Parameters
    ----------
    message : str
        Human readable description.
    iteration : int, optional
        Iteration index at which the problem was detected.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ConstructionError(DemixError):
    """Random partition construction exhausted its attempts.

    ``best_nu`` carries the smallest ``max ||Id - T_{i,p}||`` seen, or
    ``inf`` if no attempt even satisfied the size constraints.
    """

    def __init__(self, message, best_nu):
        super().__init__(f"{message}; best nu_achieved = {best_nu:.4g}")
        self.best_nu = best_nu


class PartitionDegeneracyError(DemixError, ArithmeticError):
    """A partition frame matrix T_{i,p} is singular."""


class FrameError(DemixError, ValueError):
    """A tangent-space basis failed its orthonormality check."""


class UndefinedRatioError(DemixError, ZeroDivisionError):
    """A relative error was requested against a zero reference block."""


class TrialError(DemixError):
    """A solver failed inside an experiment trial.

    The original exception is chained as ``__cause__``.
    """

    def __init__(self, message, rho, trial_index, solver=None):
        where = f"rho={rho}, trial={trial_index}" + (f", solver={solver}" if solver else "")
        super().__init__(f"{message} ({where})")
        self.rho = rho
        self.trial_index = trial_index
        self.solver = solver
