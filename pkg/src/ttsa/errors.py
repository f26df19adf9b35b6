"""Exception hierarchy shared by every ttsa module."""


class TTSAError(Exception):
    """Base class for all errors raised by ttsa."""


class InputError(TTSAError, ValueError):
    """Bad argument values (non-finite inputs, unnormalized weights, empty windows)."""


class ModelDefinitionError(TTSAError):
    """A user supplied model (kernel, field) violates its own contract."""


class StructuralError(TTSAError):
    """A transition matrix lacks a required structural property."""

    def __init__(self, message, unreachable=()):
        super().__init__(message)
        self.unreachable = tuple(unreachable)


class ScheduleError(TTSAError):
    """A step-size schedule fails one of the validation flags."""

    def __init__(self, failed):
        self.failed = tuple(failed)
        super().__init__("step schedule violates: " + ", ".join(self.failed))


class DivergenceError(TTSAError):
    """The iterates became non-finite."""

    def __init__(self, step, seed=None):
        self.step = step
        self.seed = seed
        super().__init__(f"non-finite iterate at step {step}" + ("" if seed is None else f" (seed {seed})"))


class StabilityViolation(TTSAError):
    """The running sup-norm of the iterates exceeded the monitoring budget."""

    def __init__(self, step, value, budget, seed=None):
        self.step = step
        self.value = value
        self.budget = budget
        self.seed = seed
        super().__init__(
            f"sup_n(|x(n)|+|y(n)|) = {value:.6g} exceeded budget {budget:.6g} at step {step}"
            + ("" if seed is None else f" (seed {seed})")
        )


class QueryError(TTSAError, ValueError):
    """A time query falls outside the range covered by a record."""


class BlowUpError(TTSAError):
    """An ODE integration produced a non-finite state."""


class ResolutionError(TTSAError):
    """A discretized problem is infeasible at the requested resolution."""


class UnsupportedError(TTSAError):
    """The operation is not available for this problem shape."""


class UsageError(TTSAError, ValueError):
    """Unknown names or invalid combinations of options."""


class ConfigError(TTSAError):
    """Invalid experiment configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__((", ".join(where) + ": " if where else "") + message)


class ReportError(TTSAError):
    """An artifact directory is missing or has a corrupt manifest."""
