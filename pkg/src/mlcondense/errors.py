"""Exception hierarchy. Each CLI-facing error carries the process exit code."""


class CondenseError(Exception):
    exit_code = 1


class ConfigError(CondenseError, ValueError):
    exit_code = 2


class DataError(CondenseError, ValueError):
    exit_code = 3


class DivergenceError(CondenseError, FloatingPointError):
    exit_code = 4


class ScaleError(CondenseError):
    exit_code = 5


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input outside the domain of a primitive (e.g. log of a non-positive value)."""


class TapeStateError(RuntimeError):
    """The recorded graph was already consumed by a previous backward pass."""


class ContractError(RuntimeError):
    """A caller broke an API contract, such as detaching an inner gradient."""
