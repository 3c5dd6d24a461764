"""Exception hierarchy shared by every pungan module."""


class PunGanError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(PunGanError, ValueError):
    """Operand dimensions are inconsistent."""


class InvalidArgument(PunGanError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(PunGanError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DuplicateError(ParseError):
    """A (lemma, sense) row appears twice in an inventory file."""


class ValidationError(PunGanError, ValueError):
    """A corpus record does not satisfy the inventory or its own invariants."""


class UnknownLemmaError(PunGanError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown lemma"


class PrerequisiteError(PunGanError):
    """A required artifact (checkpoint, prepared dataset) is missing."""


class UndefinedMetric(PunGanError, ValueError):
    """The requested metric has no defined value on this input."""
