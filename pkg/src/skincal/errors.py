"""Exception hierarchy shared by all skincal modules."""


class SkincalError(Exception):
    """Base class for every domain error raised by skincal."""


# geometry
class DegenerateLayout(SkincalError):
    pass


class OutOfDomain(SkincalError):
    pass


# acquisition and fitting
class SourceStalled(SkincalError):
    pass


class PressureNotReached(SkincalError):
    pass


class EmptyLog(SkincalError):
    pass


class InsufficientLevels(SkincalError):
    def __init__(self, message, taxels=()):
        super().__init__(message)
        self.taxels = tuple(taxels)


class SingularSystem(SkincalError):
    pass


# force reconstruction
class GeometryMismatch(SkincalError):
    pass


class ZeroTruth(SkincalError):
    pass


# wire formats
class ModuleIdRange(SkincalError):
    pass


class SeqMismatch(SkincalError):
    pass


class IndexOrder(SkincalError):
    pass


class IdMismatch(SkincalError):
    pass


class RangeExceeded(SkincalError):
    pass


class Malformed(SkincalError):
    pass


class ParseError(SkincalError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
