"""Exception hierarchy shared by the engine, simulator and trace tools."""


class RcaError(Exception):
    """Base class for every error raised by tailrca."""


class EmptyStream(RcaError):
    pass


class GapTooLarge(RcaError):
    """A collector stopped delivering samples for longer than ``max_gap``."""


class InsufficientBaseline(RcaError):
    """Not enough history to estimate a baseline; detection must be deferred."""


class WindowOutOfRange(RcaError):
    pass


class DegenerateSeries(RcaError):
    """Series is constant inside the window, so correlation is undefined."""


class NoOnset(RcaError):
    pass


class InvalidScenario(RcaError):
    pass


class WriteOrderError(RcaError):
    pass


class MalformedRecord(RcaError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class OrderViolation(RcaError):
    pass
