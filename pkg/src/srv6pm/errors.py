"""Exception hierarchy shared by every layer of the package."""


class Srv6PmError(Exception):
    """Base class for all errors raised by srv6pm."""


# packet model

class InvalidSidList(Srv6PmError, ValueError):
    pass


class LengthError(Srv6PmError, ValueError):
    pass


class ReservedNonZero(Srv6PmError, ValueError):
    pass


class UnknownFlags(Srv6PmError, ValueError):
    pass


class NoSegmentsLeft(Srv6PmError):
    pass


class PortsEqual(Srv6PmError, ValueError):
    pass


class MalformedPacket(Srv6PmError, ValueError):
    pass


# counting engine

class AlreadyMonitored(Srv6PmError):
    pass


class NotMonitored(Srv6PmError, LookupError):
    pass


class EpochSkew(Srv6PmError):
    pass


# dataplane agents

class SessionStopped(Srv6PmError):
    pass


class UnknownSession(Srv6PmError, LookupError):
    pass


class UnmatchedSeq(Srv6PmError, LookupError):
    pass


# control plane

class NotFound(Srv6PmError, LookupError):
    pass


class AlreadyExists(Srv6PmError):
    pass


class AlreadyRunning(Srv6PmError):
    pass


class NotRunning(Srv6PmError):
    pass


class InvalidOptions(Srv6PmError, ValueError):
    pass


class StaleSample(Srv6PmError):
    """A cumulative sample older than (or equal to) the last one of its color."""


# simulator

class ParseError(Srv6PmError):
    pass


class ValidationError(Srv6PmError, ValueError):
    pass


class EpochNotQuiesced(Srv6PmError):
    pass


# collection / cli

class FormatError(Srv6PmError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
