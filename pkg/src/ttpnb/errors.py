"""Exception hierarchy.

Every error raised by the package derives from :class:`TtpnbError`. The three
families map onto CLI exit codes: :class:`DataError` exits 2, while
:class:`ProtocolError`, :class:`EnvelopeError` and :class:`TransportError`
exit 3.
"""


class TtpnbError(Exception):
    pass


# -- data / fitting -------------------------------------------------------

class DataError(TtpnbError):
    pass


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooManySites(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class InvalidVariance(DataError):
    pass


class InsufficientClassData(DataError):
    pass


class InconsistentCounts(DataError):
    pass


class MissingCell(DataError):
    pass


class MissingAttribute(DataError):
    pass


class DegenerateColumn(UserWarning):
    """Warning: ratio-mode noise on a constant column resolves to zero variance."""


# -- envelopes ------------------------------------------------------------

class EnvelopeError(TtpnbError):
    pass


class WeakParameters(EnvelopeError):
    pass


class KeyMismatch(EnvelopeError):
    pass


class IntegrityError(EnvelopeError):
    pass


class SignatureError(EnvelopeError):
    pass


# -- protocol -------------------------------------------------------------

class ProtocolError(TtpnbError):
    """Base for session failures. ``trace`` is filled in by the session driver."""

    def __init__(self, message: str = "", trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ProtocolViolation(ProtocolError):
    pass


class ConsistencyError(ProtocolError):
    pass


class Timeout(ProtocolError):
    pass


class FitError(ProtocolError):
    pass


class EnvelopeRejected(ProtocolError):
    """The coordinator could not open or verify a site's envelope."""


class SessionAborted(ProtocolError):
    """A peer aborted the session; ``reason`` carries its stated reason."""


# -- transport ------------------------------------------------------------

class TransportError(TtpnbError):
    pass


class Unreachable(TransportError):
    pass


class FrameTooLarge(TransportError):
    pass


class FramingError(TransportError):
    pass


class BindError(TransportError):
    pass


class ConnectError(TransportError):
    pass
