"""Exception hierarchy shared by every dnslab module."""


class DnsLabError(Exception):
    """Base class for all dnslab errors."""


# codec
class PayloadTooLarge(DnsLabError):
    pass


class InvalidLldSize(DnsLabError):
    pass


class IncompleteSession(DnsLabError):
    pass


class CorruptChunk(DnsLabError):
    pass


class IntegrityFailure(DnsLabError):
    pass


class LabelOverflow(DnsLabError):
    pass


class MalformedHeader(DnsLabError):
    pass


# wire
class InvalidName(DnsLabError):
    pass


class NameTooLong(InvalidName):
    pass


class TruncatedMessage(DnsLabError):
    pass


class BadLabelLength(DnsLabError):
    pass


class UnsupportedType(DnsLabError):
    """Raised for a well-formed message with a QTYPE outside the modeled set.

    ``query_id`` and ``qname`` are kept so the server can log the noise.
    """

    def __init__(self, message, query_id=None, qname=None, qtype=None):
        super().__init__(message)
        self.query_id = query_id
        self.qname = qname
        self.qtype = qtype


# channels
class UnknownSeq(DnsLabError):
    pass


class DeliveryFailed(DnsLabError):
    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


class EmptyBitstring(DnsLabError):
    pass


class ConfigError(DnsLabError):
    pass


class TraceTooShort(DnsLabError):
    pass


class AmbiguousGap(UserWarning):
    """A timing gap sat more than one delta away from both nominal levels."""
