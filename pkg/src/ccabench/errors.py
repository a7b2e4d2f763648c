"""Exception hierarchy shared by every module."""


class CcaError(Exception):
    """Base class for all toolkit errors."""


# world
class AccessFault(CcaError):
    def __init__(self, requester, pas, page=None):
        self.requester = requester
        self.pas = pas
        self.page = page
        where = f" page {page}" if page is not None else ""
        super().__init__(f"{requester.name} may not access {pas.name}{where}")


class UnknownPage(CcaError):
    pass


class InvalidTransition(CcaError):
    pass


# realm
class RealmSealed(CcaError):
    pass


class NotActive(CcaError):
    pass


class LimitExceeded(CcaError):
    pass


# protocol
class UnknownImage(CcaError):
    pass


class OutOfPages(CcaError):
    pass


class SessionRequired(CcaError):
    pass


class NotReady(CcaError):
    pass


class Expired(CcaError):
    pass


class ProtocolError(CcaError):
    pass


class AttestationRejected(CcaError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"attestation rejected: {reason.value}")


# trace / report
class ParseError(CcaError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class UnbalancedMarkers(CcaError):
    pass


class OverlappingStages(CcaError):
    pass


class EmptyInput(CcaError):
    pass


class StageMismatch(CcaError):
    pass


class OverheadUndefined(CcaError, ZeroDivisionError):
    """Raised when a baseline mean is zero."""


# cli / config
class SchemaError(CcaError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
