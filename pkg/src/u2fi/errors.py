"""Exception hierarchy shared by every layer of the simulator."""


class U2FiError(Exception):
    """Base class; ``code`` is the stable name used in logs and on the wire."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- u2f_core ---------------------------------------------------------------
class InvalidOrigin(U2FiError):
    pass


class BadKeyHandle(U2FiError):
    pass


class OriginMismatch(U2FiError):
    pass


class MalformedResponse(U2FiError):
    pass


class BadSignature(U2FiError):
    pass


class PresenceAbsent(U2FiError):
    pass


# -- token ------------------------------------------------------------------
class TokenAbsent(U2FiError):
    pass


class PresenceRequired(U2FiError):
    pass


class StateCorrupt(U2FiError):
    pass


class CounterExhausted(U2FiError):
    pass


# -- side channel -----------------------------------------------------------
class PayloadTooLarge(U2FiError):
    pass


class DecodeError(U2FiError):
    pass


class NoPreamble(DecodeError):
    pass


class MissingSymbols(DecodeError):
    pass


class ChecksumMismatch(DecodeError):
    pass


# -- gateway ----------------------------------------------------------------
class WindowAlreadyOpen(U2FiError):
    pass


class WindowClosed(U2FiError):
    pass


class NonceMismatch(U2FiError):
    pass


class CeremonyAborted(U2FiError):
    pass


class GatewayBusy(U2FiError):
    pass


# -- cloud ------------------------------------------------------------------
class NoSuchBinding(U2FiError):
    pass


class NoSuchDevice(U2FiError):
    pass


class ChallengeExpired(U2FiError):
    pass


class UnknownChallenge(U2FiError):
    pass


class CounterRegression(U2FiError):
    pass


class DeviceRevoked(U2FiError):
    pass


class BindingNotAuthorized(U2FiError):
    pass


# -- device -----------------------------------------------------------------
class CommandRejected(U2FiError):
    pass


_BY_NAME = {
    cls.__name__: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, U2FiError)
}


def error_from_code(code: str, message: str = "") -> U2FiError:
    """Rebuild an exception from the name carried in a broker message."""
    return _BY_NAME.get(code, U2FiError)(message or code)
