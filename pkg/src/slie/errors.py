"""Exception hierarchy shared by every SLIE layer.

Each error carries a stable ``code`` (the class name) used in the HTTP error
envelope, and an ``exit_code`` used by the CLI.
"""
from __future__ import annotations

import datetime as _dt

EXIT_USAGE = 1
EXIT_CRYPTO = 2
EXIT_EXPIRED = 3


class SlieError(Exception):
    exit_code = EXIT_USAGE
    http_status = 400

    @property
    def code(self) -> str:
        return type(self).__name__

    @property
    def message(self) -> str:
        return str(self) or self.code


# pattern algebra
class TooManyComponents(SlieError):
    pass


class EmptyComponent(SlieError):
    pass


class InvalidEpoch(SlieError):
    pass


class InvalidRange(SlieError):
    pass


class LayoutMismatch(SlieError):
    exit_code = EXIT_CRYPTO


class InvalidPattern(SlieError):
    pass


# pairing backend
class EmptyDomainTag(SlieError):
    pass


class InvalidPoint(SlieError):
    exit_code = EXIT_CRYPTO


class RngFailure(SlieError):
    exit_code = EXIT_CRYPTO
    http_status = 500


# scheme
class ExpiryInPast(SlieError):
    pass


class NotAnExtension(SlieError):
    """Raised on an attempted delegation to a pattern that is not an extension."""

    exit_code = EXIT_CRYPTO
    http_status = 403


class ExpiryExceedsParent(SlieError):
    pass


class PatternMismatch(SlieError):
    exit_code = EXIT_CRYPTO


class MalformedEncoding(SlieError):
    exit_code = EXIT_CRYPTO


# hybrid envelope
class PayloadTooLarge(SlieError):
    http_status = 413


class AuthenticationFailure(SlieError):
    exit_code = EXIT_CRYPTO


class MalformedCiphertext(SlieError):
    exit_code = EXIT_CRYPTO


class EmptyContext(SlieError):
    pass


# lifecycle
class UnknownRole(SlieError):
    pass


class NotEligible(SlieError):
    http_status = 403


class NewExpiryNotLater(SlieError):
    http_status = 409


class KeyExpired(SlieError):
    exit_code = EXIT_EXPIRED
    http_status = 403

    def __init__(self, expiry: int, now: int):
        when = _dt.datetime.fromtimestamp(expiry, _dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        super().__init__(f"key expired at {when} (expiry={expiry}, now={now})")
        self.expiry = expiry
        self.now = now


class StoreUnavailable(SlieError):
    http_status = 503


# authority
class Unauthorized(SlieError):
    http_status = 401


class NotFound(SlieError):
    http_status = 404


class NotInitialized(SlieError):
    http_status = 503


# bench
class UnsupportedSize(SlieError):
    pass


class BaselineUnavailable(SlieError):
    pass


class InsufficientData(SlieError):
    pass
