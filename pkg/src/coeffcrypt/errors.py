"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` so the CLI can report
failures without parsing messages.
"""


class CoeffCryptError(Exception):
    kind = "error"


class ContractError(CoeffCryptError, ValueError):
    """A precondition on the inputs of an operation was violated."""

    kind = "contract"


class RangeError(ContractError):
    kind = "range"


class FormatError(CoeffCryptError, ValueError):
    """Malformed coefficient data or bit strings."""

    kind = "format"


class ParseError(FormatError):
    kind = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    kind = "unsupported"


class EncodingError(CoeffCryptError):
    kind = "encoding"


class KeyMismatchError(CoeffCryptError):
    """Keys do not structurally correspond to the ciphertext they are applied to."""

    kind = "key-mismatch"


class TamperError(CoeffCryptError):
    """Authentication of wrapped or tagged key material failed."""

    kind = "tamper"


class AuthorizationError(CoeffCryptError):
    kind = "authorization"


class NotFoundError(CoeffCryptError, KeyError):
    kind = "not-found"

    def __str__(self):
        return Exception.__str__(self)


class DuplicateError(CoeffCryptError):
    kind = "duplicate"
