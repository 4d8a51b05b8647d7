"""Exception types shared across the package."""


class CryptoPixError(Exception):
    """Base class for errors raised by this package."""


class KeyMismatchError(CryptoPixError):
    """Ciphertexts produced under different keys were combined."""


class MalformedCiphertextError(CryptoPixError):
    """A ciphertext value is outside the valid group."""


class EncodingOverflowError(CryptoPixError):
    """A value is too large in magnitude to encode under this key."""


class OverflowDetectedError(CryptoPixError):
    """A decoded mantissa landed in the forbidden middle of the ring.

    This means some homomorphic computation exceeded the representable
    range, so the decrypted result cannot be trusted.
    """


class AlignmentError(CryptoPixError):
    """An encrypted number cannot be brought to the requested exponent."""


class FormatError(CryptoPixError):
    """Serialized bytes do not match the expected layout."""


class ProtocolError(CryptoPixError):
    """A transport request or response is invalid.

    ``status`` carries the numeric status code when one applies.
    """

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status
