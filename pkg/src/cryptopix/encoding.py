"""Fixed-base mantissa/exponent encoding of signed reals over Paillier.

A real x is represented as mantissa * base**exponent with an integer
mantissa.  The mantissa lives in the plaintext ring Z_n: non-negative
values occupy [0, n/3], negative values are folded to [n - n/3, n), and
the untouched middle third acts as an overflow trap that decode refuses
to interpret.

Addition of two encrypted numbers first brings both to the smaller of the
two exponents (multiplying the coarser mantissa by a power of the base,
which is exact), then multiplies the ciphertexts.  Multiplying an
encrypted number by an encoded plaintext multiplies mantissas and adds
exponents.  Exponents only ever decrease, mirroring how precision is
fixed at encryption time.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass
from fractions import Fraction

from . import paillier
from .errors import (
    AlignmentError,
    EncodingOverflowError,
    FormatError,
    KeyMismatchError,
    OverflowDetectedError,
)
from .paillier import PrivateKey, PublicKey, RawCiphertext
from .util import exponent_for_precision, int_to_bytes, round_half_away

DEFAULT_BASE = 16
DEFAULT_PRECISION = 1e-8


@dataclass(frozen=True, slots=True)
class Precision:
    """A target absolute precision and the exponent that realizes it."""

    value: float
    base: int
    exponent: int

    @classmethod
    def of(cls, value: float, base: int = DEFAULT_BASE) -> "Precision":
        if value <= 0:
            raise ValueError("precision must be positive")
        if base < 2:
            raise ValueError("base must be at least 2")
        return cls(value, base, exponent_for_precision(value, base))


def working_exponent(precision=None, base: int = DEFAULT_BASE) -> int:
    """The encoding exponent for a target precision (default 1e-8)."""
    if precision is None:
        precision = DEFAULT_PRECISION
    if isinstance(precision, Precision):
        if precision.base != base:
            raise ValueError("precision was derived for a different base")
        return precision.exponent
    return exponent_for_precision(float(precision), base)


def _resolve_exponent(value, precision, base, exponent):
    if exponent is not None:
        return int(exponent)
    if precision is None and isinstance(value, int):
        return 0
    return working_exponent(precision, base)


@dataclass(frozen=True, slots=True)
class EncodedNumber:
    """A plaintext mantissa/exponent pair tied to a public key."""

    public_key: PublicKey
    mantissa: int
    exponent: int
    base: int

    def __post_init__(self):
        if self.base < 2:
            raise ValueError("base must be at least 2")
        if self.exponent > 0:
            raise ValueError("exponent must be zero or negative")
        if not 0 <= self.mantissa < self.public_key.n:
            raise ValueError("mantissa must be folded into [0, n)")

    def signed_mantissa(self) -> int:
        n = self.public_key.n
        max_int = self.public_key.max_int
        if self.mantissa <= max_int:
            return self.mantissa
        if self.mantissa >= n - max_int:
            return self.mantissa - n
        raise OverflowDetectedError(
            "mantissa fell into the overflow region; the computed value "
            "exceeded the representable range"
        )

    def decode_exact(self) -> Fraction:
        return self.signed_mantissa() * Fraction(self.base) ** self.exponent

    def decode(self) -> float:
        return float(self.decode_exact())


def encode(
    public_key: PublicKey,
    value,
    precision=None,
    *,
    base: int = DEFAULT_BASE,
    exponent: int | None = None,
) -> EncodedNumber:
    """Encode an int, float, or Fraction for this key.

    The exponent is taken explicitly, or derived from ``precision``
    (a float or a :class:`Precision`), or defaults to 0 for ints and to
    ``DEFAULT_PRECISION`` for everything else.
    """
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError("cannot encode a non-finite value")
    chosen = _resolve_exponent(value, precision, base, exponent)
    if chosen > 0:
        raise ValueError("exponent must be zero or negative")
    mantissa = round_half_away(Fraction(value) * Fraction(base) ** -chosen)
    if abs(mantissa) > public_key.max_int:
        raise EncodingOverflowError(
            f"value {value!r} needs a mantissa of {abs(mantissa).bit_length()} bits, "
            f"more than this key can represent"
        )
    return EncodedNumber(public_key, mantissa % public_key.n, chosen, base)


def decode(encoded: EncodedNumber) -> float:
    return encoded.decode()


@dataclass(frozen=True, slots=True)
class EncryptedNumber:
    """An encrypted mantissa plus its public exponent and base."""

    public_key: PublicKey
    ciphertext: RawCiphertext
    exponent: int
    base: int

    @property
    def key_fingerprint(self) -> bytes:
        return self.ciphertext.fingerprint

    def align(self, target_exponent: int) -> "EncryptedNumber":
        """Rescale to a smaller exponent without changing the value."""
        if target_exponent > self.exponent:
            raise AlignmentError("cannot raise an exponent, only lower it")
        if target_exponent == self.exponent:
            return self
        factor = pow(self.base, self.exponent - target_exponent, self.public_key.n)
        ciphertext = paillier.scalar_mul(self.public_key, self.ciphertext, factor)
        return EncryptedNumber(self.public_key, ciphertext, target_exponent, self.base)

    def __add__(self, other):
        if not isinstance(other, EncryptedNumber):
            return NotImplemented
        if self.base != other.base:
            raise ValueError("cannot add numbers encoded in different bases")
        target = min(self.exponent, other.exponent)
        a = self.align(target)
        b = other.align(target)
        ciphertext = paillier.add_cipher(self.public_key, a.ciphertext, b.ciphertext)
        return EncryptedNumber(self.public_key, ciphertext, target, self.base)

    def __mul__(self, other):
        if isinstance(other, EncryptedNumber):
            raise TypeError("two encrypted numbers cannot be multiplied")
        if not isinstance(other, EncodedNumber):
            other = encode(self.public_key, other)
        if self.base != other.base:
            raise ValueError("cannot mix bases in one multiplication")
        ciphertext = paillier.scalar_mul(self.public_key, self.ciphertext, other.mantissa)
        return EncryptedNumber(
            self.public_key, ciphertext, self.exponent + other.exponent, self.base
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        if not isinstance(other, EncryptedNumber):
            return NotImplemented
        return self + (-other)


def encrypt_encoded(
    public_key: PublicKey, encoded: EncodedNumber, rng: random.Random | None = None
) -> EncryptedNumber:
    if encoded.public_key != public_key:
        raise KeyMismatchError("encoded number belongs to a different key")
    ciphertext = paillier.encrypt_raw(public_key, encoded.mantissa, rng)
    return EncryptedNumber(public_key, ciphertext, encoded.exponent, encoded.base)


def encrypt_value(
    public_key: PublicKey,
    value,
    precision=None,
    *,
    base: int = DEFAULT_BASE,
    exponent: int | None = None,
    rng: random.Random | None = None,
) -> EncryptedNumber:
    return encrypt_encoded(
        public_key, encode(public_key, value, precision, base=base, exponent=exponent), rng
    )


def decrypt_encoded(private_key: PrivateKey, number: EncryptedNumber) -> EncodedNumber:
    mantissa = paillier.decrypt_raw(private_key, number.ciphertext)
    return EncodedNumber(private_key.public_key, mantissa, number.exponent, number.base)


def decrypt_value(private_key: PrivateKey, number: EncryptedNumber) -> float:
    return decrypt_encoded(private_key, number).decode()


def decrypt_exact(private_key: PrivateKey, number: EncryptedNumber) -> Fraction:
    return decrypt_encoded(private_key, number).decode_exact()


# ---------------------------------------------------------------------------
# serialization: one number record, and a block of numbers
# ---------------------------------------------------------------------------
#
# number record   : i32 exponent | u32 length | ciphertext bytes
# number block    : 16-byte key fingerprint | u16 base | u32 count | records
#
# Ciphertext bytes are written big-endian at the key's fixed width
# (2 * key_bits / 8), so every record of a given key has the same size.


def serialize_number(number: EncryptedNumber) -> bytes:
    width = number.public_key.ciphertext_bytes
    return struct.pack(">iI", number.exponent, width) + int_to_bytes(
        number.ciphertext.value, width
    )


def deserialize_number(
    public_key: PublicKey, data: bytes, offset: int, base: int
) -> tuple[EncryptedNumber, int]:
    if offset + 8 > len(data):
        raise FormatError("truncated number record header")
    exponent, length = struct.unpack_from(">iI", data, offset)
    offset += 8
    if offset + length > len(data):
        raise FormatError("truncated number record body")
    value = int.from_bytes(data[offset : offset + length], "big")
    if not 0 < value < public_key.n_squared:
        raise FormatError("ciphertext value outside the valid range")
    ciphertext = RawCiphertext(value, public_key.fingerprint)
    return EncryptedNumber(public_key, ciphertext, exponent, base), offset + length


def serialize_numbers(numbers) -> bytes:
    numbers = list(numbers)
    if not numbers:
        raise ValueError("cannot serialize an empty number block")
    first = numbers[0]
    for number in numbers:
        if number.key_fingerprint != first.key_fingerprint:
            raise KeyMismatchError("numbers in one block must share a key")
        if number.base != first.base:
            raise ValueError("numbers in one block must share a base")
    parts = [first.key_fingerprint, struct.pack(">HI", first.base, len(numbers))]
    parts.extend(serialize_number(number) for number in numbers)
    return b"".join(parts)


def deserialize_numbers(public_key: PublicKey, data: bytes) -> list[EncryptedNumber]:
    head = paillier.FINGERPRINT_BYTES
    if len(data) < head + 6:
        raise FormatError("truncated number block header")
    fingerprint = data[:head]
    if fingerprint != public_key.fingerprint:
        raise KeyMismatchError("number block belongs to a different key")
    base, count = struct.unpack_from(">HI", data, head)
    if base < 2:
        raise FormatError("invalid base in number block")
    offset = head + 6
    numbers = []
    for _ in range(count):
        number, offset = deserialize_number(public_key, data, offset, base)
        numbers.append(number)
    if offset != len(data):
        raise FormatError("trailing bytes after number block")
    return numbers
