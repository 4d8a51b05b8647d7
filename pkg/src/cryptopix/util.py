"""Small shared helpers: big-integer ops, rounding, border indexing.

gmpy2 is used when available because modular exponentiation dominates the
cost of every homomorphic operation; the pure Python fallback keeps the
package dependency-free but several times slower.
"""

from __future__ import annotations

import math
import struct
from fractions import Fraction

try:
    import gmpy2

    HAVE_GMP = True
except ImportError:
    HAVE_GMP = False


if HAVE_GMP:

    def powmod(base: int, exponent: int, modulus: int) -> int:
        return int(gmpy2.powmod(base, exponent, modulus))

    def invert(value: int, modulus: int) -> int:
        try:
            return int(gmpy2.invert(value, modulus))
        except ZeroDivisionError:
            raise ValueError("value is not invertible modulo the given modulus")

else:

    def powmod(base: int, exponent: int, modulus: int) -> int:
        return pow(base, exponent, modulus)

    def invert(value: int, modulus: int) -> int:
        try:
            return pow(value, -1, modulus)
        except ValueError:
            raise ValueError("value is not invertible modulo the given modulus")


def round_half_away(value) -> int:
    """Round to the nearest integer, ties away from zero.

    Accepts floats and Fractions; exact for Fractions.
    """
    frac = Fraction(value)
    floor = frac.numerator // frac.denominator
    remainder = frac - floor
    if remainder > Fraction(1, 2):
        return floor + 1
    if remainder < Fraction(1, 2):
        return floor
    # tie: away from zero
    return floor + 1 if frac >= 0 else floor


def reflect_index(index: int, size: int) -> int:
    """Mirror an out-of-range index back into [0, size).

    The border pixel itself is not repeated: for size 4 the sequence
    ``-2 -1 0 1 2 3 4 5`` maps to ``2 1 0 1 2 3 2 1``.
    """
    if size <= 0:
        raise ValueError("size must be positive")
    if size == 1:
        return 0
    period = 2 * (size - 1)
    index %= period
    if index < 0:
        index += period
    if index >= size:
        index = period - index
    return index


def exponent_for_precision(precision: float, base: int) -> int:
    """Largest exponent e with base**e <= precision (e is <= 0 in practice)."""
    if precision <= 0:
        raise ValueError("precision must be positive")
    if base < 2:
        raise ValueError("base must be at least 2")
    exponent = math.floor(math.log(precision, base))
    # floating point log can land one off near exact powers; fix up exactly
    while Fraction(base) ** exponent > Fraction(precision):
        exponent -= 1
    while Fraction(base) ** (exponent + 1) <= Fraction(precision):
        exponent += 1
    return exponent


# ---------------------------------------------------------------------------
# byte-level helpers for the serialization formats
# ---------------------------------------------------------------------------


def int_to_bytes(value: int, width: int | None = None) -> bytes:
    """Big-endian bytes of a non-negative integer.

    With ``width`` the result is zero-padded to exactly that many bytes.
    """
    if value < 0:
        raise ValueError("only non-negative integers are serialized")
    length = max(1, (value.bit_length() + 7) // 8)
    if width is not None:
        if length > width:
            raise ValueError("integer does not fit the requested width")
        length = width
    return value.to_bytes(length, "big")


def int_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


def pack_bigint(value: int) -> bytes:
    raw = int_to_bytes(value)
    return struct.pack(">I", len(raw)) + raw


def unpack_bigint(data: bytes, offset: int) -> tuple[int, int]:
    """Read a length-prefixed big integer; returns (value, next_offset)."""
    if offset + 4 > len(data):
        raise ValueError("truncated big integer length")
    (length,) = struct.unpack_from(">I", data, offset)
    offset += 4
    if offset + length > len(data):
        raise ValueError("truncated big integer body")
    return int_from_bytes(data[offset : offset + length]), offset + length
