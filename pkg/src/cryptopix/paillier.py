"""Paillier cryptosystem on plain Python integers.

The scheme is the textbook one with the common simplification g = n + 1,
which turns g**m mod n**2 into (1 + m*n) mod n**2 and removes one modular
exponentiation from encryption.  Decryption runs on the CRT form with the
factors p and q, which is roughly four times faster than working mod n**2.

Ciphertexts are additively homomorphic:

* multiplying two ciphertexts adds their plaintexts mod n
* raising a ciphertext to an integer multiplies its plaintext mod n

Only non-negative residues in [0, n) live at this layer.  Signed and
fractional values are handled by :mod:`cryptopix.encoding` on top of it.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass
from typing import NamedTuple

from .errors import FormatError, KeyMismatchError, MalformedCiphertextError
from .util import int_to_bytes, invert, pack_bigint, powmod, unpack_bigint

SUPPORTED_KEY_BITS = (256, 512, 1024, 2048, 3072)

MILLER_RABIN_ROUNDS = 64

FINGERPRINT_BYTES = 16

PUBLIC_KEY_MAGIC = b"CPXK"
PRIVATE_KEY_MAGIC = b"CPXS"
KEY_FORMAT_VERSION = 1

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]
for _candidate in range(49, 2000, 2):
    for _p in _SMALL_PRIMES[1:]:
        if _p * _p > _candidate:
            _SMALL_PRIMES.append(_candidate)
            break
        if _candidate % _p == 0:
            break


class PublicKey:
    """Paillier public key; all derived constants are precomputed."""

    def __init__(self, n: int):
        if n <= 3:
            raise ValueError("modulus too small")
        self.n = n
        self.n_squared = n * n
        self.g = n + 1
        self.bits = n.bit_length()
        # one third of the plaintext ring holds non-negative values,
        # the top third holds negatives; the middle detects overflow
        self.max_int = n // 3
        self.fingerprint = key_fingerprint(n)
        self.ciphertext_bytes = (2 * self.bits + 7) // 8

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(("PublicKey", self.n))

    def __repr__(self):
        return f"PublicKey(bits={self.bits})"


class PrivateKey:
    """Factorization of n plus the CRT constants used for decryption."""

    def __init__(self, p: int, q: int, public_key: PublicKey | None = None):
        if p == q:
            raise ValueError("p and q must differ")
        if p > q:
            p, q = q, p
        n = p * q
        if public_key is None:
            public_key = PublicKey(n)
        elif public_key.n != n:
            raise ValueError("public key does not match the factors")
        self.p = p
        self.q = q
        self.public_key = public_key
        self.p_squared = p * p
        self.q_squared = q * q
        self.p_inverse_mod_q = invert(p, q)
        self.hp = invert(_l_function(powmod(public_key.g, p - 1, self.p_squared), p), p)
        self.hq = invert(_l_function(powmod(public_key.g, q - 1, self.q_squared), q), q)

    def __eq__(self, other):
        return isinstance(other, PrivateKey) and (self.p, self.q) == (other.p, other.q)

    def __hash__(self):
        return hash(("PrivateKey", self.p, self.q))

    def __repr__(self):
        return f"PrivateKey(bits={self.public_key.bits})"


class KeyPair(NamedTuple):
    public: PublicKey
    private: PrivateKey


@dataclass(frozen=True, slots=True)
class RawCiphertext:
    """An element of Z*_{n**2} plus the fingerprint of the key it belongs to."""

    value: int
    fingerprint: bytes


def key_fingerprint(n: int) -> bytes:
    """First 16 bytes of SHA-256 over the big-endian bytes of n."""
    return hashlib.sha256(int_to_bytes(n)).digest()[:FINGERPRINT_BYTES]


def _l_function(x: int, d: int) -> int:
    return (x - 1) // d


def is_probable_prime(candidate: int, rng: random.Random | None = None, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    """Miller-Rabin with random bases; composites survive with probability <= 4**-rounds."""
    if candidate < 2:
        return False
    for small in _SMALL_PRIMES:
        if candidate == small:
            return True
        if candidate % small == 0:
            return False
    if rng is None:
        rng = random.SystemRandom()
    d = candidate - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        base = rng.randrange(2, candidate - 1)
        x = powmod(base, d, candidate)
        if x == 1 or x == candidate - 1:
            continue
        for _ in range(r - 1):
            x = (x * x) % candidate
            if x == candidate - 1:
                break
        else:
            return False
    return True


def _generate_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits)
        # top two bits set so the product of two primes has full length
        candidate |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if is_probable_prime(candidate, rng):
            return candidate


def generate_keypair(bits: int, rng: random.Random | None = None) -> KeyPair:
    """Generate a fresh key pair with an exactly ``bits``-long modulus.

    ``rng`` defaults to the system CSPRNG; pass a seeded ``random.Random``
    only to make tests reproducible.
    """
    if bits not in SUPPORTED_KEY_BITS:
        raise ValueError(f"unsupported key size {bits}; choose one of {SUPPORTED_KEY_BITS}")
    if rng is None:
        rng = random.SystemRandom()
    half = bits // 2
    while True:
        p = _generate_prime(half, rng)
        q = _generate_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == bits:
            break
    public = PublicKey(n)
    return KeyPair(public, PrivateKey(p, q, public))


def encrypt_raw(
    public_key: PublicKey,
    plaintext: int,
    rng: random.Random | None = None,
    blinding: int | None = None,
) -> RawCiphertext:
    """Encrypt a residue in [0, n) under fresh randomness.

    ``blinding`` fixes the random unit r; it exists for tests that need a
    ciphertext with known randomness and must be coprime to n.
    """
    n = public_key.n
    if not 0 <= plaintext < n:
        raise ValueError("plaintext must lie in [0, n)")
    n_squared = public_key.n_squared
    if blinding is None:
        if rng is None:
            rng = random.SystemRandom()
        while True:
            blinding = rng.randrange(1, n)
            if math.gcd(blinding, n) == 1:
                break
    elif not 0 < blinding < n or math.gcd(blinding, n) != 1:
        raise ValueError("blinding must be a unit in [1, n)")
    # g = n + 1 makes g**m collapse to 1 + m*n mod n**2
    value = ((1 + plaintext * n) % n_squared) * powmod(blinding, n, n_squared) % n_squared
    return RawCiphertext(value, public_key.fingerprint)


def _check_fingerprint(public_key: PublicKey, ciphertext: RawCiphertext):
    if ciphertext.fingerprint != public_key.fingerprint:
        raise KeyMismatchError("ciphertext was produced under a different key")


def decrypt_raw(private_key: PrivateKey, ciphertext: RawCiphertext) -> int:
    """Recover the residue in [0, n); CRT path using both prime factors."""
    public = private_key.public_key
    if ciphertext.fingerprint != public.fingerprint:
        raise KeyMismatchError("ciphertext does not match this private key")
    value = ciphertext.value
    if not 0 < value < public.n_squared or math.gcd(value, public.n) != 1:
        raise MalformedCiphertextError("ciphertext is outside the multiplicative group")
    p, q = private_key.p, private_key.q
    mp = _l_function(powmod(value, p - 1, private_key.p_squared), p) * private_key.hp % p
    mq = _l_function(powmod(value, q - 1, private_key.q_squared), q) * private_key.hq % q
    return mp + p * ((mq - mp) * private_key.p_inverse_mod_q % q)


def add_cipher(public_key: PublicKey, a: RawCiphertext, b: RawCiphertext) -> RawCiphertext:
    """Homomorphic addition: the result decrypts to (m_a + m_b) mod n."""
    _check_fingerprint(public_key, a)
    _check_fingerprint(public_key, b)
    return RawCiphertext(a.value * b.value % public_key.n_squared, public_key.fingerprint)


def scalar_mul(public_key: PublicKey, a: RawCiphertext, d: int) -> RawCiphertext:
    """Homomorphic scaling: the result decrypts to (m_a * d) mod n.

    A scalar in the negative fold (d >= n - max_int, representing -(n-d))
    is applied as invert(a)**(n-d): the exponent shrinks from ~n to the
    small magnitude n-d, which is what keeps negative kernel weights as
    cheap as positive ones.  The two forms decrypt identically.
    """
    _check_fingerprint(public_key, a)
    if not 0 <= d < public_key.n:
        raise ValueError("scalar must lie in [0, n)")
    n_squared = public_key.n_squared
    if d >= public_key.n - public_key.max_int:
        inverse = invert(a.value, n_squared)
        value = powmod(inverse, public_key.n - d, n_squared)
    else:
        value = powmod(a.value, d, n_squared)
    return RawCiphertext(value, public_key.fingerprint)


# ---------------------------------------------------------------------------
# key serialization
# ---------------------------------------------------------------------------


def public_key_to_bytes(public_key: PublicKey) -> bytes:
    return (
        PUBLIC_KEY_MAGIC
        + struct.pack(">BI", KEY_FORMAT_VERSION, public_key.bits)
        + pack_bigint(public_key.n)
    )


def public_key_from_bytes(data: bytes) -> PublicKey:
    if len(data) < 9 or data[:4] != PUBLIC_KEY_MAGIC:
        raise FormatError("not a public key blob")
    version, bits = struct.unpack_from(">BI", data, 4)
    if version != KEY_FORMAT_VERSION:
        raise FormatError(f"unsupported public key version {version}")
    try:
        n, offset = unpack_bigint(data, 9)
    except ValueError as exc:
        raise FormatError(str(exc))
    if offset != len(data):
        raise FormatError("trailing bytes after public key")
    if n.bit_length() != bits:
        raise FormatError("declared bit length does not match the modulus")
    return PublicKey(n)


def private_key_to_bytes(private_key: PrivateKey) -> bytes:
    return (
        PRIVATE_KEY_MAGIC
        + struct.pack(">B", KEY_FORMAT_VERSION)
        + pack_bigint(private_key.p)
        + pack_bigint(private_key.q)
    )


def private_key_from_bytes(data: bytes) -> PrivateKey:
    if len(data) < 5 or data[:4] != PRIVATE_KEY_MAGIC:
        raise FormatError("not a private key blob")
    (version,) = struct.unpack_from(">B", data, 4)
    if version != KEY_FORMAT_VERSION:
        raise FormatError(f"unsupported private key version {version}")
    try:
        p, offset = unpack_bigint(data, 5)
        q, offset = unpack_bigint(data, offset)
    except ValueError as exc:
        raise FormatError(str(exc))
    if offset != len(data):
        raise FormatError("trailing bytes after private key")
    return PrivateKey(p, q)


def save_public_key(public_key: PublicKey, path):
    with open(path, "wb") as handle:
        handle.write(public_key_to_bytes(public_key))


def load_public_key(path) -> PublicKey:
    with open(path, "rb") as handle:
        return public_key_from_bytes(handle.read())


def save_private_key(private_key: PrivateKey, path):
    with open(path, "wb") as handle:
        handle.write(private_key_to_bytes(private_key))


def load_private_key(path) -> PrivateKey:
    with open(path, "rb") as handle:
        return private_key_from_bytes(handle.read())
