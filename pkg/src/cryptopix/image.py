"""Plain and encrypted raster images, their file formats, and conversion.

Plain images are row-major integer rasters with an explicit number of
gray levels (2 for binary images).  They travel as binary PGM (P5) or
PBM (P4) files.  Encrypted images carry one encrypted number per pixel
plus enough metadata (size, levels, base, key fingerprint) for a server
to work on them without ever seeing pixel values.
"""

from __future__ import annotations

import random
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import paillier
from .encoding import (
    DEFAULT_BASE,
    EncryptedNumber,
    decrypt_value,
    deserialize_number,
    encode,
    encrypt_encoded,
    serialize_number,
    working_exponent,
)
from .errors import FormatError, KeyMismatchError
from .paillier import PrivateKey, PublicKey
from .util import round_half_away

ENCRYPTED_IMAGE_MAGIC = b"CPXI"
IMAGE_FORMAT_VERSION = 1


@dataclass(eq=True)
class PlainImage:
    """A row-major raster of integers in [0, levels)."""

    width: int
    height: int
    pixels: list[int] = field(repr=False)
    levels: int = 256

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.levels < 2:
            raise ValueError("an image needs at least two levels")
        if len(self.pixels) != self.width * self.height:
            raise ValueError("pixel count does not match the dimensions")
        for value in self.pixels:
            if not isinstance(value, int) or not 0 <= value < self.levels:
                raise ValueError("pixel values must be integers in [0, levels)")

    def get(self, x: int, y: int) -> int:
        return self.pixels[y * self.width + x]

    def is_binary(self) -> bool:
        return self.levels == 2

    def to_array(self) -> np.ndarray:
        return np.array(self.pixels, dtype=np.int64).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, array, levels: int = 256) -> "PlainImage":
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValueError("expected a 2-D array")
        height, width = array.shape
        return cls(width, height, [int(v) for v in array.reshape(-1)], levels)


# ---------------------------------------------------------------------------
# PGM (P5) and PBM (P4) files
# ---------------------------------------------------------------------------


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    whitespace = b" \t\r\n\x0b\x0c"
    while pos < len(data):
        if data[pos] in whitespace:
            pos += 1
        elif data[pos] == ord("#"):
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in whitespace:
        pos += 1
    if start == pos:
        raise FormatError("truncated image header")
    return data[start:pos], pos


def _header_int(token: bytes) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"bad header field {token!r}")


def parse_pgm(data: bytes) -> PlainImage:
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM file")
    pos = 2
    width, pos = _next_token(data, pos)
    height, pos = _next_token(data, pos)
    maxval, pos = _next_token(data, pos)
    width, height, maxval = map(_header_int, (width, height, maxval))
    if not 1 <= maxval <= 65535:
        raise FormatError("PGM maxval out of range")
    if pos >= len(data):
        raise FormatError("missing raster data")
    pos += 1  # the single whitespace byte after the header
    per_pixel = 1 if maxval < 256 else 2
    expected = width * height * per_pixel
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError("raster shorter than the header promises")
    if per_pixel == 1:
        pixels = list(raster)
    else:
        pixels = [int.from_bytes(raster[i : i + 2], "big") for i in range(0, expected, 2)]
    return PlainImage(width, height, pixels, maxval + 1)


def render_pgm(image: PlainImage) -> bytes:
    maxval = image.levels - 1
    if maxval > 65535:
        raise ValueError("PGM supports at most 65536 levels")
    header = b"P5\n%d %d\n%d\n" % (image.width, image.height, maxval)
    if maxval < 256:
        raster = bytes(image.pixels)
    else:
        raster = b"".join(value.to_bytes(2, "big") for value in image.pixels)
    return header + raster


def parse_pbm(data: bytes) -> PlainImage:
    if data[:2] != b"P4":
        raise FormatError("not a binary PBM file")
    pos = 2
    width, pos = _next_token(data, pos)
    height, pos = _next_token(data, pos)
    width, height = map(_header_int, (width, height))
    if width < 1 or height < 1:
        raise FormatError("PBM dimensions must be positive")
    if pos >= len(data):
        raise FormatError("missing raster data")
    pos += 1
    row_bytes = (width + 7) // 8
    expected = row_bytes * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError("raster shorter than the header promises")
    pixels = []
    for y in range(height):
        row = raster[y * row_bytes : (y + 1) * row_bytes]
        for x in range(width):
            pixels.append((row[x // 8] >> (7 - x % 8)) & 1)
    return PlainImage(width, height, pixels, 2)


def render_pbm(image: PlainImage) -> bytes:
    if image.levels != 2:
        raise ValueError("only binary images can be written as PBM")
    header = b"P4\n%d %d\n" % (image.width, image.height)
    row_bytes = (image.width + 7) // 8
    raster = bytearray(row_bytes * image.height)
    for y in range(image.height):
        for x in range(image.width):
            if image.get(x, y):
                raster[y * row_bytes + x // 8] |= 1 << (7 - x % 8)
    return header + bytes(raster)


def load_image(path) -> PlainImage:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:2] == b"P5":
        return parse_pgm(data)
    if data[:2] == b"P4":
        return parse_pbm(data)
    raise FormatError("unrecognized image file (expected binary PGM or PBM)")


def save_image(image: PlainImage, path):
    text = str(path)
    if text.endswith(".pbm"):
        payload = render_pbm(image)
    else:
        payload = render_pgm(image)
    with open(path, "wb") as handle:
        handle.write(payload)


# ---------------------------------------------------------------------------
# encrypted images
# ---------------------------------------------------------------------------


@dataclass
class EncryptedImage:
    """A raster of encrypted numbers with shared key and base."""

    width: int
    height: int
    levels: int
    base: int
    key_fingerprint: bytes
    pixels: list[EncryptedNumber] = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if len(self.pixels) != self.width * self.height:
            raise ValueError("pixel count does not match the dimensions")
        for pixel in self.pixels:
            if pixel.key_fingerprint != self.key_fingerprint:
                raise KeyMismatchError("all pixels must share the image's key")
            if pixel.base != self.base:
                raise ValueError("all pixels must share the image's base")

    @property
    def public_key(self) -> PublicKey:
        return self.pixels[0].public_key

    def get(self, x: int, y: int) -> EncryptedNumber:
        return self.pixels[y * self.width + x]


def _chunk_rngs(rng: random.Random | None, chunks: int) -> list[random.Random]:
    """Independent per-chunk generators; deterministic when rng is seeded.

    Seeds are drawn sequentially up front so the result does not depend
    on thread scheduling.
    """
    if rng is None:
        return [random.SystemRandom() for _ in range(chunks)]
    return [random.Random(rng.getrandbits(64)) for _ in range(chunks)]


def encrypt_image(
    public_key: PublicKey,
    image: PlainImage,
    precision=None,
    *,
    base: int = DEFAULT_BASE,
    rng: random.Random | None = None,
    workers: int = 1,
) -> EncryptedImage:
    """Encrypt every pixel at the exponent implied by ``precision``.

    Pixels are whole numbers, but they are still encoded at the working
    precision so that later fractional arithmetic has headroom.
    """
    exponent = working_exponent(precision, base)
    encoded = [
        encode(public_key, value, base=base, exponent=exponent) for value in image.pixels
    ]
    if workers <= 1:
        rngs = _chunk_rngs(rng, 1)
        pixels = [encrypt_encoded(public_key, item, rngs[0]) for item in encoded]
    else:
        boundaries = list(range(0, len(encoded), 1024))
        rngs = _chunk_rngs(rng, len(boundaries))

        def run(start: int, chunk_rng: random.Random):
            return [
                encrypt_encoded(public_key, item, chunk_rng)
                for item in encoded[start : start + 1024]
            ]

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, boundaries, rngs))
        pixels = [pixel for chunk in chunks for pixel in chunk]
    return EncryptedImage(
        image.width, image.height, image.levels, base, public_key.fingerprint, pixels
    )


def decrypt_image_values(
    private_key: PrivateKey, image: EncryptedImage, workers: int = 1
) -> np.ndarray:
    """Decrypt to the raw real values as a (height, width) float array."""
    if image.key_fingerprint != private_key.public_key.fingerprint:
        raise KeyMismatchError("encrypted image does not match this private key")
    if workers <= 1:
        values = [decrypt_value(private_key, pixel) for pixel in image.pixels]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda pixel: decrypt_value(private_key, pixel), image.pixels))
    return np.array(values, dtype=np.float64).reshape(image.height, image.width)


def decrypt_image(
    private_key: PrivateKey,
    image: EncryptedImage,
    *,
    clamp: bool = False,
    workers: int = 1,
) -> PlainImage:
    """Decrypt, round to integers, and optionally clamp into [0, levels)."""
    values = decrypt_image_values(private_key, image, workers)
    pixels = [round_half_away(value) for value in values.reshape(-1)]
    top = image.levels - 1
    if clamp:
        pixels = [min(top, max(0, value)) for value in pixels]
    else:
        for value in pixels:
            if not 0 <= value <= top:
                raise ValueError(
                    f"decrypted pixel {value} is outside [0, {top}]; "
                    "pass clamp=True to saturate"
                )
    return PlainImage(image.width, image.height, pixels, image.levels)


def ciphertext_bits(image: EncryptedImage) -> int:
    """Total size of all pixel ciphertexts at the key's fixed width."""
    return 8 * image.public_key.ciphertext_bytes * len(image.pixels)


def expansion_factor(image: EncryptedImage) -> float:
    """Ciphertext size over the 8-bit plaintext raster size."""
    plain_bits = 8 * image.width * image.height
    return ciphertext_bits(image) / plain_bits


def serialize_image(image: EncryptedImage) -> bytes:
    header = ENCRYPTED_IMAGE_MAGIC + struct.pack(
        ">BIIIH",
        IMAGE_FORMAT_VERSION,
        image.width,
        image.height,
        image.levels,
        image.base,
    )
    parts = [header, image.key_fingerprint]
    parts.extend(serialize_number(pixel) for pixel in image.pixels)
    return b"".join(parts)


def deserialize_image(public_key: PublicKey, data: bytes) -> EncryptedImage:
    head = 4 + 15 + paillier.FINGERPRINT_BYTES
    if len(data) < head or data[:4] != ENCRYPTED_IMAGE_MAGIC:
        raise FormatError("not an encrypted image blob")
    version, width, height, levels, base = struct.unpack_from(">BIIIH", data, 4)
    if version != IMAGE_FORMAT_VERSION:
        raise FormatError(f"unsupported encrypted image version {version}")
    fingerprint = data[19 : 19 + paillier.FINGERPRINT_BYTES]
    if fingerprint != public_key.fingerprint:
        raise KeyMismatchError("encrypted image belongs to a different key")
    if width < 1 or height < 1 or levels < 2 or base < 2:
        raise FormatError("invalid encrypted image header")
    offset = head
    pixels = []
    for _ in range(width * height):
        pixel, offset = deserialize_number(public_key, data, offset, base)
        pixels.append(pixel)
    if offset != len(data):
        raise FormatError("trailing bytes after encrypted image")
    return EncryptedImage(width, height, levels, base, fingerprint, pixels)


def save_encrypted_image(image: EncryptedImage, path):
    with open(path, "wb") as handle:
        handle.write(serialize_image(image))


def load_encrypted_image(public_key: PublicKey, path) -> EncryptedImage:
    with open(path, "rb") as handle:
        return deserialize_image(public_key, handle.read())
