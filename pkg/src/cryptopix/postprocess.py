"""Client-side preparation and finishing around the encrypted operations.

The server returns raw material for some operations: gradient components
that still need magnitude and direction, neighborhood counts that still
need thresholding, an equalization transform that still needs to be
applied as a lookup table.  All of that is cheap plaintext work and it
lives here, together with the histogram the client prepares for
equalization.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .encoding import DEFAULT_BASE, EncryptedNumber, encode, encrypt_encoded, working_exponent
from .image import PlainImage
from .paillier import PublicKey
from .server_ops import StructuringElement
from .util import round_half_away

MORPH_MODES = ("erosion", "dilation")


def compute_histogram(image: PlainImage) -> list[int]:
    """Occurrence count of every gray level, length image.levels."""
    counts = np.bincount(np.asarray(image.pixels), minlength=image.levels)
    return [int(v) for v in counts]


def encrypt_histogram(
    public_key: PublicKey,
    image: PlainImage,
    precision=None,
    *,
    base: int = DEFAULT_BASE,
    rng: random.Random | None = None,
) -> list[EncryptedNumber]:
    """Encrypt the image's histogram at the working precision.

    Counts are whole numbers, but encoding them at the working exponent
    lets the server scale them fractionally without extra alignment.
    """
    exponent = working_exponent(precision, base)
    encrypted = []
    for count in compute_histogram(image):
        encoded = encode(public_key, count, base=base, exponent=exponent)
        encrypted.append(encrypt_encoded(public_key, encoded, rng))
    return encrypted


@dataclass
class GradientField:
    """Decrypted gradient components with derived magnitude and direction."""

    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray


def finish_gradient(gx, gy) -> GradientField:
    """Combine decrypted component rasters into a gradient field.

    magnitude = sqrt(gx**2 + gy**2), direction = atan2(gy, gx) in
    (-pi, pi] with direction 0 for a zero gradient.
    """
    gx = np.asarray(gx, dtype=np.float64) + 0.0
    gy = np.asarray(gy, dtype=np.float64) + 0.0
    if gx.shape != gy.shape:
        raise ValueError("gradient components must have the same shape")
    magnitude = np.hypot(gx, gy)
    direction = np.arctan2(gy, gx)
    direction = np.where(direction == -np.pi, np.pi, direction)
    return GradientField(gx, gy, magnitude, direction)


def magnitude_image(field: GradientField, levels: int = 256) -> PlainImage:
    """Rescale the magnitude linearly onto [0, levels) for display."""
    peak = float(field.magnitude.max())
    if peak == 0.0:
        scaled = np.zeros_like(field.magnitude)
    else:
        scaled = field.magnitude * ((levels - 1) / peak)
    pixels = [min(levels - 1, max(0, round_half_away(v))) for v in scaled.reshape(-1)]
    height, width = field.magnitude.shape
    return PlainImage(width, height, pixels, levels)


def finish_morphology(
    counts: PlainImage, element: StructuringElement, mode: str
) -> PlainImage:
    """Threshold decrypted neighborhood counts into a binary image.

    Erosion keeps a pixel only when every set cell of the element was
    covered (count = ones_count); dilation keeps it when any was
    (count >= 1).
    """
    if mode not in MORPH_MODES:
        raise ValueError(f"mode must be one of {MORPH_MODES}")
    if counts.levels != element.ones_count + 1:
        raise ValueError("counts image does not match this structuring element")
    threshold = element.ones_count if mode == "erosion" else 1
    pixels = [1 if value >= threshold else 0 for value in counts.pixels]
    return PlainImage(counts.width, counts.height, pixels, 2)


def finish_equalization(image: PlainImage, transform) -> PlainImage:
    """Map pixels through the decrypted equalization transform.

    Transform entries are real; they are rounded half away from zero
    and clamped into the gray range, then used as a lookup table.
    """
    if len(transform) != image.levels:
        raise ValueError("transform length must equal the number of gray levels")
    top = image.levels - 1
    table = [min(top, max(0, round_half_away(float(v)))) for v in transform]
    pixels = [table[value] for value in image.pixels]
    return PlainImage(image.width, image.height, pixels, image.levels)
