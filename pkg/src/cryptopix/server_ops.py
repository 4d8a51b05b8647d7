"""Encrypted-domain image operations, as run by an untrusted server.

Every function here consumes a public key and ciphertexts and returns
ciphertexts.  Nothing in this module imports or accepts private key
material, which is the structural guarantee that the server learns
nothing about pixel values.

Outputs that need client-side finishing (gradient magnitude, morphology
thresholding, the equalization lookup) are documented as such; the
server's part always completes in the single request that delivered the
input.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from .encoding import EncodedNumber, EncryptedNumber, encode, encrypt_encoded
from .errors import KeyMismatchError
from .image import EncryptedImage
from .paillier import PublicKey
from .util import reflect_index

OP_NEGATE = 1
OP_BRIGHTNESS = 2
OP_CONVOLVE = 3
OP_GRADIENT = 4
OP_SHARPEN = 5
OP_MORPH_SUM = 6
OP_EQUALIZE = 7

OP_NAMES = {
    OP_NEGATE: "negate",
    OP_BRIGHTNESS: "brightness",
    OP_CONVOLVE: "convolve",
    OP_GRADIENT: "gradient",
    OP_SHARPEN: "sharpen",
    OP_MORPH_SUM: "morph_sum",
    OP_EQUALIZE: "equalize_transform",
}


@dataclass(frozen=True)
class Kernel:
    """An odd-sized convolution mask plus a final scale factor.

    ``post_scale`` is applied once per output pixel after the weighted
    sum, so an averaging kernel keeps integer weights and pays for its
    1/(m*n) only once.
    """

    weights: tuple[tuple[float, ...], ...]
    post_scale: float = 1.0

    def __post_init__(self):
        rows = len(self.weights)
        if rows == 0 or rows % 2 == 0:
            raise ValueError("kernel height must be odd and positive")
        cols = len(self.weights[0])
        if cols == 0 or cols % 2 == 0:
            raise ValueError("kernel width must be odd and positive")
        for row in self.weights:
            if len(row) != cols:
                raise ValueError("kernel rows must have equal length")

    @property
    def rows(self) -> int:
        return len(self.weights)

    @property
    def cols(self) -> int:
        return len(self.weights[0])

    @classmethod
    def from_rows(cls, rows, post_scale: float = 1.0) -> "Kernel":
        return cls(tuple(tuple(float(v) for v in row) for row in rows), float(post_scale))

    @classmethod
    def averaging(cls, size: int = 3) -> "Kernel":
        return cls.from_rows(
            [[1.0] * size for _ in range(size)], post_scale=1.0 / (size * size)
        )

    @classmethod
    def identity(cls, size: int = 3) -> "Kernel":
        rows = [[0.0] * size for _ in range(size)]
        rows[size // 2][size // 2] = 1.0
        return cls.from_rows(rows)


def _pair(h1, h2) -> tuple[Kernel, Kernel]:
    return Kernel.from_rows(h1), Kernel.from_rows(h2)


# Named first-derivative operator pairs (horizontal kernel, vertical
# kernel), with the usual integer coefficients.
GRADIENT_OPERATORS: dict[str, tuple[Kernel, Kernel]] = {
    "sobel": _pair(
        [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
        [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
    ),
    "prewitt": _pair(
        [[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]],
        [[-1, -1, -1], [0, 0, 0], [1, 1, 1]],
    ),
    "robinson": _pair(
        [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
        [[1, 2, 1], [0, 0, 0], [-1, -2, -1]],
    ),
    "kirsch": _pair(
        [[-3, -3, 5], [-3, 0, 5], [-3, -3, 5]],
        [[5, 5, 5], [-3, 0, -3], [-3, -3, -3]],
    ),
}


@dataclass(frozen=True)
class StructuringElement:
    """A binary neighborhood probe for morphology."""

    mask: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = len(self.mask)
        if rows == 0 or rows % 2 == 0:
            raise ValueError("structuring element height must be odd and positive")
        cols = len(self.mask[0])
        if cols == 0 or cols % 2 == 0:
            raise ValueError("structuring element width must be odd and positive")
        for row in self.mask:
            if len(row) != cols:
                raise ValueError("structuring element rows must have equal length")
            for cell in row:
                if cell not in (0, 1):
                    raise ValueError("structuring element cells must be 0 or 1")
        if self.ones_count < 1:
            raise ValueError("structuring element needs at least one set cell")

    @property
    def rows(self) -> int:
        return len(self.mask)

    @property
    def cols(self) -> int:
        return len(self.mask[0])

    @property
    def ones_count(self) -> int:
        return sum(sum(row) for row in self.mask)

    @classmethod
    def from_rows(cls, rows) -> "StructuringElement":
        return cls(tuple(tuple(int(v) for v in row) for row in rows))

    @classmethod
    def full(cls, size: int = 3) -> "StructuringElement":
        return cls.from_rows([[1] * size for _ in range(size)])

    @classmethod
    def cross(cls, size: int = 3) -> "StructuringElement":
        mid = size // 2
        return cls.from_rows(
            [[1 if (x == mid or y == mid) else 0 for x in range(size)] for y in range(size)]
        )


# ---------------------------------------------------------------------------
# operation helpers
# ---------------------------------------------------------------------------


def _pixel_exponent(image: EncryptedImage) -> int:
    return min(pixel.exponent for pixel in image.pixels)


def _encrypted_constant(
    public_key: PublicKey, value, exponent: int, base: int, rng
) -> EncryptedNumber:
    encoded = encode(public_key, value, base=base, exponent=exponent)
    return encrypt_encoded(public_key, encoded, rng)


def _check_image_key(public_key: PublicKey, image: EncryptedImage):
    if image.key_fingerprint != public_key.fingerprint:
        raise KeyMismatchError("image was encrypted under a different key")


# ---------------------------------------------------------------------------
# the seven operations
# ---------------------------------------------------------------------------


def op_negate(
    public_key: PublicKey, image: EncryptedImage, rng: random.Random | None = None
) -> EncryptedImage:
    """Image negative: each pixel becomes (levels - 1) - pixel.

    The constant levels - 1 is encrypted server-side (the public key is
    all that takes) once per request and reused across pixels.
    """
    _check_image_key(public_key, image)
    exponent = _pixel_exponent(image)
    top = _encrypted_constant(public_key, image.levels - 1, exponent, image.base, rng)
    pixels = [top - pixel for pixel in image.pixels]
    return EncryptedImage(
        image.width, image.height, image.levels, image.base, image.key_fingerprint, pixels
    )


def op_brightness(
    public_key: PublicKey, image: EncryptedImage, value: EncryptedNumber
) -> EncryptedImage:
    """Shift every pixel by an encrypted amount the server never learns.

    Out-of-range results are the client's concern: it clamps after
    decryption.
    """
    _check_image_key(public_key, image)
    if value.key_fingerprint != image.key_fingerprint:
        raise KeyMismatchError("brightness value was encrypted under a different key")
    if value.base != image.base:
        raise ValueError("brightness value must use the image's base")
    shift = value.align(min(value.exponent, _pixel_exponent(image)))
    pixels = [pixel + shift for pixel in image.pixels]
    return EncryptedImage(
        image.width, image.height, image.levels, image.base, image.key_fingerprint, pixels
    )


def _negated_pixels(image: EncryptedImage) -> list[EncryptedNumber]:
    minus_one = encode(image.public_key, -1, base=image.base)
    return [pixel * minus_one for pixel in image.pixels]


def _tap_table(image, kernel, magnitudes, negated):
    """Flatten a kernel into (row_map, col_map, source, weight) taps.

    The maps hold all reflect-101 source indices precomputed per axis,
    so the pixel loop does only arithmetic and dictionary-free lookups.
    """
    half_r, half_c = kernel.rows // 2, kernel.cols // 2
    taps = []
    for ky, row in enumerate(kernel.weights):
        row_map = [
            reflect_index(y + ky - half_r, image.height) * image.width
            for y in range(image.height)
        ]
        for kx, weight in enumerate(row):
            if weight == 0.0:
                continue
            col_map = [
                reflect_index(x + kx - half_c, image.width) for x in range(image.width)
            ]
            source = negated if weight < 0.0 else image.pixels
            taps.append((row_map, col_map, source, magnitudes[abs(weight)]))
    return taps


def _convolve_core(
    public_key: PublicKey,
    image: EncryptedImage,
    kernels: list[Kernel],
    rng: random.Random | None,
    negated: list[EncryptedNumber] | None = None,
) -> list[EncryptedImage]:
    """Run several kernels over the image in one window walk.

    Weights are encoded at the image's working precision; zero weights
    are skipped since they cannot contribute.  Negative taps read from a
    single negated copy of the image, built once up front, so they cost
    one positive-magnitude multiplication each instead of a
    near-full-ring exponentiation.  Borders use reflect-101 indexing,
    mirrored without repeating the edge pixel.
    """
    _check_image_key(public_key, image)
    weight_exponent = _pixel_exponent(image)
    all_weights = [w for kernel in kernels for row in kernel.weights for w in row]
    for kernel in kernels:
        if kernel.rows > image.height or kernel.cols > image.width:
            raise ValueError("kernel does not fit inside the image")
    magnitudes = {
        abs(w): encode(public_key, abs(w), base=image.base, exponent=weight_exponent)
        for w in all_weights
        if w != 0.0
    }
    if negated is None and any(w < 0.0 for w in all_weights):
        negated = _negated_pixels(image)
    zero = None
    if not all(any(w != 0.0 for row in k.weights for w in row) for k in kernels):
        zero = _encrypted_constant(
            public_key, 0, weight_exponent + _pixel_exponent(image), image.base, rng
        )
    plans = []
    for kernel in kernels:
        scale = None
        if kernel.post_scale != 1.0:
            scale = encode(
                public_key, kernel.post_scale, base=image.base, exponent=weight_exponent
            )
        plans.append((_tap_table(image, kernel, magnitudes, negated), scale, []))
    for y in range(image.height):
        for x in range(image.width):
            for taps, scale, pixels in plans:
                acc = None
                for row_map, col_map, source, magnitude in taps:
                    term = source[row_map[y] + col_map[x]] * magnitude
                    acc = term if acc is None else acc + term
                if acc is None:
                    acc = zero
                if scale is not None:
                    acc = acc * scale
                pixels.append(acc)
    return [
        EncryptedImage(
            image.width, image.height, image.levels, image.base, image.key_fingerprint, pixels
        )
        for _, _, pixels in plans
    ]


def op_convolve(
    public_key: PublicKey,
    image: EncryptedImage,
    kernel: Kernel,
    rng: random.Random | None = None,
) -> EncryptedImage:
    """Spatial filtering with an arbitrary real-valued kernel.

    Per output pixel: the weighted sum of the window under the kernel,
    then one multiplication by post_scale if it is not 1.
    """
    return _convolve_core(public_key, image, [kernel], rng)[0]


def op_gradient(
    public_key: PublicKey,
    image: EncryptedImage,
    h1: Kernel,
    h2: Kernel,
    rng: random.Random | None = None,
) -> tuple[EncryptedImage, EncryptedImage]:
    """First-derivative components: h1 and h2 convolved with the image.

    Both kernels run in one window walk over a shared negated copy of
    the image.  Returns the encrypted (gx, gy) pair; magnitude and
    direction are cheap plaintext work the client finishes after
    decryption.
    """
    gx, gy = _convolve_core(public_key, image, [h1, h2], rng)
    return gx, gy


def op_sharpen(
    public_key: PublicKey,
    image: EncryptedImage,
    k: float,
    kernel: Kernel | None = None,
) -> EncryptedImage:
    """Unsharp masking: (k+1) * image - k * lowpass(image).

    k = 1 is classic unsharp masking, k > 1 is high-boost filtering.
    """
    if not k > 0:
        raise ValueError("sharpening amount k must be positive")
    _check_image_key(public_key, image)
    if kernel is None:
        kernel = Kernel.averaging(3)
    lowpass = op_convolve(public_key, image, kernel)
    exponent = _pixel_exponent(image)
    boost = encode(public_key, float(k) + 1.0, base=image.base, exponent=exponent)
    amount = encode(public_key, float(k), base=image.base, exponent=exponent)
    pixels = [
        pixel * boost - low * amount for pixel, low in zip(image.pixels, lowpass.pixels)
    ]
    return EncryptedImage(
        image.width, image.height, image.levels, image.base, image.key_fingerprint, pixels
    )


def op_morph_sum(
    public_key: PublicKey,
    image: EncryptedImage,
    element: StructuringElement,
    rng: random.Random | None = None,
) -> EncryptedImage:
    """Neighborhood counts for binary morphology.

    For each pixel, sums the encrypted values under the set cells of the
    element; cells falling outside the image contribute zero.  The
    client derives erosion or dilation by thresholding the decrypted
    counts, which is why the result is returned unthresholded with
    ones_count + 1 levels.
    """
    _check_image_key(public_key, image)
    if image.levels != 2:
        raise ValueError("morphology expects a binary image (levels = 2)")
    half_r = element.rows // 2
    half_c = element.cols // 2
    zero = None
    pixels = []
    for y in range(image.height):
        for x in range(image.width):
            acc = None
            for ey, row in enumerate(element.mask):
                src_y = y + ey - half_r
                if not 0 <= src_y < image.height:
                    continue
                for ex, cell in enumerate(row):
                    if not cell:
                        continue
                    src_x = x + ex - half_c
                    if not 0 <= src_x < image.width:
                        continue
                    pixel = image.get(src_x, src_y)
                    acc = pixel if acc is None else acc + pixel
            if acc is None:
                if zero is None:
                    zero = _encrypted_constant(
                        public_key, 0, _pixel_exponent(image), image.base, rng
                    )
                acc = zero
            pixels.append(acc)
    return EncryptedImage(
        image.width,
        image.height,
        element.ones_count + 1,
        image.base,
        image.key_fingerprint,
        pixels,
    )


def op_equalize_transform(
    public_key: PublicKey,
    histogram: list[EncryptedNumber],
    levels: int,
    width: int,
    height: int,
) -> list[EncryptedNumber]:
    """Equalization transform from an encrypted histogram.

    Runs the cumulative sum over the G encrypted counts, then scales
    each entry by the public constant (G-1)/(width*height).  The counts
    themselves stay hidden; the client turns the decrypted transform
    into a lookup table.
    """
    if levels < 2:
        raise ValueError("levels must be at least 2")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    if len(histogram) != levels:
        raise ValueError(f"expected {levels} histogram entries, got {len(histogram)}")
    for entry in histogram:
        if entry.key_fingerprint != public_key.fingerprint:
            raise KeyMismatchError("histogram was encrypted under a different key")
        if entry.base != histogram[0].base:
            raise ValueError("histogram entries must share a base")
    # The scale is a public constant below 1, so it is encoded at its own
    # default working precision rather than the histogram's exponent; a
    # histogram of whole-number counts at exponent 0 would otherwise
    # quantize the scale to nothing.
    scale = encode(
        public_key,
        Fraction(levels - 1, width * height),
        base=histogram[0].base,
    )
    transform = []
    running = None
    for entry in histogram:
        running = entry if running is None else running + entry
        transform.append(running * scale)
    return transform
