"""Plaintext implementations of every operation, plus error reporting.

These run directly on pixel arrays with ordinary float arithmetic and
exist to measure what the encrypted pipeline costs in accuracy.  They
use the same conventions as the encrypted path on purpose: reflect-101
borders for filtering, zero padding for morphology counts, rounding
half away from zero.  Differences between the two pipelines then come
only from the fixed-precision encoding, never from mismatched borders
or rounding rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import PlainImage
from .postprocess import compute_histogram
from .server_ops import Kernel, StructuringElement
from .util import round_half_away


def _to_values(image) -> np.ndarray:
    if isinstance(image, PlainImage):
        return image.to_array().astype(np.float64)
    return np.asarray(image, dtype=np.float64)


def _to_image(values: np.ndarray, levels: int, clamp: bool = True) -> PlainImage:
    pixels = [round_half_away(v) for v in values.reshape(-1)]
    if clamp:
        top = levels - 1
        pixels = [min(top, max(0, v)) for v in pixels]
    height, width = values.shape
    return PlainImage(width, height, pixels, levels)


def ref_negate(image: PlainImage) -> PlainImage:
    top = image.levels - 1
    return PlainImage(image.width, image.height, [top - v for v in image.pixels], image.levels)


def ref_brightness(image: PlainImage, value: float, clamp: bool = True) -> PlainImage:
    return _to_image(_to_values(image) + float(value), image.levels, clamp)


def ref_convolve_values(image, kernel: Kernel) -> np.ndarray:
    """Float convolution with reflect-101 borders; returns raw reals."""
    values = _to_values(image)
    height, width = values.shape
    if kernel.rows > height or kernel.cols > width:
        raise ValueError("kernel does not fit inside the image")
    pad_r, pad_c = kernel.rows // 2, kernel.cols // 2
    padded = np.pad(values, ((pad_r, pad_r), (pad_c, pad_c)), mode="reflect")
    out = np.zeros_like(values)
    for ky in range(kernel.rows):
        for kx in range(kernel.cols):
            weight = kernel.weights[ky][kx]
            if weight == 0.0:
                continue
            out += weight * padded[ky : ky + height, kx : kx + width]
    return out * kernel.post_scale


def ref_convolve(image: PlainImage, kernel: Kernel) -> PlainImage:
    return _to_image(ref_convolve_values(image, kernel), image.levels)


def ref_gradient(image, h1: Kernel, h2: Kernel) -> tuple[np.ndarray, np.ndarray]:
    return ref_convolve_values(image, h1), ref_convolve_values(image, h2)


def ref_sharpen_values(image, k: float, kernel: Kernel | None = None) -> np.ndarray:
    if not k > 0:
        raise ValueError("sharpening amount k must be positive")
    if kernel is None:
        kernel = Kernel.averaging(3)
    values = _to_values(image)
    return (float(k) + 1.0) * values - float(k) * ref_convolve_values(values, kernel)


def ref_sharpen(image: PlainImage, k: float, kernel: Kernel | None = None) -> PlainImage:
    return _to_image(ref_sharpen_values(image, k, kernel), image.levels)


def ref_morph_sum(image: PlainImage, element: StructuringElement) -> PlainImage:
    """Neighborhood counts with zero padding, mirroring the server op."""
    if image.levels != 2:
        raise ValueError("morphology expects a binary image (levels = 2)")
    half_r, half_c = element.rows // 2, element.cols // 2
    pixels = []
    for y in range(image.height):
        for x in range(image.width):
            count = 0
            for ey, row in enumerate(element.mask):
                src_y = y + ey - half_r
                if not 0 <= src_y < image.height:
                    continue
                for ex, cell in enumerate(row):
                    src_x = x + ex - half_c
                    if cell and 0 <= src_x < image.width:
                        count += image.get(src_x, src_y)
            pixels.append(count)
    return PlainImage(image.width, image.height, pixels, element.ones_count + 1)


def ref_erode(image: PlainImage, element: StructuringElement) -> PlainImage:
    """Binary erosion by its definition: all set cells must be covered.

    Cells outside the image count as background, matching the zero
    padding of the counting path.
    """
    counts = ref_morph_sum(image, element)
    pixels = [1 if v == element.ones_count else 0 for v in counts.pixels]
    return PlainImage(image.width, image.height, pixels, 2)


def ref_dilate(image: PlainImage, element: StructuringElement) -> PlainImage:
    """Binary dilation: any covered set cell lights the pixel."""
    counts = ref_morph_sum(image, element)
    pixels = [1 if v >= 1 else 0 for v in counts.pixels]
    return PlainImage(image.width, image.height, pixels, 2)


def ref_equalize_transform(image: PlainImage) -> list[float]:
    """Cumulative histogram scaled by (levels-1)/pixel_count."""
    scale = (image.levels - 1) / (image.width * image.height)
    transform = []
    running = 0
    for count in compute_histogram(image):
        running += count
        transform.append(running * scale)
    return transform


def ref_equalize(image: PlainImage) -> PlainImage:
    top = image.levels - 1
    table = [
        min(top, max(0, round_half_away(v))) for v in ref_equalize_transform(image)
    ]
    pixels = [table[value] for value in image.pixels]
    return PlainImage(image.width, image.height, pixels, image.levels)


# ---------------------------------------------------------------------------
# error reporting
# ---------------------------------------------------------------------------

ERROR_CSV_HEADER = "op,precision,mean_abs_error,std_dev,max_abs_error"


@dataclass(frozen=True)
class ErrorReport:
    """Per-pixel absolute error statistics between two rasters."""

    mean_abs_error: float
    std_dev: float
    max_abs_error: float
    pixel_count: int

    def csv_row(self, op: str, precision: float) -> str:
        return (
            f"{op},{precision:g},{self.mean_abs_error:.9g},"
            f"{self.std_dev:.9g},{self.max_abs_error:.9g}"
        )


def compare(result, reference) -> ErrorReport:
    """Absolute-error statistics of ``result`` against ``reference``."""
    a = _to_values(result)
    b = _to_values(reference)
    if a.shape != b.shape:
        raise ValueError("cannot compare rasters of different shapes")
    errors = np.abs(a - b)
    return ErrorReport(
        float(errors.mean()), float(errors.std()), float(errors.max()), int(errors.size)
    )


def write_error_csv(path, labeled_reports):
    """Write (op, precision, ErrorReport) triples as a CSV file."""
    lines = [ERROR_CSV_HEADER]
    lines.extend(report.csv_row(op, precision) for op, precision, report in labeled_reports)
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")
