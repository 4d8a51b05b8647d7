"""Timing harness for the crypto layer and the ciphertext-domain operators.

Two suites are provided.  ``bench_crypto`` times whole-image encryption and
decryption across key sizes and reports the ciphertext expansion factor.
``bench_ops`` times each image operator with a three-way split: client-side
preparation, the server-side ciphertext work, and client-side finishing.
Absolute numbers depend on the host; only orderings are ever asserted.
"""

import time
from dataclasses import dataclass
from statistics import median
from typing import Optional, Sequence

from .encoding import decrypt_value, encrypt_value
from .image import (
    PlainImage,
    decrypt_image,
    decrypt_image_values,
    encrypt_image,
    expansion_factor,
)
from .paillier import generate_keypair
from .postprocess import (
    encrypt_histogram,
    finish_equalization,
    finish_gradient,
    finish_morphology,
)
from .server_ops import (
    GRADIENT_OPERATORS,
    Kernel,
    StructuringElement,
    op_brightness,
    op_convolve,
    op_equalize_transform,
    op_gradient,
    op_morph_sum,
    op_negate,
    op_sharpen,
)

BENCH_CSV_HEADER = "stage,op,bits,width,height,seconds,expansion"

DEFAULT_OPS = (
    "negation",
    "brightness",
    "lowpass",
    "sobel",
    "sharpen",
    "erosion",
    "dilation",
    "equalization",
)

_BRIGHTNESS_SHIFT = 40
_SHARPEN_AMOUNT = 1.0


@dataclass(frozen=True)
class BenchRow:
    """One timing measurement: a stage of one operation at one key size."""

    stage: str
    op: str
    key_bits: int
    width: int
    height: int
    seconds: float
    expansion: Optional[float] = None

    def __post_init__(self):
        if self.seconds < 0:
            raise ValueError("seconds must be non-negative")

    def csv_row(self) -> str:
        expansion = "" if self.expansion is None else f"{self.expansion:.6g}"
        return (
            f"{self.stage},{self.op},{self.key_bits},{self.width},"
            f"{self.height},{self.seconds:.6f},{expansion}"
        )


def rows_to_csv(rows: Sequence[BenchRow]) -> str:
    lines = [BENCH_CSV_HEADER]
    lines.extend(row.csv_row() for row in rows)
    return "\n".join(lines) + "\n"


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", encoding="ascii") as handle:
        handle.write(rows_to_csv(rows))


def _timed(func, repeats):
    """Return (median seconds, last result) over ``repeats`` runs."""
    times = []
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = func()
        times.append(time.perf_counter() - start)
    return median(times), result


def bench_crypto(
    key_bits_list: Sequence[int],
    image: PlainImage,
    precision: Optional[float] = None,
    repeats: int = 3,
    rng=None,
    workers: int = 1,
) -> list:
    """Time image encryption and decryption at each key size.

    Key generation happens outside the timed region.  Each measurement is
    the median of ``repeats`` runs.  Encrypt rows carry the expansion
    factor.  Raises RuntimeError if encryption time fails to grow faster
    than linearly in the key size, which would indicate a broken
    measurement environment.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    rows = []
    encrypt_medians = {}
    for bits in key_bits_list:
        keypair = generate_keypair(bits, rng=rng)
        enc_seconds, encrypted = _timed(
            lambda: encrypt_image(
                keypair.public, image, precision=precision, rng=rng, workers=workers
            ),
            repeats,
        )
        dec_seconds, _ = _timed(lambda: decrypt_image(keypair.private, encrypted), repeats)
        rows.append(
            BenchRow(
                "encrypt", "crypto", bits, image.width, image.height,
                enc_seconds, expansion_factor(encrypted),
            )
        )
        rows.append(
            BenchRow("decrypt", "crypto", bits, image.width, image.height, dec_seconds)
        )
        encrypt_medians[bits] = enc_seconds
    ordered = sorted(encrypt_medians.items())
    for (small_bits, small_time), (big_bits, big_time) in zip(ordered, ordered[1:]):
        if big_time <= small_time * (big_bits / small_bits):
            raise RuntimeError(
                f"encryption time grew sublinearly from {small_bits} to {big_bits} bits "
                f"({small_time:.4f}s vs {big_time:.4f}s); timings look unreliable"
            )
    return rows


def _server_timings(
    public_key, encrypted, binary_encrypted, histogram, shift, image, ops, repeats, rng, se
):
    """Median server-side seconds for each requested op name."""
    lowpass = Kernel.averaging(3)
    sobel_h1, sobel_h2 = GRADIENT_OPERATORS["sobel"]
    runners = {
        "negation": lambda: op_negate(public_key, encrypted, rng=rng),
        "brightness": lambda: op_brightness(public_key, encrypted, shift),
        "lowpass": lambda: op_convolve(public_key, encrypted, lowpass, rng=rng),
        "sobel": lambda: op_gradient(public_key, encrypted, sobel_h1, sobel_h2, rng=rng),
        "sharpen": lambda: op_sharpen(public_key, encrypted, _SHARPEN_AMOUNT),
        "equalization": lambda: op_equalize_transform(
            public_key, histogram, image.levels, image.width, image.height
        ),
    }
    timings = {}
    results = {}
    morph_seconds = None
    morph_result = None
    for op in ops:
        if op in ("erosion", "dilation"):
            if morph_seconds is None:
                morph_seconds, morph_result = _timed(
                    lambda: op_morph_sum(public_key, binary_encrypted, se, rng=rng), repeats
                )
            timings[op] = morph_seconds
            results[op] = morph_result
        else:
            timings[op], results[op] = _timed(runners[op], repeats)
    return timings, results


def bench_ops(
    key_bits: int,
    image: PlainImage,
    binary_image: PlainImage,
    ops: Sequence[str] = DEFAULT_OPS,
    repeats: int = 3,
    precision: Optional[float] = None,
    rng=None,
) -> list:
    """Time each operator's client preparation, server work, and finishing.

    Image encryption and decryption are not charged to any op; they are
    covered by ``bench_crypto``.  Erosion and dilation share one server
    measurement because the ciphertext-domain computation is identical.
    Raises RuntimeError if sharpening is requested but measures cheaper
    than the low-pass filter it contains, or if any op exceeds it by
    more than timing jitter can explain; either means the measurement
    environment is broken.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    unknown = [op for op in ops if op not in DEFAULT_OPS]
    if unknown:
        raise ValueError(f"unknown op names: {unknown}")
    keypair = generate_keypair(key_bits, rng=rng)
    public_key, private_key = keypair.public, keypair.private
    encrypted = encrypt_image(public_key, image, precision=precision, rng=rng)
    binary_encrypted = encrypt_image(public_key, binary_image, precision=precision, rng=rng)
    se = StructuringElement.full(3)

    pre_timings = {op: 0.0 for op in ops}
    histogram = None
    shift = None
    if "equalization" in ops:
        pre_timings["equalization"], histogram = _timed(
            lambda: encrypt_histogram(public_key, image, precision=precision, rng=rng),
            repeats,
        )
    if "brightness" in ops:
        pre_timings["brightness"], shift = _timed(
            lambda: encrypt_value(
                public_key, _BRIGHTNESS_SHIFT, precision=precision, rng=rng
            ),
            repeats,
        )

    server_timings, server_results = _server_timings(
        public_key, encrypted, binary_encrypted, histogram, shift, image, ops, repeats, rng, se
    )

    post_timings = {op: 0.0 for op in ops}
    if "sobel" in ops:
        gx_result, gy_result = server_results["sobel"]
        gx = decrypt_image_values(private_key, gx_result)
        gy = decrypt_image_values(private_key, gy_result)
        post_timings["sobel"], _ = _timed(lambda: finish_gradient(gx, gy), repeats)
    for mode in ("erosion", "dilation"):
        if mode in ops:
            counts = decrypt_image(private_key, server_results[mode], clamp=False)
            post_timings[mode], _ = _timed(lambda: finish_morphology(counts, se, mode), repeats)
    if "equalization" in ops:
        transform = [
            decrypt_value(private_key, entry) for entry in server_results["equalization"]
        ]
        post_timings["equalization"], _ = _timed(
            lambda: finish_equalization(image, transform), repeats
        )

    if "sharpen" in ops:
        # Sharpening strictly contains low-pass filtering, so it can never
        # legitimately measure cheaper.  Against the other ops it is the
        # costliest by construction, but the fused gradient pairs run within
        # a few percent of it at larger key sizes, so only a clear excess
        # (beyond timing jitter) indicates a broken measurement environment.
        if "lowpass" in ops and server_timings["sharpen"] < server_timings["lowpass"]:
            raise RuntimeError(
                f"sharpen ({server_timings['sharpen']:.4f}s) measured cheaper than "
                f"the low-pass filter it contains ({server_timings['lowpass']:.4f}s)"
            )
        costliest = max(ops, key=lambda op: server_timings[op])
        if server_timings["sharpen"] * 1.10 < server_timings[costliest]:
            raise RuntimeError(
                f"sharpen ({server_timings['sharpen']:.4f}s) should be the most "
                f"expensive server op but {costliest} took {server_timings[costliest]:.4f}s"
            )

    rows = []
    for op in ops:
        shape = binary_image if op in ("erosion", "dilation") else image
        for stage, timings in (
            ("pre", pre_timings), ("server", server_timings), ("post", post_timings),
        ):
            rows.append(
                BenchRow(stage, op, key_bits, shape.width, shape.height, timings[op])
            )
    return rows
