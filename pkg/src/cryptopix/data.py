"""Bundled sample images used by the test suite and for quick demos."""

from importlib import resources

from .image import PlainImage, parse_pbm, parse_pgm

GRAYSCALE_SAMPLES = ("ramp", "blobs", "checker")
BINARY_SAMPLES = ("shapes", "strokes")


def sample_names() -> list[str]:
    return list(GRAYSCALE_SAMPLES + BINARY_SAMPLES)


def load_sample(name: str) -> PlainImage:
    """Load a bundled 64x64 sample image by short name."""
    package = resources.files(__package__) / "data"
    if name in GRAYSCALE_SAMPLES:
        return parse_pgm((package / f"{name}.pgm").read_bytes())
    if name in BINARY_SAMPLES:
        return parse_pbm((package / f"{name}.pbm").read_bytes())
    raise KeyError(f"unknown sample {name!r}; available: {sample_names()}")


def grayscale_samples() -> list[PlainImage]:
    return [load_sample(name) for name in GRAYSCALE_SAMPLES]


def binary_samples() -> list[PlainImage]:
    return [load_sample(name) for name in BINARY_SAMPLES]
