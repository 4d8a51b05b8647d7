"""Regenerate the bundled sample images (deterministic).

Run from the repository root after changing anything here:

    python3 scripts/generate_samples.py
"""

import pathlib
import random

import numpy as np

from cryptopix.image import PlainImage, render_pbm, render_pgm

SIZE = 64
OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "cryptopix" / "data"


def ramp() -> PlainImage:
    y, x = np.mgrid[0:SIZE, 0:SIZE]
    values = 2.0 * x + 1.2 * y + 40.0 * np.sin(x / 6.0) * np.cos(y / 9.0)
    lo, hi = values.min(), values.max()
    scaled = np.rint((values - lo) * (255.0 / (hi - lo))).astype(int)
    return PlainImage.from_array(scaled)


def blobs() -> PlainImage:
    rng = random.Random(2024)
    y, x = np.mgrid[0:SIZE, 0:SIZE]
    values = np.zeros((SIZE, SIZE))
    for _ in range(6):
        cx, cy = rng.uniform(8, 56), rng.uniform(8, 56)
        sigma = rng.uniform(4, 11)
        height = rng.uniform(0.4, 1.0)
        values += height * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
    scaled = np.rint(values * (255.0 / values.max())).astype(int)
    return PlainImage.from_array(scaled)


def checker() -> PlainImage:
    y, x = np.mgrid[0:SIZE, 0:SIZE]
    tiles = ((x // 8 + y // 8) % 2) * 160
    values = np.clip(tiles + x + y // 2, 0, 255).astype(int)
    return PlainImage.from_array(values)


def shapes() -> PlainImage:
    y, x = np.mgrid[0:SIZE, 0:SIZE]
    disk = (x - 20) ** 2 + (y - 22) ** 2 <= 13**2
    box = (x >= 34) & (x <= 55) & (y >= 36) & (y <= 52)
    ring = np.abs(np.hypot(x - 46, y - 16) - 8) <= 2
    bar = (x >= 6) & (x <= 9) & (y >= 40) & (y <= 60)
    values = (disk | box | ring | bar).astype(int)
    return PlainImage.from_array(values, levels=2)


def strokes() -> PlainImage:
    rng = random.Random(777)
    grid = np.zeros((SIZE, SIZE), dtype=int)
    for _ in range(9):
        x, y = rng.randrange(SIZE), rng.randrange(SIZE)
        dx, dy = rng.choice([(1, 0), (0, 1), (1, 1), (1, -1)])
        for _ in range(rng.randrange(12, 30)):
            grid[y % SIZE, x % SIZE] = 1
            grid[(y + 1) % SIZE, x % SIZE] = 1
            x, y = x + dx, y + dy
    for _ in range(40):
        grid[rng.randrange(SIZE), rng.randrange(SIZE)] = 1
    return PlainImage.from_array(grid, levels=2)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, build in [("ramp", ramp), ("blobs", blobs), ("checker", checker)]:
        (OUT / f"{name}.pgm").write_bytes(render_pgm(build()))
    for name, build in [("shapes", shapes), ("strokes", strokes)]:
        (OUT / f"{name}.pbm").write_bytes(render_pbm(build()))
    print(f"wrote samples to {OUT}")


if __name__ == "__main__":
    main()
