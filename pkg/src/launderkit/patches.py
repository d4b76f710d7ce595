"""Random patch extraction and top-fraction score aggregation.

A query image is summarized by scoring many small patches drawn at uniform
random positions and averaging the largest scores.  Sampling is driven by a
seeded PCG64 generator so identical inputs always produce identical patches.
"""

from dataclasses import dataclass

import numpy as np

from .image import ImageBuffer

DEFAULT_N_PATCHES = 800
DEFAULT_PATCH_SIZE = 96
DEFAULT_TOP_FRACTION = 0.75


@dataclass(frozen=True)
class SamplerConfig:
    n_patches: int = DEFAULT_N_PATCHES
    patch_size: int = DEFAULT_PATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.n_patches < 1:
            raise ValueError("n_patches must be >= 1")
        if self.patch_size < 8:
            raise ValueError("patch_size must be >= 8")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Patch:
    """A square crop and its top-left (x, y) position in the source image."""

    pixels: ImageBuffer
    origin: tuple


def sample_patches(img, cfg):
    """Draw cfg.n_patches square color patches at uniform random origins.

    Origins are drawn with replacement from the grid of valid top-left
    positions.  Deterministic in (img, cfg).
    """
    if img.channels != 3:
        raise ValueError("color image required")
    p = cfg.patch_size
    if img.width < p or img.height < p:
        raise ValueError(
            f"image too small: {img.width}x{img.height} < patch size {p}"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    origins = rng.integers(
        0, [img.width - p + 1, img.height - p + 1], size=(cfg.n_patches, 2)
    )
    data = img.pixels
    patches = []
    for x, y in origins:
        x = int(x)
        y = int(y)
        patches.append(Patch(ImageBuffer(data[y : y + p, x : x + p, :]), (x, y)))
    return patches


def top_m(n_scores, top_fraction):
    """Number of scores kept by the aggregation: max(1, round-half-up)."""
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    return max(1, int(np.floor(top_fraction * n_scores + 0.5)))


def aggregate_top_fraction(scores, top_fraction=DEFAULT_TOP_FRACTION):
    """Image score: arithmetic mean of the M largest patch scores.

    M = max(1, round(top_fraction * len(scores))).  Order independent.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if not np.isfinite(arr).all():
        raise ValueError("scores must be finite")
    m = top_m(arr.size, top_fraction)
    if m == arr.size:
        return float(arr.mean())
    top = np.partition(arr, arr.size - m)[arr.size - m :]
    return float(top.mean())
