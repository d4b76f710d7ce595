"""Laundering proxy, three-class fixture synthesis and post-processing ops.

The proxy models the spatial round trip of a generative autoencoder as a
down/up-sampling chain: downsample by an integer factor, then interpolate
back to the original size.  The upsampling grid is deliberately not
phase-perfect (see PROXY_PHASE_WOBBLE), which is what stamps measurable
lattice peaks into a noise residual's spectrum the way decoder upsampling
layers do.

Fixtures are synthetic textures, not photographs: a 1/f-shaped base over a
smooth illumination gradient plus class-specific noise, quantized to 8 bits
like any camera file.  They exist to exercise the pipeline end to end without
external datasets and make no claim of reproducing any particular generator's
artifacts.
"""

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .image import ClassLabel, ImageBuffer, ManifestEntry, save_image, write_manifest

DEFAULT_PROXY_FACTOR = 8

# Per-image base statistics for generated fixtures.  The contrast range is
# deliberately narrow: the class signal rides on the texture-to-noise ratio,
# so large per-image contrast swings would drown it.  The illumination ramp
# gives every image a smooth gradient, the field the proxy's grid imprint
# attaches to.
_FIXTURE_MEAN_RANGE = (0.42, 0.58)
_FIXTURE_CONTRAST_RANGE = (0.05, 0.07)
_FIXTURE_SLOPE_RANGE = (0.25, 0.40)

_PRISTINE_STREAM = 0
_SYNTHETIC_STREAM = 1
_GRAIN_STREAM = 2

# Generator decoders synthesize their own fine grain on top of the resampled
# content; without it a resampling chain alone would leave laundered copies
# overly smooth.
_DECODER_GRAIN_SIGMA = 0.012


# ---------------------------------------------------------------------------
# Resampling primitives (float planes, shape (H, W, C))


def _resize_axis_bilinear(arr, out_size, axis):
    in_size = arr.shape[axis]
    scale = in_size / out_size
    # Triangle kernel, widened to the scale when reducing so downsamples are
    # antialiased; at scale <= 1 this is the classic two-tap interpolation.
    support = max(1.0, scale)
    centers = (np.arange(out_size) + 0.5) * scale - 0.5
    radius = int(np.ceil(support))
    offsets = np.arange(-radius, radius + 1)
    taps = np.floor(centers)[:, None] + offsets[None, :]
    weights = np.maximum(0.0, 1.0 - np.abs(taps - centers[:, None]) / support)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(taps.astype(np.int64), 0, in_size - 1)

    moved = np.moveaxis(arr, axis, 0)
    gathered = moved[idx]  # (out_size, taps, ...)
    w = weights.reshape(weights.shape + (1,) * (moved.ndim - 1))
    return np.moveaxis((gathered * w).sum(axis=1), 0, axis)


def resize_bilinear(arr, out_h, out_w):
    """Separable bilinear resize with half-pixel centers and edge clamp."""
    if out_h < 1 or out_w < 1:
        raise ValueError("resulting dimension 0")
    return _resize_axis_bilinear(_resize_axis_bilinear(arr, out_h, 0), out_w, 1)


def _resize_axis_nearest(arr, out_size, axis):
    in_size = arr.shape[axis]
    pos = (np.arange(out_size) + 0.5) * (in_size / out_size)
    idx = np.clip(np.floor(pos).astype(np.int64), 0, in_size - 1)
    return np.take(arr, idx, axis=axis)


# Sub-pixel sampling offset per output phase for the proxy's upsampler, in
# units of the coarse grid.  Ideal interpolation grids are phase-uniform and
# therefore cancel exactly at the lattice frequencies; decoder upsampling
# layers do not, and this wobble models that imperfection.  Weights still sum
# to one at every phase, so constant images pass through unchanged.
PROXY_PHASE_WOBBLE = 0.45

# Harmonic content of the wobble pattern (cycles per grid period, weight).
# Mid harmonics keep the imprint away from the image's low-frequency band
# while staying below the frequencies compression quantizes away hardest.
_WOBBLE_HARMONICS = ((2, 1.0), (3, 1.0), (1, 0.35))


def _wobble_offsets(factor, amplitude):
    p = np.arange(factor)
    e = np.zeros(factor)
    for k, weight in _WOBBLE_HARMONICS:
        if 1 <= k <= factor // 2:
            e += weight * np.cos(2.0 * np.pi * k * p / factor)
    peak = np.abs(e).max()
    if peak > 0.0:
        e *= amplitude / peak
    return e


def _upsample_axis_tent_wobble(arr, factor, axis, amplitude):
    in_size = arr.shape[axis]
    out_size = in_size * factor
    x = np.arange(out_size)
    delta = _wobble_offsets(factor, amplitude)[x % factor]
    pos = (x + 0.5) / factor - 0.5 + delta
    lo = np.floor(pos).astype(np.int64)
    t = pos - lo
    lo0 = np.clip(lo, 0, in_size - 1)
    lo1 = np.clip(lo + 1, 0, in_size - 1)
    moved = np.moveaxis(arr, axis, 0)
    w = t.reshape((out_size,) + (1,) * (moved.ndim - 1))
    a = moved[lo0]
    out = a + w * (moved[lo1] - a)  # lerp form keeps constants exact
    return np.moveaxis(out, 0, axis)


def resize_nearest(arr, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ValueError("resulting dimension 0")
    return _resize_axis_nearest(_resize_axis_nearest(arr, out_h, 0), out_w, 1)


def _box_downsample(arr, factor):
    h, w, c = arr.shape
    return arr.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# Laundering proxy


def launder_proxy(img, factor=DEFAULT_PROXY_FACTOR, down_filter="bilinear",
                  up_filter="bilinear"):
    """Down/up-sampling stand-in for an autoencoder round trip.

    The bilinear upsampler carries a small fixed per-phase sampling wobble
    (see PROXY_PHASE_WOBBLE): a phase-perfect tent kernel cancels exactly at
    the grid frequencies and would leave no measurable trace there, whereas
    real decoder grids are not phase-perfect.  Constant images pass through
    unchanged (interpolation weights sum to one at every phase).

    Dimensions must be divisible by factor so the sampling grid aligns
    exactly; factor 1 is the identity.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if img.width % factor or img.height % factor:
        raise ValueError(
            f"dimensions not divisible by factor: {img.width}x{img.height} "
            f"vs factor {factor}"
        )
    if factor == 1:
        return img
    arr = img.pixels
    small_h, small_w = img.height // factor, img.width // factor
    if down_filter == "box":
        small = _box_downsample(arr, factor)
    elif down_filter == "bilinear":
        small = resize_bilinear(arr, small_h, small_w)
    else:
        raise ValueError(f"unknown down_filter {down_filter!r}")
    if up_filter == "bilinear":
        out = _upsample_axis_tent_wobble(small, factor, 0, PROXY_PHASE_WOBBLE)
        out = _upsample_axis_tent_wobble(out, factor, 1, PROXY_PHASE_WOBBLE)
    elif up_filter == "nearest":
        out = resize_nearest(small, img.height, img.width)
    else:
        raise ValueError(f"unknown up_filter {up_filter!r}")
    return ImageBuffer(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Fixture synthesis


@dataclass(frozen=True)
class FixtureConfig:
    count_per_class: int
    size: int = 256
    seed: int = 0
    sensor_noise_sigma: float = 0.02
    synth_residual_sigma: float = 0.03

    def __post_init__(self):
        if self.count_per_class < 1:
            raise ValueError("count_per_class must be >= 1")
        if self.size % DEFAULT_PROXY_FACTOR:
            raise ValueError(f"size must be divisible by {DEFAULT_PROXY_FACTOR}")


def _fixture_rng(cfg, stream, index):
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.PCG64(ss))


# Spatial frequencies below this (cycles/px) are left to the illumination
# field; keeping them out of the texture keeps the texture gradient free of
# near-DC content.
_TEXTURE_LOW_CUT = 0.03


def _pink_base(rng, size):
    """Unit-variance texture with a 1/f amplitude spectrum, high-passed at
    _TEXTURE_LOW_CUT."""
    white = rng.standard_normal((size, size))
    f = np.fft.fft2(white)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    f /= radius
    f[radius < _TEXTURE_LOW_CUT] = 0.0
    f[0, 0] = 0.0
    base = np.fft.ifft2(f).real
    return base / max(base.std(), 1e-12)


def _demosaic_noise(rng, size, sigma):
    """Sensor-like noise: white noise through a short row-interpolation
    kernel, the correlation a demosaicking stage leaves, rescaled to sigma."""
    kernel = np.array([0.25, 0.5, 0.25])
    noise = rng.standard_normal((size, size))
    p = np.pad(noise, ((0, 0), (1, 1)), mode="wrap")
    win = np.lib.stride_tricks.sliding_window_view(p, 3, axis=1)
    noise = np.einsum("...k,k->...", win, kernel)
    return noise * (sigma / noise.std())


def _textured_image(rng, size, noise):
    base = _pink_base(rng, size)
    mean = rng.uniform(*_FIXTURE_MEAN_RANGE)
    contrast = rng.uniform(*_FIXTURE_CONTRAST_RANGE)
    slope_x = rng.uniform(*_FIXTURE_SLOPE_RANGE) * (1.0 if rng.random() < 0.5 else -1.0)
    slope_y = rng.uniform(*_FIXTURE_SLOPE_RANGE) * (1.0 if rng.random() < 0.5 else -1.0)
    axis = (np.arange(size) + 0.5) / size - 0.5
    illumination = slope_x * axis[None, :] + slope_y * axis[:, None]
    plane = np.clip(mean + illumination + contrast * base + noise, 0.0, 1.0)
    return ImageBuffer(np.repeat(plane[:, :, None], 3, axis=2))


def gen_pristine(cfg, index):
    """Camera-like fixture: 1/f texture plus correlated sensor noise."""
    rng = _fixture_rng(cfg, _PRISTINE_STREAM, index)
    noise = _demosaic_noise(rng, cfg.size, cfg.sensor_noise_sigma)
    return _textured_image(rng, cfg.size, noise)


def gen_laundered(cfg, index):
    """The pristine fixture of the same index pushed through the proxy, plus
    the decoder's synthesized grain."""
    out = launder_proxy(gen_pristine(cfg, index), factor=DEFAULT_PROXY_FACTOR)
    rng = _fixture_rng(cfg, _GRAIN_STREAM, index)
    grain = rng.standard_normal((cfg.size, cfg.size)) * _DECODER_GRAIN_SIGMA
    plane = np.clip(out.pixels[:, :, 0] + grain, 0.0, 1.0)
    return ImageBuffer(np.repeat(plane[:, :, None], 3, axis=2))


def gen_fully_synthetic(cfg, index):
    """Generator-like fixture: independent 1/f texture plus a stronger
    unstructured white residual and no resampling stage."""
    rng = _fixture_rng(cfg, _SYNTHETIC_STREAM, index)
    noise = rng.standard_normal((cfg.size, cfg.size)) * cfg.synth_residual_sigma
    return _textured_image(rng, cfg.size, noise)


_FIXTURE_GENERATORS = {
    ClassLabel.REAL: gen_pristine,
    ClassLabel.FULLY_SYNTHETIC: gen_fully_synthetic,
    ClassLabel.LAUNDERED: gen_laundered,
}

FIXTURE_GROUP = "proxy"


def write_fixture_tree(cfg, out_dir):
    """Write <out>/<class>/<index>.png per class plus manifest.csv.

    Returns the manifest path.  Deterministic in cfg.
    """
    out = Path(out_dir)
    entries = []
    digits = max(4, len(str(cfg.count_per_class - 1)))
    for label in (ClassLabel.REAL, ClassLabel.FULLY_SYNTHETIC, ClassLabel.LAUNDERED):
        gen = _FIXTURE_GENERATORS[label]
        for index in range(cfg.count_per_class):
            rel = f"{label.value}/{index:0{digits}d}.png"
            save_image(gen(cfg, index), out / rel)
            entries.append(ManifestEntry(rel, label, FIXTURE_GROUP))
    manifest_path = out / "manifest.csv"
    write_manifest(entries, manifest_path)
    return manifest_path


# ---------------------------------------------------------------------------
# Post-processing suite


@dataclass(frozen=True)
class PostProcOp:
    """One of: jpeg(quality), resize(scale), down_up(factor)."""

    kind: str
    quality: int = 0
    scale: float = 0.0
    factor: int = 0

    def __post_init__(self):
        if self.kind == "jpeg":
            if not 1 <= self.quality <= 100:
                raise ValueError("jpeg quality must lie in [1, 100]")
        elif self.kind == "resize":
            if not 0.0 < self.scale <= 8.0:
                raise ValueError("resize scale must lie in (0, 8]")
        elif self.kind == "down_up":
            if self.factor < 2:
                raise ValueError("down_up factor must be >= 2")
        else:
            raise ValueError(f"unknown post-processing kind {self.kind!r}")

    @property
    def token(self):
        if self.kind == "jpeg":
            return f"jpeg{self.quality}"
        if self.kind == "resize":
            return f"resize{self.scale:g}"
        return f"downup{self.factor}"


_POSTPROC_PATTERN = re.compile(
    r"^(?:jpeg(?P<quality>\d{1,3})|resize(?P<scale>\d+(?:\.\d+)?)|downup(?P<factor>\d+))$"
)


def parse_postproc(token):
    """Parse CLI tokens like jpeg70, resize0.5 or downup4."""
    m = _POSTPROC_PATTERN.match(token.strip())
    if not m:
        raise DataError(f"unknown post-processing op {token!r}")
    try:
        if m.group("quality") is not None:
            return PostProcOp("jpeg", quality=int(m.group("quality")))
        if m.group("scale") is not None:
            return PostProcOp("resize", scale=float(m.group("scale")))
        return PostProcOp("down_up", factor=int(m.group("factor")))
    except ValueError as exc:
        raise DataError(f"invalid post-processing op {token!r}: {exc}") from exc


def _jpeg_cycle(img, quality):
    data = img.to_bytes()
    if img.channels == 1:
        pil = Image.fromarray(data[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(data, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=quality, subsampling=2)
    buf.seek(0)
    with Image.open(buf) as decoded:
        decoded.load()
        out = np.asarray(decoded.convert(pil.mode), dtype=np.uint8)
    return ImageBuffer.from_bytes(out)


def apply_postproc(img, op):
    """Apply one post-processing operation, clamping back into [0, 1]."""
    if op.kind == "jpeg":
        return _jpeg_cycle(img, op.quality)
    if op.kind == "resize":
        out_h = int(round(op.scale * img.height))
        out_w = int(round(op.scale * img.width))
        if out_h < 1 or out_w < 1:
            raise ValueError("resulting dimension 0")
        out = resize_bilinear(img.pixels, out_h, out_w)
        return ImageBuffer(np.clip(out, 0.0, 1.0))
    small_h = max(1, int(round(img.height / op.factor)))
    small_w = max(1, int(round(img.width / op.factor)))
    small = resize_bilinear(img.pixels, small_h, small_w)
    out = resize_bilinear(small, img.height, img.width)
    return ImageBuffer(np.clip(out, 0.0, 1.0))
