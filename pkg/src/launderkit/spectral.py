"""Noise residuals, Fourier magnitude spectra and resampling-peak features.

Residuals are image minus a denoised copy of itself, computed on luminance.
Their centered magnitude spectra carry the fingerprints this toolkit feeds to
its scorers: periodic lattice peaks left by grid resampling, the share of
energy near DC, and overall spectral flatness.

Conventions fixed here:
  * forward DFT is unnormalized (numpy), so sum(residual^2) equals
    sum(mag^2) / (W*H);
  * no window is applied before the transform; residuals are mean-subtracted;
  * spectra are shifted so DC sits at (H//2, W//2);
  * neighborhood lookups near spectrum borders wrap around (the DFT is
    periodic).
"""

import functools
from dataclasses import dataclass

import numpy as np

from .image import LUMA_WEIGHTS, luminance_plane

PEAK_BACKGROUND_EPS = 1e-12
DEGENERATE_ENERGY_EPS = 1e-12
DEFAULT_FACTOR = 8

_PEAK_CORE_RADIUS = 1  # 3x3 peak neighborhood
_PEAK_RING_RADIUS = 5  # 11x11 window; annulus excludes the 3x3 core


@dataclass(frozen=True)
class Residual:
    """Zero-mean single-channel noise residual."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("residual must be a 2-D array")
        if not np.isfinite(arr).all():
            raise ValueError("residual must be finite")
        if abs(arr.mean()) > 1e-3:
            raise ValueError("residual mean exceeds 1e-3; subtract the mean")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class Spectrum:
    """Centered 2-D Fourier magnitude, optionally averaged over many residuals."""

    mag: np.ndarray
    count: int = 1

    def __post_init__(self):
        arr = np.asarray(self.mag, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("spectrum must be a 2-D array")
        if not np.isfinite(arr).all() or arr.min() < 0.0:
            raise ValueError("spectrum magnitudes must be finite and >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "mag", arr)

    @property
    def height(self):
        return self.mag.shape[0]

    @property
    def width(self):
        return self.mag.shape[1]

    @property
    def dc_bin(self):
        return (self.mag.shape[0] // 2, self.mag.shape[1] // 2)


@dataclass(frozen=True)
class PeakSite:
    k: int
    l: int
    peak_value: float
    background: float


@dataclass(frozen=True)
class PeakReport:
    """Lattice peak measurements at multiples of (W/factor, H/factor)."""

    factor: int
    peaks: tuple
    peak_strength: float


@dataclass(frozen=True)
class SpectralFeatures:
    """Scalar spectral statistics of one patch residual."""

    peak_strength: float
    low_freq_ratio: float
    flatness: float

    def as_array(self):
        return np.array(
            [self.peak_strength, self.low_freq_ratio, self.flatness],
            dtype=np.float64,
        )


FEATURE_NAMES = ("peak_strength", "low_freq_ratio", "flatness")


# ---------------------------------------------------------------------------
# Denoisers


def _median3x3(a):
    """3x3 median filter over the last two axes, reflect boundary.

    Uses the 19-exchange median-of-9 sorting network, which is several times
    faster than a generic median over the stacked neighborhood.
    """
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(a, pad, mode="reflect")
    h, w = a.shape[-2], a.shape[-1]
    v = [
        p[..., dy : dy + h, dx : dx + w].copy()
        for dy in range(3)
        for dx in range(3)
    ]

    def s(i, j):
        lo = np.minimum(v[i], v[j])
        np.maximum(v[i], v[j], out=v[j])
        v[i] = lo

    s(1, 2); s(4, 5); s(7, 8)
    s(0, 1); s(3, 4); s(6, 7)
    s(1, 2); s(4, 5); s(7, 8)
    s(0, 3); s(5, 8); s(4, 7)
    s(3, 6); s(1, 4); s(2, 5)
    s(4, 7); s(2, 4); s(4, 6)
    s(2, 4)
    return v[4]


def _gaussian_kernel(sigma):
    radius = max(1, int(4.0 * sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(a, kernel, axis):
    r = len(kernel) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(p, len(kernel), axis=axis)
    return np.einsum("...k,k->...", win, kernel)


def _gaussian_blur(a, sigma):
    k = _gaussian_kernel(sigma)
    return _convolve_axis(_convolve_axis(a, k, a.ndim - 2), k, a.ndim - 1)


def denoise(a, denoiser="median3", sigma=1.0):
    """Apply the configured denoiser over the last two axes of a float array."""
    if denoiser == "median3":
        return _median3x3(a)
    if denoiser == "gaussian":
        if sigma <= 0:
            raise ValueError("gaussian sigma must be > 0")
        return _gaussian_blur(a, sigma)
    raise ValueError(f"unknown denoiser {denoiser!r} (use 'median3' or 'gaussian')")


# ---------------------------------------------------------------------------
# Residuals and spectra


def _residual_planes(lum, denoiser, sigma):
    res = lum - denoise(lum, denoiser, sigma)
    return res - res.mean(axis=(-2, -1), keepdims=True)


def extract_residual(img, denoiser="median3", sigma=1.0):
    """Luminance minus its denoised copy, mean-subtracted."""
    if img.width < 8 or img.height < 8:
        raise ValueError(f"image too small for residual: {img.width}x{img.height}")
    lum = luminance_plane(img)
    return Residual(_residual_planes(lum, denoiser, sigma))


def magnitude_spectrum(res):
    """Centered magnitude of the unnormalized 2-D DFT of one residual."""
    if res.width < 8 or res.height < 8:
        raise ValueError("residual dimensions must be >= 8")
    mag = np.fft.fftshift(np.abs(np.fft.fft2(res.data)))
    return Spectrum(mag, count=1)


def average_spectrum(residuals):
    """Element-wise mean of individual magnitude spectra, in stream order."""
    total = None
    count = 0
    for res in residuals:
        spec = magnitude_spectrum(res)
        if total is None:
            total = spec.mag.copy()
        else:
            if spec.mag.shape != total.shape:
                raise ValueError(
                    f"residual dimensions differ: {spec.mag.shape} vs {total.shape}"
                )
            total += spec.mag
        count += 1
    if count == 0:
        raise ValueError("at least one residual required")
    return Spectrum(total / count, count=count)


# ---------------------------------------------------------------------------
# Resampling peaks


@functools.lru_cache(maxsize=32)
def _lattice_layout(h, w, factor):
    """Unique lattice sites and flat wrap-around neighborhood indices."""
    cy, cx = h // 2, w // 2
    half = factor // 2
    sites = []
    seen = set()
    for l in range(-half, half + 1):
        for k in range(-half, half + 1):
            if k == 0 and l == 0:
                continue
            sy = (cy + (l * h) // factor) % h
            sx = (cx + (k * w) // factor) % w
            if (sy, sx) in seen:
                continue
            seen.add((sy, sx))
            sites.append((k, l, sy, sx))

    core_offsets = [
        (dy, dx)
        for dy in range(-_PEAK_CORE_RADIUS, _PEAK_CORE_RADIUS + 1)
        for dx in range(-_PEAK_CORE_RADIUS, _PEAK_CORE_RADIUS + 1)
    ]
    ring_offsets = [
        (dy, dx)
        for dy in range(-_PEAK_RING_RADIUS, _PEAK_RING_RADIUS + 1)
        for dx in range(-_PEAK_RING_RADIUS, _PEAK_RING_RADIUS + 1)
        if max(abs(dy), abs(dx)) > _PEAK_CORE_RADIUS
    ]

    def flat(site_list, offsets):
        idx = np.empty((len(site_list), len(offsets)), dtype=np.int64)
        for i, (_, _, sy, sx) in enumerate(site_list):
            for j, (dy, dx) in enumerate(offsets):
                idx[i, j] = ((sy + dy) % h) * w + ((sx + dx) % w)
        return idx

    kl = tuple((k, l) for k, l, _, _ in sites)
    return kl, flat(sites, core_offsets), flat(sites, ring_offsets)


def _check_peak_dims(h, w, factor):
    if factor < 2:
        raise ValueError("factor must be >= 2")
    if h % factor or w % factor:
        raise ValueError(
            f"dimensions not divisible by factor: {w}x{h} vs factor {factor}"
        )


def _peak_measurements(mag_flat, core_idx, ring_idx):
    values = mag_flat[..., core_idx].max(axis=-1)
    background = np.median(mag_flat[..., ring_idx], axis=-1)
    ratios = values / np.maximum(background, PEAK_BACKGROUND_EPS)
    return values, background, ratios


def detect_peaks(spec, factor=DEFAULT_FACTOR):
    """Measure lattice peaks against their local background.

    Each site at (center + k*W/factor, center + l*H/factor) contributes the
    ratio of its 3x3 maximum to the median of the surrounding 11x11 annulus;
    peak_strength is the mean ratio, ~1 for a peak-free spectrum.
    """
    h, w = spec.mag.shape
    _check_peak_dims(h, w, factor)
    kl, core_idx, ring_idx = _lattice_layout(h, w, factor)
    values, background, ratios = _peak_measurements(spec.mag.ravel(), core_idx, ring_idx)
    peaks = tuple(
        PeakSite(k, l, float(v), float(b))
        for (k, l), v, b in zip(kl, values, background)
    )
    return PeakReport(factor=factor, peaks=peaks, peak_strength=float(ratios.mean()))


# ---------------------------------------------------------------------------
# Scalar features


@functools.lru_cache(maxsize=32)
def _band_masks(h, w):
    cy, cx = h // 2, w // 2
    dy = np.arange(h)[:, None] - cy
    dx = np.arange(w)[None, :] - cx
    r = np.hypot(dy, dx)
    non_dc = np.ones((h, w), dtype=bool)
    non_dc[cy, cx] = False
    low = (r <= min(h, w) / 8.0) & non_dc
    for m in (non_dc, low):
        m.flags.writeable = False
    return non_dc, low


def _features_from_mags(mags, factor):
    """(B, H, W) magnitude stack -> (B, 3) float64 feature rows."""
    b, h, w = mags.shape
    _check_peak_dims(h, w, factor)
    non_dc, low = _band_masks(h, w)

    energy = (mags * mags).astype(np.float64, copy=False)
    e_total = energy[:, non_dc].sum(axis=1, dtype=np.float64)
    e_low = energy[:, low].sum(axis=1, dtype=np.float64)

    _, _, ratios = _peak_measurements(
        mags.reshape(b, h * w), *_lattice_layout(h, w, factor)[1:]
    )
    peak = ratios.mean(axis=1, dtype=np.float64)

    v = mags[:, non_dc]
    with np.errstate(divide="ignore"):
        gm = np.exp(np.log(v).mean(axis=1, dtype=np.float64))
    am = v.mean(axis=1, dtype=np.float64)

    degenerate = e_total < DEGENERATE_ENERGY_EPS
    safe_total = np.where(degenerate, 1.0, e_total)
    safe_am = np.where(am > 0.0, am, 1.0)

    out = np.column_stack(
        [
            np.where(degenerate, 1.0, peak),
            np.where(degenerate, 0.0, e_low / safe_total),
            np.where(degenerate, 0.0, gm / safe_am),
        ]
    )
    return out


def feature_matrix(patches, denoiser="median3", sigma=1.0, factor=DEFAULT_FACTOR):
    """Spectral feature rows (peak_strength, low_freq_ratio, flatness).

    Accepts a sequence of Patch objects of identical size; luminance
    conversion happens here, so color patches are fine.  The batch runs in
    float32 (feature-level precision), returning float64 rows.
    """
    if not patches:
        raise ValueError("at least one patch required")
    shapes = {(p.pixels.height, p.pixels.width) for p in patches}
    if len(shapes) != 1:
        raise ValueError("patches must share dimensions")
    (h, w) = shapes.pop()
    if h < 8 or w < 8:
        raise ValueError("patches too small for spectral features")
    _check_peak_dims(h, w, factor)
    stack = np.stack([p.pixels.pixels for p in patches]).astype(np.float32)
    if stack.shape[-1] == 3:
        lum = stack @ np.asarray(LUMA_WEIGHTS, dtype=np.float32)
    else:
        lum = stack[..., 0]
    res = _residual_planes(lum, denoiser, sigma)
    mags = np.fft.fftshift(np.abs(np.fft.fft2(res, axes=(-2, -1))), axes=(-2, -1))
    return _features_from_mags(mags, factor)


def spectral_features(patch, denoiser="median3", sigma=1.0, factor=DEFAULT_FACTOR):
    """Features of a single patch; see feature_matrix."""
    row = feature_matrix([patch], denoiser=denoiser, sigma=sigma, factor=factor)[0]
    return SpectralFeatures(float(row[0]), float(row[1]), float(row[2]))


# ---------------------------------------------------------------------------
# Rendering


def render_spectrum(spec):
    """log(1 + mag) scaled to an 8-bit grayscale plane for display."""
    disp = np.log1p(spec.mag)
    peak = disp.max()
    if peak <= 0.0:
        return np.zeros(disp.shape, dtype=np.uint8)
    return np.rint(disp / peak * 255.0).astype(np.uint8)
