"""Image buffers, color conversion, dataset manifests and file I/O.

Computation throughout the package happens on a floating view in [0, 1];
storage formats and the scorer wire protocol use 8-bit samples obtained by
rounding that view.
"""

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

# BT.601 luma weights, applied to the floating view.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_SUPPORTED_FORMATS = ("PNG", "PPM", "JPEG")
_HIGH_DEPTH_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N", "F")


class ClassLabel(enum.Enum):
    """The three classes an analyzed image can belong to."""

    REAL = "real"
    FULLY_SYNTHETIC = "fully_synthetic"
    LAUNDERED = "laundered"

    @classmethod
    def parse(cls, text):
        """Strict parse of a serialized label; raises DataError otherwise."""
        try:
            return cls(text)
        except ValueError:
            raise DataError(f"unknown label {text!r}") from None

    def __str__(self):
        return self.value


SYNTHETIC_LABELS = frozenset({ClassLabel.FULLY_SYNTHETIC, ClassLabel.LAUNDERED})


class ImageBuffer:
    """Decoded raster image.

    The authoritative payload is a float64 array in [0, 1] with shape
    (height, width, channels), channels in {1, 3}.  The 8-bit storage view is
    derived by rounding; a float -> byte -> float round trip moves any sample
    by at most 1/510.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError("image data must be HxWx1 or HxWx3")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("zero-dimension image")
        if not np.isfinite(arr).all():
            raise ValueError("image data must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image data must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_bytes(cls, data):
        """Build from 8-bit samples, (H, W) or (H, W, C) uint8."""
        arr = np.asarray(data)
        if arr.dtype != np.uint8:
            raise ValueError("byte data must be uint8")
        return cls(arr.astype(np.float64) / 255.0)

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def pixels(self):
        """Read-only float view, shape (H, W, C), values in [0, 1]."""
        return self._data

    @property
    def plane(self):
        """Single-channel float view, shape (H, W); requires channels == 1."""
        if self.channels != 1:
            raise ValueError("plane view requires a single-channel image")
        return self._data[:, :, 0]

    def to_bytes(self):
        """8-bit storage view, shape (H, W, C) uint8, row-major interleaved."""
        return np.rint(self._data * 255.0).astype(np.uint8)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(
            np.array_equal(self._data, other._data)
        )

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}x{self.channels})"


def to_luminance(img):
    """BT.601 luminance of the floating view; single-channel input passes through."""
    if img.channels == 1:
        return img
    r, g, b = LUMA_WEIGHTS
    y = r * img.pixels[:, :, 0] + g * img.pixels[:, :, 1] + b * img.pixels[:, :, 2]
    return ImageBuffer(y)


def luminance_plane(img):
    """Luminance as a bare (H, W) float array."""
    return to_luminance(img).plane


def _pil_to_buffer(im):
    if im.mode in _HIGH_DEPTH_MODES:
        raise DataError(f"unsupported bit depth (mode {im.mode})")
    if im.mode in ("1", "L;1"):
        im = im.convert("L")
    elif im.mode == "LA":
        im = im.convert("L")
    elif im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    arr = np.asarray(im, dtype=np.uint8)
    if arr.size == 0:
        raise DataError("zero-dimension image")
    return ImageBuffer.from_bytes(arr)


def load_image(path):
    """Decode a PNG, binary PPM/PGM or baseline JPEG file.

    Grayscale files yield channels=1, color files channels=3.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    try:
        with Image.open(p) as im:
            fmt = im.format
            if fmt not in _SUPPORTED_FORMATS:
                raise DataError(f"unsupported format {fmt!r}: {p}")
            im.load()
            return _pil_to_buffer(im)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode {p}: {exc}") from exc


def decode_image_bytes(blob):
    """Decode an in-memory PNG/PPM/JPEG byte blob."""
    try:
        with Image.open(io.BytesIO(blob)) as im:
            if im.format not in _SUPPORTED_FORMATS:
                raise DataError(f"unsupported format {im.format!r}")
            im.load()
            return _pil_to_buffer(im)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode image bytes: {exc}") from exc


def _buffer_to_pil(img):
    data = img.to_bytes()
    if img.channels == 1:
        return Image.fromarray(data[:, :, 0], mode="L")
    return Image.fromarray(data, mode="RGB")


def save_image(img, path):
    """Write the 8-bit view as PNG (.png) or binary PPM/PGM (.ppm/.pgm)."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".png":
        fmt = "PNG"
    elif suffix in (".ppm", ".pgm"):
        fmt = "PPM"
    else:
        raise DataError(f"unsupported output format {suffix!r} (use .png or .ppm)")
    p.parent.mkdir(parents=True, exist_ok=True)
    _buffer_to_pil(img).save(p, format=fmt)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: ClassLabel
    group: str


@dataclass(frozen=True)
class DatasetManifest:
    """Parsed dataset manifest; relative entry paths resolve against root."""

    entries: tuple
    root: Path

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def by_label(self, label):
        return [e for e in self.entries if e.label == label]


MANIFEST_HEADER = ["path", "label", "group"]


def load_manifest(path):
    """Parse a CSV manifest with header path,label,group; strict on errors."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    entries = []
    seen = set()
    with open(p, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"missing header in manifest {p}") from None
        if header != MANIFEST_HEADER:
            raise DataError(
                f"missing or malformed header in manifest {p}: expected "
                f"{','.join(MANIFEST_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{p}:{lineno}: expected 3 fields, got {len(row)}")
            entry_path, label_text, group = row
            if entry_path in seen:
                raise DataError(f"{p}:{lineno}: duplicate path {entry_path!r}")
            seen.add(entry_path)
            entries.append(
                ManifestEntry(entry_path, ClassLabel.parse(label_text), group)
            )
    if not entries:
        raise DataError(f"manifest {p} has no entries")
    return DatasetManifest(tuple(entries), p.resolve().parent)


def write_manifest(entries, path):
    """Write manifest rows (path, label, group) with the canonical header."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow([entry.path, entry.label.value, entry.group])
