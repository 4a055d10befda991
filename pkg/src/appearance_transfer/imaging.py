"""Raster images, PNG I/O, masks, color conversion, resampling and histograms.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)`` holding float64
values in ``[0, 1]``; masks are boolean arrays of shape ``(H, W)`` with
``True`` marking foreground.  Values are quantized only at PNG boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
BT601 = np.array([0.299, 0.587, 0.114])

_COLOR_TYPES = {0: "grayscale", 2: "RGB", 3: "palette", 4: "grayscale+alpha", 6: "RGBA"}


class ImageFormatError(ValueError):
    """Raised when a PNG file has an unsupported bit depth or color type."""


def as_image(data, copy=False):
    """Validate and convert ``data`` to a float64 ``(H, W, 3)`` image."""
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.size and (img.min() < -1e-12 or img.max() > 1 + 1e-12):
        raise ValueError("image values must lie in [0, 1]")
    return np.clip(img, 0.0, 1.0)


def full_mask(image):
    return np.ones(image.shape[:2], dtype=bool)


def check_mask(image, mask):
    """Return ``mask`` as a boolean array, or a full mask when ``None``."""
    if mask is None:
        return full_mask(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {image.shape[:2]}")
    return mask


def _read_png_header(path):
    with open(path, "rb") as fh:
        head = fh.read(29)
    if len(head) < 29 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: not a PNG file")
    width, height, bit_depth, color_type = struct.unpack(">IIBB", head[16:26])
    return width, height, bit_depth, color_type


def _decode(path, allowed_types):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    _, _, bit_depth, color_type = _read_png_header(path)
    if bit_depth not in (8, 16):
        raise ImageFormatError(f"{path}: unsupported bit depth {bit_depth} (need 8 or 16)")
    if color_type not in allowed_types:
        name = _COLOR_TYPES.get(color_type, str(color_type))
        wanted = "/".join(_COLOR_TYPES[t] for t in allowed_types)
        raise ImageFormatError(f"{path}: unsupported color type {name} (need {wanted})")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"{path}: could not decode PNG data")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / scale


def load_png(path, return_mask=False):
    """Load an 8- or 16-bit RGB/RGBA PNG as a float image in ``[0, 1]``.

    With ``return_mask=True`` a ``(image, mask)`` tuple is returned; the mask
    is the alpha channel thresholded at 0.5, or ``None`` for RGB files.
    """
    data = _decode(path, (2, 6))
    image = np.ascontiguousarray(data[..., 2::-1])
    if not return_mask:
        return image
    mask = data[..., 3] >= 0.5 if data.shape[2] == 4 else None
    return image, mask


def save_png(image, path):
    """Write ``image`` as an 8-bit RGB PNG."""
    img = as_image(image)
    q = np.round(img * 255.0).astype(np.uint8)
    if not cv2.imwrite(str(path), q[..., ::-1]):
        raise OSError(f"failed to write {path}")


def load_mask(path):
    """Load a standalone mask PNG (grayscale, nonzero = foreground)."""
    data = _decode(path, (0, 2, 4, 6))
    if data.ndim == 3:
        data = data[..., :3].mean(axis=2) if data.shape[2] >= 3 else data[..., 0]
    return data >= 0.5


def save_mask(mask, path):
    """Write ``mask`` as 8-bit grayscale (0 background, 255 foreground)."""
    m = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    if not cv2.imwrite(str(path), m):
        raise OSError(f"failed to write {path}")


def _chroma(rgb):
    return rgb - rgb.mean(axis=-1, keepdims=True)


def chroma_key(image, key_color=(0.0, 1.0, 0.0), tolerance=0.15):
    """Foreground mask from a chroma-key backdrop.

    Luminance is projected out of both the pixel and the key (each channel
    minus the per-pixel mean) so that shading across the screen is
    tolerated.  Pixels within ``tolerance`` of the key are background.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    img = np.asarray(image, dtype=np.float64)
    key = _chroma(np.asarray(key_color, dtype=np.float64))
    dist = np.linalg.norm(_chroma(img) - key, axis=-1)
    return dist > tolerance


def cubic_kernel(x, a=-0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` gives Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resize_axis(img, n_out, axis):
    n_in = img.shape[axis]
    if n_in == n_out:
        return img
    # pixel-center alignment
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    out = None
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        w = cubic_kernel(frac - tap)
        shape = [1] * img.ndim
        shape[axis] = n_out
        term = np.take(img, idx, axis=axis) * w.reshape(shape)
        out = term if out is None else out + term
    return out


def resize_bicubic(image, new_width, new_height):
    """Catmull-Rom bicubic resampling with clamped edges, clipped to ``[0, 1]``."""
    if new_width < 1 or new_height < 1:
        raise ValueError("output dimensions must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    out = _resize_axis(img, int(new_height), 0)
    out = _resize_axis(out, int(new_width), 1)
    if out is img:
        return img.copy()
    return np.clip(out, 0.0, 1.0)


def rgb_to_y(image):
    """BT.601 luma of an RGB image (values in ``[0, 1]``)."""
    return np.asarray(image, dtype=np.float64) @ BT601


@dataclass
class Histogram:
    """Per-channel color histogram, ``bins`` has shape ``(3, n_bins)``."""

    bins: np.ndarray
    degenerate: bool = False

    @property
    def n_bins(self):
        return self.bins.shape[1]

    def normalize(self):
        totals = self.bins.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            return Histogram(np.zeros_like(self.bins), degenerate=True)
        return Histogram(self.bins / totals, self.degenerate)


def color_histogram(image, mask=None, n_bins=64):
    """Normalized per-channel histogram of the foreground pixels.

    Bin index is ``floor(value * n_bins)`` with 1.0 folded into the last bin.
    An empty mask yields an all-zero histogram flagged ``degenerate``.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    img = np.asarray(image, dtype=np.float64)
    mask = check_mask(img, mask)
    pixels = img[mask]
    if len(pixels) == 0:
        return Histogram(np.zeros((3, n_bins)), degenerate=True)
    idx = np.minimum(np.floor(pixels * n_bins).astype(np.int64), n_bins - 1)
    bins = np.stack([np.bincount(idx[:, c], minlength=n_bins) for c in range(3)]).astype(np.float64)
    return Histogram(bins).normalize()
