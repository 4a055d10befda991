"""Couple identification: pair each low-res view with its most similar still.

Views are compared through their partial texture maps (UV-space unwraps of
what each camera sees), scored with SSIM on luma.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import load_png, resize_bicubic, rgb_to_y

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
# texels darker than half a quantization step count as black
BLACK_LEVEL = 0.5 / 255.0


class PairingError(RuntimeError):
    pass


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _as_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return rgb_to_y(img)
    if img.ndim != 2:
        raise ValueError(f"expected an image or luma raster, got shape {img.shape}")
    return img


def _filter_valid(x, w):
    # separable correlation, cropped to the fully-overlapping region
    half = len(w) // 2
    y = correlate1d(correlate1d(x, w, axis=0, mode="nearest"), w, axis=1, mode="nearest")
    return y[half : x.shape[0] - half, half : x.shape[1] - half]


def ssim_map(a, b, data_range=1.0):
    """Local SSIM values over every fully-contained 11x11 Gaussian window."""
    a, b = _as_luma(a), _as_luma(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: images must be at least {SSIM_WINDOW} pixels on each side")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = gaussian_window()
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b):
    """Mean SSIM on luma (Gaussian window 11, sigma 1.5, L = 1)."""
    return float(np.clip(ssim_map(a, b).mean(), -1.0, 1.0))


@dataclass
class PartialTextureMap:
    """UV-space unwrap of what one camera sees; black texels are unseen."""

    image: np.ndarray
    source_id: str
    coverage: float = field(init=False)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.coverage = texture_coverage(self.image)

    @classmethod
    def from_png(cls, path, source_id):
        return cls(load_png(path), source_id)


def texture_coverage(image):
    """Fraction of texels with any channel above black."""
    image = np.asarray(image)
    if image.size == 0:
        return 0.0
    return float(np.mean(image.max(axis=-1) > BLACK_LEVEL))


def _common_size(maps):
    h = min(m.image.shape[0] for m in maps)
    w = min(m.image.shape[1] for m in maps)
    return w, h


def similarity_matrix(lr, hr, coverage_threshold=0.02):
    """SSIM between every low-res and high-res partial texture map.

    Returns an ``(len(lr), len(hr))`` array.  Rows for low-res maps whose
    coverage is below ``coverage_threshold`` are NaN (invalid).  Maps of
    different sizes are bicubic-resampled to the smallest common size.
    """
    lr, hr = list(lr), list(hr)
    if not lr or not hr:
        raise ValueError("similarity_matrix needs at least one map on each side")
    w, h = _common_size(lr + hr)

    def luma(m):
        img = m.image
        if img.shape[:2] != (h, w):
            img = resize_bicubic(img, w, h)
        return rgb_to_y(img)

    hr_y = [luma(m) for m in hr]
    out = np.full((len(lr), len(hr)), np.nan)
    for i, m in enumerate(lr):
        if m.coverage < coverage_threshold:
            log.info("rejecting %s: coverage %.4f below %.4f", m.source_id, m.coverage, coverage_threshold)
            continue
        y = luma(m)
        out[i] = [ssim(y, other) for other in hr_y]
    return out


@dataclass
class CouplePairing:
    """Low-res view -> high-res still assignment with SSIM scores."""

    pairs: list = field(default_factory=list)  # (lr_id, hr_id, score)
    rejected: list = field(default_factory=list)

    def as_dict(self):
        return {lr: hr for lr, hr, _ in self.pairs}

    def to_csv(self, path):
        lines = ["lr_view,hr_view,ssim"]
        lines += [f"{lr},{hr},{score:.17g}" for lr, hr, score in self.pairs]
        lines += [f"{lr},," for lr in self.rejected]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        pairing = cls()
        with open(path) as fh:
            next(fh)
            for line in fh:
                lr, hr, score = line.rstrip("\n").split(",")
                if hr:
                    pairing.pairs.append((lr, hr, float(score)))
                else:
                    pairing.rejected.append(lr)
        return pairing


def pair_couples(matrix, lr_ids=None, hr_ids=None):
    """Pair every valid row with its best column (ties -> lowest column).

    Several low-res views may share one still.  NaN rows are rejected.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n_lr, n_hr = matrix.shape
    lr_ids = list(range(n_lr)) if lr_ids is None else list(lr_ids)
    hr_ids = list(range(n_hr)) if hr_ids is None else list(hr_ids)
    pairing = CouplePairing()
    for i, row in enumerate(matrix):
        if np.all(np.isnan(row)):
            pairing.rejected.append(lr_ids[i])
            continue
        j = int(np.nanargmax(row))
        pairing.pairs.append((lr_ids[i], hr_ids[j], float(row[j])))
    if not pairing.pairs:
        raise PairingError(
            "every low-res partial texture map was rejected (black or near-black); "
            "supply foreground masks or regenerate the partial texture maps"
        )
    return pairing
