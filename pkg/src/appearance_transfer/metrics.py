"""Image and histogram quality metrics and tabular reports.

Metrics that are infinite for identical inputs (PSNR, SRE) return
``math.inf``; undefined cases (SAM with no usable pixels, SRE against a
zero-mean reference) return ``nan``.  Reports print ``identical`` and
``undefined`` for these.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import Histogram, color_histogram, rgb_to_y
from .matching import ssim

__all__ = [
    "psnr_y",
    "rmse",
    "sam",
    "sre",
    "ssim",
    "js_divergence",
    "chi_squared",
    "MetricReport",
    "evaluate_correction",
]


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr_y(a, b):
    """PSNR in dB on BT.601 luma with peak 1."""
    a, b = _pair(a, b)
    mse = float(np.mean((rgb_to_y(a) - rgb_to_y(b)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def rmse(a, b):
    a, b = _pair(a, b)
    return math.sqrt(float(np.mean((a - b) ** 2)))


def sam(a, b):
    """Mean spectral angle (radians) between per-pixel RGB vectors.

    Pixels where either vector is zero are skipped; ``nan`` if none remain.
    """
    a, b = _pair(a, b)
    a, b = a.reshape(-1, a.shape[-1]), b.reshape(-1, b.shape[-1])
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        return math.nan
    cos = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def sre(reference, estimate):
    """Signal-to-reconstruction error ratio in dB, averaged over channels."""
    a, b = _pair(reference, estimate)
    a, b = a.reshape(-1, a.shape[-1]), b.reshape(-1, b.shape[-1])
    mse = np.mean((a - b) ** 2, axis=0)
    if np.all(mse == 0):
        return math.inf
    mean = np.mean(a, axis=0)
    if np.any(mean == 0):
        return math.nan
    with np.errstate(divide="ignore"):
        per_channel = 10.0 * np.log10(mean**2 / mse)
    return float(np.mean(per_channel))


def _hist_bins(h):
    bins = h.bins if isinstance(h, Histogram) else np.asarray(h, dtype=np.float64)
    return np.atleast_2d(bins)


def _hist_pair(h1, h2):
    a, b = _hist_bins(h1), _hist_bins(h2)
    if a.shape != b.shape:
        raise ValueError(f"histogram shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_normalized(*hists):
    for h in hists:
        if np.any(h < 0) or not np.allclose(h.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("histograms must be nonnegative and sum to 1 per channel")


def js_divergence(h1, h2):
    """``sum_i H_i ln(2H_i/(H_i+H'_i)) + H'_i ln(2H'_i/(H_i+H'_i))``, averaged over channels."""
    a, b = _hist_pair(h1, h2)
    _check_normalized(a, b)
    m = a + b
    safe_m = np.where(m > 0, m, 1.0)

    def term(p):
        return np.where(p > 0, p * np.log(np.where(p > 0, 2.0 * p, 1.0) / safe_m), 0.0)

    return float(np.mean(np.sum(term(a) + term(b), axis=1)))


def chi_squared(h1, h2):
    """``sum_i 2 (H_i - H'_i)^2 / (H_i + H'_i)`` with 0/0 = 0, averaged over channels."""
    a, b = _hist_pair(h1, h2)
    m = a + b
    terms = np.where(m > 0, 2.0 * (a - b) ** 2 / np.where(m > 0, m, 1.0), 0.0)
    return float(np.mean(np.sum(terms, axis=1)))


def format_value(v):
    if isinstance(v, float):
        if math.isinf(v) and v > 0:
            return "identical"
        if math.isnan(v):
            return "undefined"
        return f"{v:.6f}"
    return str(v)


@dataclass
class MetricReport:
    """Per-item metric rows plus column means over the finite values."""

    metrics: list
    rows: list = field(default_factory=list)  # (item_id, {metric: value})

    def add(self, item, **values):
        self.rows.append((item, {m: float(values[m]) for m in self.metrics}))

    def aggregate(self):
        out = {}
        for m in self.metrics:
            vals = [r[m] for _, r in self.rows]
            finite = [v for v in vals if math.isfinite(v)]
            if finite:
                out[m] = float(np.mean(finite))
            elif vals and all(v == math.inf for v in vals):
                out[m] = math.inf
            else:
                out[m] = math.nan
        return out

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["item", *self.metrics])
        for item, values in self.rows:
            writer.writerow([item, *(format_value(values[m]) for m in self.metrics)])
        agg = self.aggregate()
        writer.writerow(["mean", *(format_value(agg[m]) for m in self.metrics)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def table(self):
        items = [str(i) for i, _ in self.rows] + ["mean"]
        width = max(len(s) for s in items + ["item"])
        head = "item".ljust(width) + "".join(m.rjust(14) for m in self.metrics)
        lines = [head, "-" * len(head)]
        agg = self.aggregate()
        for item, values in self.rows + [("mean", agg)]:
            lines.append(str(item).ljust(width) + "".join(format_value(values[m]).rjust(14) for m in self.metrics))
        return "\n".join(lines)


def evaluate_correction(frames, references, ids=None, n_bins=64):
    """JS divergence and chi-squared between corrected frames and their paired stills.

    ``frames`` and ``references`` are equal-length sequences of images or
    ``(image, mask)`` tuples; histograms cover foreground pixels only.
    """
    frames, references = list(frames), list(references)
    if len(frames) != len(references):
        raise ValueError("need one reference per frame")
    ids = list(ids) if ids is not None else list(range(len(frames)))
    report = MetricReport(["js", "chi2"])
    for item, frame, ref in zip(ids, frames, references):
        hf = color_histogram(*_img_mask(frame), n_bins=n_bins)
        hr = color_histogram(*_img_mask(ref), n_bins=n_bins)
        if hf.degenerate or hr.degenerate:
            raise ValueError(f"{item}: empty foreground")
        report.add(item, js=js_divergence(hf, hr), chi2=chi_squared(hf, hr))
    return report


def _img_mask(x):
    return x if isinstance(x, tuple) else (x, None)
