"""Texture super-resolution behind a pluggable backend.

Two backends exist: ``bicubic`` (built in) and ``external``, which runs a
shell-free command template such as ``python my_model.py {in} {out} {factor}``
on temporary PNG files so any trained model can be dropped in.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import load_png, resize_bicubic, rgb_to_y, save_png

TMPDIR_ENV = "APPEARANCE_TRANSFER_TMPDIR"
HEATMAP_MAX_ERROR = 0.25


class SRBackendError(RuntimeError):
    def __init__(self, message, returncode=None, stderr=""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class SRBackendSpec:
    kind: str = "bicubic"
    factor: int = 2
    command_template: str = ""

    def __post_init__(self):
        if self.kind not in ("bicubic", "external"):
            raise ValueError(f"unknown SR backend {self.kind!r}")
        if self.factor not in (2, 4):
            raise ValueError("SR factor must be 2 or 4")
        if self.kind == "external" and not self.command_template:
            raise ValueError("external SR backend needs a command template")


def temp_root():
    return os.environ.get(TMPDIR_ENV) or None


def _run_external(texture, spec):
    with tempfile.TemporaryDirectory(prefix="sr-", dir=temp_root()) as tmp:
        src = Path(tmp, "in.png").resolve()
        dst = Path(tmp, "out.png").resolve()
        save_png(texture, src)
        args = [
            part.format(**{"in": str(src), "out": str(dst), "factor": spec.factor})
            for part in shlex.split(spec.command_template)
        ]
        proc = subprocess.run(args, cwd=tmp, capture_output=True, text=True)
        if proc.returncode != 0:
            raise SRBackendError(
                f"SR command exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}",
                proc.returncode,
                proc.stderr,
            )
        if not dst.is_file():
            raise SRBackendError(f"SR command did not write {dst}", proc.returncode, proc.stderr)
        return load_png(dst)


def upscale(texture, spec=SRBackendSpec()):
    """Super-resolve ``texture`` by ``spec.factor``; output size is always checked."""
    texture = np.asarray(texture, dtype=np.float64)
    h, w = texture.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty texture")
    if spec.kind == "bicubic":
        out = resize_bicubic(texture, w * spec.factor, h * spec.factor)
    else:
        out = _run_external(texture, spec)
    if out.shape[:2] != (h * spec.factor, w * spec.factor):
        raise SRBackendError(
            f"SR backend returned {out.shape[1]}x{out.shape[0]}, expected {w * spec.factor}x{h * spec.factor}"
        )
    return out


def downscale_eval(texture, factor):
    """Bicubic downscale used to build (low-res input, ground truth) pairs."""
    texture = np.asarray(texture, dtype=np.float64)
    h, w = texture.shape[:2]
    if factor not in (2, 4):
        raise ValueError("factor must be 2 or 4")
    if h % factor or w % factor:
        raise ValueError(f"{w}x{h} is not divisible by {factor}")
    return resize_bicubic(texture, w // factor, h // factor)


def error_colormap(t):
    """Blue (0) -> green (0.5) -> red (1), piecewise linear."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    r = np.clip(2 * t - 1, 0, 1)
    g = 1 - np.abs(2 * t - 1)
    b = np.clip(1 - 2 * t, 0, 1)
    return np.stack([r, g, b], axis=-1)


def sr_heatmap(sr, gt, max_error=HEATMAP_MAX_ERROR):
    """Absolute luma error mapped onto a fixed ``[0, max_error]`` color scale."""
    sr, gt = np.asarray(sr), np.asarray(gt)
    if sr.shape != gt.shape:
        raise ValueError(f"shape mismatch {sr.shape} vs {gt.shape}")
    err = np.abs(rgb_to_y(sr) - rgb_to_y(gt))
    return error_colormap(err / max_error)
