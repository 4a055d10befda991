"""
Texture super-resolution and how to score it
============================================

Downscale a smooth texture, bring it back up, and compare with the
original.  The same harness works with an external upscaler given as a
command template.
"""

# %%
import shlex
import sys

import numpy as np

from _common import output_dir
from appearance_transfer.imaging import save_png
from appearance_transfer.metrics import psnr_y, ssim
from appearance_transfer.pipeline import evaluate_sr
from appearance_transfer.sr import SRBackendSpec, downscale_eval, sr_heatmap, upscale
from appearance_transfer.synthetic import radial_gradient, smooth_texture

out = output_dir("super_resolution")

# %%
gt = smooth_texture(512, seed=4)
low = downscale_eval(gt, 2)
sr = upscale(low)
print(f"{low.shape[:2]} -> {sr.shape[:2]}: PSNR-Y {psnr_y(sr, gt):.2f} dB, SSIM {ssim(sr, gt):.4f}")
save_png(sr, out / "sr.png")
save_png(sr_heatmap(sr, gt), out / "heatmap.png")

# %% [markdown]
# The report covers several textures at once and writes one heatmap each.

# %%
report = evaluate_sr({"waves": gt, "radial": radial_gradient(512)}, heat_dir=out / "heatmaps")
print(report.table())

# %% [markdown]
# An external backend is any command that reads ``{in}`` and writes
# ``{out}``.  Here a tiny script stands in for a learned upscaler.

# %%
script = out / "nearest.py"
script.write_text(
    "import sys, cv2\n"
    "img = cv2.imread(sys.argv[1])\n"
    "f = int(sys.argv[3])\n"
    "cv2.imwrite(sys.argv[2], cv2.resize(img, None, fx=f, fy=f, interpolation=cv2.INTER_NEAREST))\n"
)
spec = SRBackendSpec("external", 2, f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{in}} {{out}} {{factor}}")
nearest = upscale(low, spec)
print(f"nearest neighbour: PSNR-Y {psnr_y(nearest, gt):.2f} dB")
print(f"largest bicubic vs nearest difference: {np.abs(nearest - sr).max():.3f}")
