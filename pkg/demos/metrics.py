"""
Image and histogram metrics
===========================

Quick tour of the scores used to judge color correction and upscaling,
including the sentinels for identical and undefined cases.
"""

# %%
import math

import numpy as np

from appearance_transfer.imaging import color_histogram
from appearance_transfer.metrics import MetricReport, chi_squared, js_divergence, psnr_y, rmse, sam, sre, ssim

half, quarter = np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.25)
print(f"PSNR-Y 0.5 vs 0.25: {psnr_y(half, quarter):.4f} dB")
print(f"SSIM   0.5 vs 0.25: {ssim(half, quarter):.4f}")
print(f"RMSE   0.5 vs 0.25: {rmse(half, quarter):.4f}")
print(f"SRE    0.5 vs 0.25: {sre(half, quarter):.4f} dB")
red, green = np.tile([1.0, 0, 0], (4, 4, 1)), np.tile([0, 1.0, 0], (4, 4, 1))
print(f"SAM red vs green: {sam(red, green):.4f} rad")

# %% [markdown]
# Histogram distances work on 64-bin per-channel color histograms.

# %%
rng = np.random.default_rng(0)
a = rng.random((32, 32, 3))
b = np.clip(a * [1.2, 0.9, 0.8], 0, 1)
ha, hb = color_histogram(a), color_histogram(b)
print(f"JS {js_divergence(ha, hb):.4f}, chi-squared {chi_squared(ha, hb):.4f}")
print(f"disjoint two-bin histograms: JS {js_divergence([1, 0], [0, 1]):.4f} (2 ln 2 = {2 * math.log(2):.4f})")

# %% [markdown]
# Identical inputs make PSNR infinite; a black reference leaves SRE
# undefined.  Reports print these as words and leave them out of the means.

# %%
report = MetricReport(["psnr_y", "sre"])
report.add("same", psnr_y=psnr_y(a, a), sre=sre(a, a))
report.add("shifted", psnr_y=psnr_y(a, b), sre=sre(a, b))
report.add("black", psnr_y=psnr_y(np.zeros_like(a), a), sre=sre(np.zeros_like(a), a))
print(report.table())
