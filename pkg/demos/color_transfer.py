"""
Color transfer with a smooth 3D color map
=========================================

A low-res camera sees a subject with a different color response than the
still camera.  We fit a thin-plate color map from one couple, then show how
adding couples that see other parts of the subject improves the correction.
"""

# %%
import numpy as np

from _common import output_dir
from appearance_transfer.colortransfer import TransferConfig, apply_transfer, fit_multi_couple, kmeans_colors
from appearance_transfer.imaging import save_png
from appearance_transfer.metrics import evaluate_correction
from appearance_transfer.pipeline import select_couple_cameras
from appearance_transfer.synthetic import two_color_rig

out = output_dir("color_transfer")

# %% [markdown]
# Eight views around a subject whose front and back differ in color.  Each
# view is ``(target, reference)``: the low-res capture and the still.

# %%
views = two_color_rig(seed=0)
for i, (target, reference) in enumerate(views):
    save_png(np.hstack([target, reference]), out / f"view{i}_target_reference.png")

# %% [markdown]
# One couple: the front view only ever shows the front color, so the map it
# learns is only trustworthy near that color.

# %%
config = TransferConfig()
theta, infos = fit_multi_couple([views[0]], config, full_output=True)
for h, energies in infos[0].stages:
    print(f"bandwidth {h:.2f}: {len(energies) - 1:3d} steps, energy {energies[0]:.4f} -> {energies[-1]:.4f}")

centers = kmeans_colors(views[0][0].reshape(-1, 3), 4)
print("cluster centers and where the map sends them:")
for c, mapped in zip(centers, theta(centers)):
    print(f"  {np.round(c, 3)} -> {np.round(mapped, 3)}")

# %% [markdown]
# Divergence between corrected frames and stills, for 1, 2 and 8 couples.

# %%


def aggregate_js(theta=None):
    frames = [t if theta is None else apply_transfer(theta, t) for t, _ in views]
    return evaluate_correction(frames, [r for _, r in views]).aggregate()["js"]


print(f"before correction: JS {aggregate_js():.4f}")
for n in (1, 2, 8):
    couples = [views[i] for i in select_couple_cameras(len(views), n)]
    theta = fit_multi_couple(couples, config)
    print(f"{n} couple(s):        JS {aggregate_js(theta):.4f}")
    save_png(apply_transfer(theta, views[4][0]), out / f"back_view_corrected_{n}.png")
