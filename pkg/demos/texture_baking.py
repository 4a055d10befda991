"""
Baking a texture atlas from calibrated views
============================================

Render a textured cube into four cameras, then bake the views back into a
UV atlas.  Only texels some camera actually sees are filled.
"""

# %%
import numpy as np

from _common import output_dir
from appearance_transfer.imaging import save_mask, save_png
from appearance_transfer.projection import bake_texture, render_view, save_calib, save_obj
from appearance_transfer.synthetic import cube_mesh, ring_cameras, smooth_texture

out = output_dir("texture_baking")

# %%
mesh = cube_mesh()
texture = smooth_texture(128, seed=1)
cameras = ring_cameras(4, height=1.2, image_size=(160, 160))
save_obj(mesh, out / "cube.obj")

frames = []
for i, cam in enumerate(cameras):
    image, mask = render_view(mesh, cam, texture)
    frames.append((image, mask))
    save_png(image, out / f"view{i}.png")
    save_calib(cam, out / f"cam{i}.txt")
print(f"rendered {len(frames)} views of {len(mesh.triangles)} triangles")

# %% [markdown]
# Each texel blends the cameras that see it, weighted by how squarely they
# face the surface.  Unseen texels stay empty but get a few texels of edge
# padding so filtering does not bleed black.

# %%
atlas = bake_texture(mesh, frames, cameras, atlas_size=128)
save_png(atlas.image, out / "atlas.png")
save_mask(atlas.filled, out / "atlas_filled.png")

err = np.abs(atlas.image - texture)[atlas.filled]
print(f"filled {atlas.filled.mean():.1%} of the atlas")
print(f"mean absolute error on filled texels: {err.mean() * 255:.2f} / 255")
