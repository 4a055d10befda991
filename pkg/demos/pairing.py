"""
Finding which still goes with which camera
==========================================

Low-res cameras and still cameras are not labelled consistently.  Partial
texture maps put both in the same UV space, where SSIM picks the best match
for every camera.
"""

# %%
import numpy as np

from _common import output_dir
from appearance_transfer.imaging import save_png
from appearance_transfer.matching import PartialTextureMap, pair_couples, similarity_matrix
from appearance_transfer.synthetic import smooth_texture

out = output_dir("pairing")
rng = np.random.default_rng(0)

# %% [markdown]
# Each camera sees about half of the texture.  The stills see the same
# regions in a shuffled order.  One camera dropped its frame entirely, so its
# map is black.

# %%
texture = smooth_texture(64, seed=2)
yy, xx = np.mgrid[0:64, 0:64] / 64 - 0.5
lr_images = []
for k in range(6):
    a = 2 * np.pi * k / 6
    seen = np.cos(a) * xx + np.sin(a) * yy > -0.1
    lr_images.append(np.where(seen[..., None], texture, 0.0))
lr_images.append(np.zeros_like(texture))

perm = rng.permutation(6)
lr = [PartialTextureMap(img, f"cam{i}") for i, img in enumerate(lr_images)]
hr = [PartialTextureMap(lr_images[k], f"dslr{j}") for j, k in enumerate(perm)]
save_png(np.hstack([m.image for m in lr]), out / "lr_partials.png")
save_png(np.hstack([m.image for m in hr]), out / "hr_partials.png")

# %%
matrix = similarity_matrix(lr, hr)
np.set_printoptions(precision=3, suppress=True)
print(matrix)

pairing = pair_couples(matrix, [m.source_id for m in lr], [m.source_id for m in hr])
for lr_id, hr_id, score in pairing.pairs:
    print(f"{lr_id} -> {hr_id}  (SSIM {score:.3f})")
print("rejected:", pairing.rejected)
pairing.to_csv(out / "pairing.csv")
