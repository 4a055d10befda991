"""Synthetic scenes and datasets for tests, demos and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .imaging import save_mask, save_png
from .projection import CameraCalib, Mesh, render_view, save_calib, save_obj

# face corner order is counter-clockwise seen from outside
_CUBE_FACES = [
    ((1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)),  # +x
    ((-1, 1, -1), (-1, -1, -1), (-1, -1, 1), (-1, 1, 1)),  # -x
    ((1, 1, -1), (-1, 1, -1), (-1, 1, 1), (1, 1, 1)),  # +y
    ((-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)),  # -y
    ((-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)),  # +z
    ((-1, 1, -1), (1, 1, -1), (1, -1, -1), (-1, -1, -1)),  # -z
]


def cube_mesh(half_size=0.5, center=(0.0, 0.0, 0.0), margin=0.02):
    """Closed cube whose six faces occupy a 3x2 grid of atlas cells."""
    center = np.asarray(center, dtype=np.float64)
    verts, tris, uvs = [], [], []
    cell = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    for f, corners in enumerate(_CUBE_FACES):
        base = len(verts)
        verts += [center + half_size * np.asarray(c, dtype=np.float64) for c in corners]
        col, row = f % 3, f // 3
        lo = np.array([col / 3.0, row / 2.0]) + margin
        span = np.array([1 / 3.0, 1 / 2.0]) - 2 * margin
        quad_uv = lo + cell * span
        for a, b, c in ((0, 1, 2), (0, 2, 3)):
            tris.append([base + a, base + b, base + c])
            uvs.append(quad_uv[[a, b, c]])
    return Mesh(np.array(verts), np.array(tris), np.array(uvs))


def tetrahedron_mesh(scale=0.6):
    """Regular tetrahedron with one atlas triangle per face."""
    s = scale
    verts = np.array([[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]])
    tris = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    cells = [(0.0, 0.5), (0.5, 0.5), (0.0, 0.0), (0.5, 0.0)]
    uvs = []
    for x0, y0 in cells:
        uvs.append([[x0 + 0.02, y0 + 0.02], [x0 + 0.48, y0 + 0.02], [x0 + 0.25, y0 + 0.48]])
    return Mesh(verts, tris, np.array(uvs))


def ring_cameras(n, radius=3.0, height=0.8, focal=None, image_size=(64, 64), target=(0.0, 0.0, 0.0)):
    """``n`` cameras evenly spaced on a horizontal circle, all facing ``target``."""
    w, h = image_size
    focal = focal if focal is not None else 1.2 * w
    cams = []
    for i in range(n):
        a = 2 * np.pi * i / n
        eye = np.array([radius * np.sin(a), radius * np.cos(a), height])
        cams.append(CameraCalib.look_at(eye, target, (0, 0, 1), focal, image_size))
    return cams


def smooth_texture(size, seed=0, n_waves=3):
    """Low-frequency RGB pattern in ``[0.15, 0.85]``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    out = np.empty((size, size, 3))
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(n_waves):
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            acc += np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        out[..., c] = 0.5 + 0.35 * acc / n_waves
    return out


def radial_gradient(size):
    """Smooth radial RGB ramp used for resampling checks."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size - 1)
    r = np.hypot(xx - 0.5, yy - 0.5) / np.sqrt(0.5)
    return np.stack([0.2 + 0.6 * r, 0.8 - 0.5 * r, 0.5 + 0.3 * np.cos(np.pi * r)], axis=-1)


# -- two-color coverage rig -------------------------------------------------------

FRONT_COLOR = np.array([0.8, 0.35, 0.3])
BACK_COLOR = np.array([0.25, 0.4, 0.75])


def capture_response(reference):
    """Color response of the low-res camera system relative to the stills."""
    return np.clip(0.75 * reference**1.6 + np.array([0.06, 0.04, 0.02]), 0.0, 1.0)


def two_color_rig(n_views=8, size=48, seed=0, noise=0.02, shading=0.6):
    """Views around a subject whose front half and back half differ in color.

    View ``i`` sits at angle ``2*pi*i/n_views`` and sees a front-color
    fraction of ``(1 + cos(angle)) / 2``; pixels carry random shading and
    noise.  Returns ``[(target, reference), ...]`` where the reference is the
    still-camera image and the target is the same view through
    :func:`capture_response`.
    """
    rng = np.random.default_rng(seed)
    n = size * size
    views = []
    for i in range(n_views):
        angle = 2 * np.pi * i / n_views
        n_front = int(round(n * (1 + np.cos(angle)) / 2))
        front = np.arange(n) < n_front
        shade = 1 + shading * (rng.random(n) - 0.5)
        px = np.where(front[:, None], FRONT_COLOR, BACK_COLOR) * shade[:, None]
        px = px + noise * rng.normal(size=(n, 3))
        reference = np.clip(px, 0.0, 1.0).reshape(size, size, 3)
        views.append((capture_response(reference), reference))
    return views


# -- toy dataset on disk -------------------------------------------------------------


def write_toy_dataset(root, n_cameras=4, n_frames=2, image_size=64, atlas_texture=128, seed=0):
    """Write a complete toy capture (frames, stills, partials, meshes, manifest).

    The subject is a textured cube in front of a green screen, rotating
    slightly between frames.  Returns the manifest path.
    """
    root = Path(root)
    for sub in ("frames", "calib", "hr", "partials/lr", "partials/hr", "meshes"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    texture = smooth_texture(atlas_texture, seed=seed)
    size = (image_size, image_size)
    cams = ring_cameras(n_cameras, image_size=size)
    hr_cams = ring_cameras(n_cameras, image_size=(2 * image_size, 2 * image_size))
    green = np.array([0.0, 1.0, 0.0])

    def shot(mesh, calib, tex):
        img, mask = render_view(mesh, calib, tex)
        img[~mask] = green
        return img, mask

    meshes = []
    for f in range(n_frames):
        a = 0.15 * f
        c, s = np.cos(a), np.sin(a)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        base = cube_mesh()
        mesh = Mesh(base.vertices @ rot.T, base.triangles, base.uvs)
        path = root / "meshes" / f"frame_{f:04d}.obj"
        save_obj(mesh, path)
        meshes.append(mesh)

    lr_texture = capture_response(texture)
    lr_entries = []
    for i, cam in enumerate(cams):
        cid = f"cam{i}"
        save_calib(cam, root / "calib" / f"{cid}.txt")
        for f, mesh in enumerate(meshes):
            img, _ = shot(mesh, cam, lr_texture)
            save_png(img, root / "frames" / f"{cid}_{f:04d}.png")
            partial = _partial_texture(mesh, cam, lr_texture)
            save_png(partial, root / "partials" / "lr" / f"{cid}_{f:04d}.png")
        lr_entries.append({"id": cid, "calib": f"calib/{cid}.txt", "frames": f"frames/{cid}_{{frame:04d}}.png"})

    hr_entries = []
    for j in range(n_cameras):
        hid = f"dslr{j}"
        img, mask = shot(meshes[0], hr_cams[(j + 1) % n_cameras], texture)
        save_png(img, root / "hr" / f"{hid}.png")
        save_mask(mask, root / "hr" / f"{hid}_mask.png")
        partial = _partial_texture(meshes[0], hr_cams[(j + 1) % n_cameras], texture)
        save_png(partial, root / "partials" / "hr" / f"{hid}.png")
        hr_entries.append({"id": hid, "image": f"hr/{hid}.png", "mask": f"hr/{hid}_mask.png"})

    manifest = {
        "n_frames": n_frames,
        "lr_cameras": lr_entries,
        "hr_stills": hr_entries,
        "partials": {"lr": "partials/lr", "hr": "partials/hr"},
        "meshes": "meshes/frame_{frame:04d}.obj",
        "chroma_key": {"color": [0.0, 1.0, 0.0], "tolerance": 0.15},
        "output_dir": "out",
    }
    path = root / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path


def _partial_texture(mesh, calib, texture, size=64):
    """Unwrap of the texels ``calib`` sees, black elsewhere."""
    from .projection import bake_texture

    img, mask = render_view(mesh, calib, texture)
    atlas = bake_texture(mesh, [(img, mask)], [calib], atlas_size=size, dilate=0)
    out = atlas.image.copy()
    out[~atlas.filled] = 0.0
    return out
