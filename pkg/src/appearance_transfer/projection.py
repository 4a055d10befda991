"""Pinhole cameras, OBJ meshes, z-buffer rasterization and texture baking.

Pixel ``(i, j)`` has its center at image coordinates ``(x=j, y=i)``.  UV
coordinates follow the OBJ convention (``v = 0`` is the bottom row of the
atlas); texel ``(row, col)`` is centered at ``u = (col + 0.5) / S``,
``v = 1 - (row + 0.5) / S``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import check_mask

log = logging.getLogger(__name__)

NO_TRIANGLE = -1
VISIBILITY_RTOL = 1e-3
DILATE_TEXELS = 4


# -- cameras ----------------------------------------------------------------------


@dataclass
class CameraCalib:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple  # (width, height)

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-6:
            raise ValueError("rotation matrix is not orthonormal")
        if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    def scaled(self, factor):
        """Calibration for the same camera imaging at ``factor`` times the resolution."""
        K = self.intrinsics.copy()
        K[:2, :] *= factor
        K[:2, 2] += (factor - 1) / 2.0
        w, h = self.image_size
        return CameraCalib(K, self.rotation, self.translation, (w * factor, h * factor))

    @classmethod
    def look_at(cls, eye, target, up, focal, image_size):
        """Camera at ``eye`` looking at ``target``; image ``y`` points along ``-up``."""
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        w, h = image_size
        K = np.array([[focal, 0, (w - 1) / 2.0], [0, focal, (h - 1) / 2.0], [0, 0, 1]])
        return cls(K, R, -R @ eye, image_size)


def load_calib(path):
    """Read a calibration file: 3 intrinsics rows, 3 rotation rows, translation, image size."""
    rows = []
    with open(path) as fh:
        for ln in fh:
            ln = ln.split("#", 1)[0].strip()
            if ln:
                rows.append([float(x) for x in ln.split()])
    if len(rows) != 8 or any(len(r) != 3 for r in rows[:7]) or len(rows[7]) != 2:
        raise ValueError(f"{path}: expected 8 lines (3x3 intrinsics, 3x3 rotation, translation, width height)")
    return CameraCalib(rows[0:3], rows[3:6], rows[6], (int(rows[7][0]), int(rows[7][1])))


def save_calib(calib, path):
    lines = [" ".join(f"{x:.17g}" for x in r) for r in calib.intrinsics]
    lines += [" ".join(f"{x:.17g}" for x in r) for r in calib.rotation]
    lines.append(" ".join(f"{x:.17g}" for x in calib.translation))
    lines.append(f"{calib.image_size[0]} {calib.image_size[1]}")
    Path(path).write_text("\n".join(lines) + "\n")


def project_point(calib, p):
    """Project world point(s) ``p`` to ``(u, v, depth)``; ``depth <= 0`` means behind the camera."""
    p = np.asarray(p, dtype=np.float64)
    xc = p @ calib.rotation.T + calib.translation
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = (xc[..., :2] / z[..., None]) @ calib.intrinsics[:2, :2].T + calib.intrinsics[:2, 2]
    return np.concatenate([uv, z[..., None]], axis=-1)


# -- meshes ------------------------------------------------------------------------


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) vertex indices
    uvs: np.ndarray  # (T, 3, 2) per-corner texture coordinates

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 3, 2)
        if len(self.uvs) != len(self.triangles):
            raise ValueError("need one UV triple per triangle")
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if self.uvs.size and (self.uvs.min() < 0 or self.uvs.max() > 1):
            raise ValueError("UV coordinates must lie in [0, 1]")

    def face_normals(self):
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)


def load_obj(path):
    """Minimal OBJ reader for ``v``, ``vt`` and ``f v/vt[/vn]`` records (polygons are fanned)."""
    verts, tex, tris, uv_idx = [], [], [], []
    with open(path) as fh:
        for lineno, ln in enumerate(fh, 1):
            parts = ln.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "vt":
                    tex.append([float(x) for x in parts[1:3]])
                elif parts[0] == "f":
                    corners = [c.split("/") for c in parts[1:]]
                    if any(len(c) < 2 or not c[1] for c in corners):
                        raise ValueError("face without texture coordinates")
                    vi = [int(c[0]) for c in corners]
                    ti = [int(c[1]) for c in corners]
                    vi = [i - 1 if i > 0 else len(verts) + i for i in vi]
                    ti = [i - 1 if i > 0 else len(tex) + i for i in ti]
                    for k in range(1, len(vi) - 1):
                        tris.append([vi[0], vi[k], vi[k + 1]])
                        uv_idx.append([ti[0], ti[k], ti[k + 1]])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    tex = np.asarray(tex, dtype=np.float64).reshape(-1, 2)
    uv_idx = np.asarray(uv_idx, dtype=np.int64).reshape(-1, 3)
    if uv_idx.size and uv_idx.max() >= len(tex):
        raise ValueError(f"{path}: texture coordinate index out of range")
    return Mesh(verts, tris, tex[uv_idx])


def save_obj(mesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vt {u:.9g} {v:.9g}" for u, v in mesh.uvs.reshape(-1, 2)]
    for t, tri in enumerate(mesh.triangles):
        lines.append("f " + " ".join(f"{vi + 1}/{3 * t + k + 1}" for k, vi in enumerate(tri)))
    Path(path).write_text("\n".join(lines) + "\n")


# -- rasterization -----------------------------------------------------------------


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize(points, triangles, width, height, inv_depth=None):
    """Scan-convert 2D triangles over pixel centers with the top-left fill rule.

    ``points`` are ``(N, 2)`` image coordinates.  When ``inv_depth`` (``1/z``
    per point) is given, a depth test keeps the nearest triangle and the
    returned barycentrics are perspective-correct.  Returns ``(tri_id, bary,
    depth)`` rasters; uncovered pixels carry ``NO_TRIANGLE`` and ``inf``.
    """
    tri_id = np.full((height, width), NO_TRIANGLE, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    depth = np.full((height, width), np.inf)
    for t, (i0, i1, i2) in enumerate(triangles):
        (x0, y0), (x1, y1), (x2, y2) = points[i0], points[i1], points[i2]
        if not np.all(np.isfinite([x0, y0, x1, y1, x2, y2])):
            continue
        area = _edge(x0, y0, x1, y1, x2, y2)
        if area == 0:
            continue
        c0 = max(int(np.ceil(min(x0, x1, x2))), 0)
        c1 = min(int(np.floor(max(x0, x1, x2))), width - 1)
        r0 = max(int(np.ceil(min(y0, y1, y2))), 0)
        r1 = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if c0 > c1 or r0 > r1:
            continue
        py, px = np.mgrid[r0 : r1 + 1, c0 : c1 + 1].astype(np.float64)
        s = 1.0 if area > 0 else -1.0
        inside = np.ones(px.shape, dtype=bool)
        ws = []
        for (ax, ay), (bx, by) in (((x1, y1), (x2, y2)), ((x2, y2), (x0, y0)), ((x0, y0), (x1, y1))):
            w = s * _edge(ax, ay, bx, by, px, py)
            # inward normal; edges with the interior below (or to the right) own their pixels
            ny, nx = s * (bx - ax), -s * (by - ay)
            owns = ny > 0 or (ny == 0 and nx > 0)
            inside &= (w >= 0) if owns else (w > 0)
            ws.append(w)
        if not inside.any():
            continue
        lam = np.stack(ws, axis=-1)[inside] / abs(area)
        rows, cols = np.nonzero(inside)
        rows, cols = rows + r0, cols + c0
        if inv_depth is None:
            tri_id[rows, cols] = t
            bary[rows, cols] = lam
            depth[rows, cols] = 1.0
            continue
        q = lam * inv_depth[[i0, i1, i2]]
        qsum = q.sum(axis=1)
        z = 1.0 / qsum
        nearer = z < depth[rows, cols]
        rows, cols = rows[nearer], cols[nearer]
        tri_id[rows, cols] = t
        bary[rows, cols] = q[nearer] / qsum[nearer, None]
        depth[rows, cols] = z[nearer]
    return tri_id, bary, depth


def _screen_raster(mesh, calib):
    proj = project_point(calib, mesh.vertices)
    z = proj[:, 2]
    tris = mesh.triangles
    # triangles crossing the image plane are dropped, not clipped
    keep = np.all(z[tris] > 0, axis=1)
    pts = proj[:, :2].copy()
    pts[z <= 0] = np.nan
    inv_z = np.where(z > 0, 1.0 / np.where(z > 0, z, 1.0), 0.0)
    w, h = calib.image_size
    order = np.flatnonzero(keep)
    tri_id, bary, depth = rasterize(pts, tris[order], w, h, inv_depth=inv_z)
    tri_id = np.where(tri_id >= 0, order[np.maximum(tri_id, 0)], NO_TRIANGLE)
    return tri_id, bary, depth


def visibility_buffer(mesh, calib):
    """Per-pixel nearest depth and triangle id (``NO_TRIANGLE`` where empty)."""
    if len(mesh.triangles) == 0:
        raise ValueError("mesh has no triangles")
    tri_id, _, depth = _screen_raster(mesh, calib)
    return depth, tri_id


def sample_bilinear(image, x, y):
    """Bilinear lookup at continuous pixel coordinates (edge-clamped)."""
    h, w = image.shape[:2]
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros_like(y, dtype=np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def uv_to_texel(uv, size):
    return uv[..., 0] * size - 0.5, (1.0 - uv[..., 1]) * size - 0.5


def render_view(mesh, calib, texture):
    """Render a textured mesh into ``calib``; returns ``(image, mask)`` on black."""
    tri_id, bary, _ = _screen_raster(mesh, calib)
    w, h = calib.image_size
    image = np.zeros((h, w, 3))
    mask = tri_id != NO_TRIANGLE
    uv = np.einsum("nk,nkd->nd", bary[mask], mesh.uvs[tri_id[mask]])
    size = texture.shape[0]
    tx, ty = uv_to_texel(uv, size)
    image[mask] = sample_bilinear(texture, tx, ty)
    return image, mask


# -- texture baking ---------------------------------------------------------------------


@dataclass
class TextureAtlas:
    image: np.ndarray
    filled: np.ndarray


def _camera_planes(mesh, calib):
    # triangle planes in camera coordinates: n . X = d
    v = mesh.vertices[mesh.triangles] @ calib.rotation.T + calib.translation
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    d = np.einsum("ij,ij->i", n, v[:, 0])
    return n, d


def _dilate(image, filled, steps):
    image = image.copy()
    known = filled.copy()
    h, w = known.shape
    for _ in range(steps):
        acc = np.zeros_like(image)
        cnt = np.zeros((h, w))
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            src_rows = slice(max(dy, 0), h + min(dy, 0))
            dst_rows = slice(max(-dy, 0), h + min(-dy, 0))
            src_cols = slice(max(dx, 0), w + min(dx, 0))
            dst_cols = slice(max(-dx, 0), w + min(-dx, 0))
            k = known[src_rows, src_cols]
            acc[dst_rows, dst_cols] += image[src_rows, src_cols] * k[..., None]
            cnt[dst_rows, dst_cols] += k
        grow = ~known & (cnt > 0)
        if not grow.any():
            break
        image[grow] = acc[grow] / cnt[grow, None]
        known |= grow
    return image


def bake_texture(mesh, frames, calibs, atlas_size=2048, dilate=DILATE_TEXELS):
    """Project camera frames onto the mesh surface and blend them into a UV atlas.

    ``frames`` holds one image or ``(image, mask)`` tuple per camera.  A
    camera contributes to a texel when the surface point is unoccluded and
    lands on a foreground pixel, weighted by ``max(0, cos(angle))**2``
    between the face normal and the direction to the camera.  Texels nobody
    sees stay unfilled; the unfilled border is dilated by ``dilate`` texels.
    """
    if len(calibs) == 0 or len(frames) != len(calibs):
        raise ValueError("need one frame per calibrated camera (at least one)")
    S = int(atlas_size)
    tx, ty = uv_to_texel(mesh.uvs.reshape(-1, 2), S)
    uv_pts = np.stack([tx, ty], axis=1)
    uv_tris = np.arange(3 * len(mesh.triangles)).reshape(-1, 3)
    tri_uv, bary_uv, _ = rasterize(uv_pts, uv_tris, S, S)
    covered = tri_uv != NO_TRIANGLE
    tri = tri_uv[covered]
    corners = mesh.vertices[mesh.triangles[tri]]
    P = np.einsum("nk,nkd->nd", bary_uv[covered], corners)
    normals = mesh.face_normals()[tri]

    acc = np.zeros((len(P), 3))
    wsum = np.zeros(len(P))
    for cam, (frame, calib) in enumerate(zip(frames, calibs)):
        image, mask = frame if isinstance(frame, tuple) else (frame, None)
        image = np.asarray(image, dtype=np.float64)
        mask = check_mask(image, mask)
        w, h = calib.image_size
        if image.shape[:2] != (h, w):
            raise ValueError(f"camera {cam}: frame is {image.shape[1]}x{image.shape[0]}, calibration says {w}x{h}")
        buf_id, _, _ = _screen_raster(mesh, calib)
        proj = project_point(calib, P)
        u, v, z = proj[:, 0], proj[:, 1], proj[:, 2]
        ix = np.rint(np.nan_to_num(u, nan=-1.0)).astype(np.int64)
        iy = np.rint(np.nan_to_num(v, nan=-1.0)).astype(np.int64)
        ok = (z > 0) & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        sel = np.flatnonzero(ok)
        hit = buf_id[iy[sel], ix[sel]]
        sel, hit = sel[hit != NO_TRIANGLE], hit[hit != NO_TRIANGLE]
        # depth of the visible surface along the exact ray through (u, v)
        n_c, d_c = _camera_planes(mesh, calib)
        Kinv = np.linalg.inv(calib.intrinsics)
        rays = np.stack([u[sel], v[sel], np.ones(len(sel))], axis=1) @ Kinv.T
        denom = np.einsum("ij,ij->i", n_c[hit], rays)
        with np.errstate(divide="ignore", invalid="ignore"):
            zbuf = d_c[hit] / denom
        visible = np.abs(z[sel] - zbuf) <= VISIBILITY_RTOL * np.abs(zbuf)
        visible &= mask[iy[sel], ix[sel]]
        sel = sel[visible]
        to_cam = calib.center - P[sel]
        cos = np.einsum("ij,ij->i", normals[sel], to_cam) / np.linalg.norm(to_cam, axis=1)
        weight = np.maximum(cos, 0.0) ** 2
        acc[sel] += weight[:, None] * sample_bilinear(image, u[sel], v[sel])
        wsum[sel] += weight

    image = np.zeros((S, S, 3))
    filled = np.zeros((S, S), dtype=bool)
    got = wsum > 0
    rows, cols = np.nonzero(covered)
    image[rows[got], cols[got]] = np.clip(acc[got] / wsum[got, None], 0.0, 1.0)
    filled[rows[got], cols[got]] = True
    if not filled.any():
        log.warning("bake_texture: no camera sees any texel; atlas is empty")
    elif dilate:
        image = _dilate(image, filled, dilate)
    return TextureAtlas(image, filled)
