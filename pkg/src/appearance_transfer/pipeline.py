"""End-to-end orchestration over a dataset manifest.

The default ordering (``srat``) runs: foreground masks, couple
identification, multi-couple color transfer fit, transfer applied to every
frame, texture baking per frame, and texture super-resolution.  Five
alternative orderings move the transfer and SR steps between the frame and
texture domains:

====== =====================================================
cfg1   bake -> transfer on textures -> SR on textures
cfg2   bake -> SR on textures -> transfer on textures
cfg3   transfer on frames -> SR on frames -> bake
cfg4   SR on frames -> transfer on frames -> bake
cfg5   SR on frames -> bake -> transfer on textures
====== =====================================================

The color map is fitted once per run on the couples' frames as they exist
when the fit step runs (super-resolved first for cfg4 and cfg5).
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import colortransfer as ct
from .imaging import chroma_key, load_mask, load_png, save_mask, save_png
from .matching import CouplePairing, PartialTextureMap, pair_couples, similarity_matrix, ssim
from .metrics import MetricReport, evaluate_correction, psnr_y
from .projection import bake_texture, load_calib, load_obj
from .sr import SRBackendSpec, downscale_eval, sr_heatmap, upscale

log = logging.getLogger(__name__)

ORDERINGS = {
    "srat": ("masks", "pairing", "fit", "transfer_frames", "bake", "sr_textures"),
    "cfg1": ("masks", "pairing", "fit", "bake", "transfer_textures", "sr_textures"),
    "cfg2": ("masks", "pairing", "fit", "bake", "sr_textures", "transfer_textures"),
    "cfg3": ("masks", "pairing", "fit", "transfer_frames", "sr_frames", "bake"),
    "cfg4": ("masks", "pairing", "sr_frames", "fit", "transfer_frames", "bake"),
    "cfg5": ("masks", "pairing", "sr_frames", "fit", "bake", "transfer_textures"),
}


class ManifestError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.problems))


class ConfigError(ValueError):
    pass


class PipelineStageError(RuntimeError):
    def __init__(self, stage, item, cause):
        self.stage, self.item = stage, item
        super().__init__(f"stage {stage!r} failed on {item}: {cause}")


# -- manifest -------------------------------------------------------------------------


@dataclass
class LRCamera:
    id: str
    calib: Path
    frames: str
    masks: str | None = None


@dataclass
class HRStill:
    id: str
    image: Path
    mask: Path | None = None


@dataclass
class Manifest:
    root: Path
    n_frames: int
    lr_cameras: list
    hr_stills: list
    partials_lr: Path
    partials_hr: Path
    meshes: str
    output_dir: Path
    key_color: tuple | None = None
    tolerance: float = 0.15
    pairing: str = "camera"
    pairing_frame: int = 0

    def frame_path(self, cam, f):
        return self.root / cam.frames.format(frame=f, camera=cam.id)

    def mask_path(self, cam, f):
        return None if cam.masks is None else self.root / cam.masks.format(frame=f, camera=cam.id)

    def mesh_path(self, f):
        return self.root / self.meshes.format(frame=f)

    def lr_partial_path(self, cam, f):
        return self.partials_lr / f"{cam.id}_{f:04d}.png"

    def hr_partial_path(self, still):
        return self.partials_hr / f"{still.id}.png"

    def required_files(self):
        for cam in self.lr_cameras:
            yield cam.calib
            for f in range(self.n_frames):
                yield self.frame_path(cam, f)
                if cam.masks is not None:
                    yield self.mask_path(cam, f)
        for still in self.hr_stills:
            yield still.image
            if still.mask is not None:
                yield still.mask
        for f in range(self.n_frames):
            yield self.mesh_path(f)
        pairing_frames = range(self.n_frames) if self.pairing == "frame" else [self.pairing_frame]
        for cam in self.lr_cameras:
            for f in pairing_frames:
                yield self.lr_partial_path(cam, f)
        for still in self.hr_stills:
            yield self.hr_partial_path(still)


def _key_lines(node, prefix=()):
    """Map key paths of a composed YAML document to 1-based line numbers."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            lines[path] = k.start_mark.line + 1
            lines.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            lines[prefix + (i,)] = v.start_mark.line + 1
            lines.update(_key_lines(v, prefix + (i,)))
    return lines


def _read_yaml(path):
    path = Path(path)
    try:
        text = path.read_text()
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text))
    except (OSError, yaml.YAMLError) as exc:
        raise ValueError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data, lines


def validate_manifest(path, config=None):
    """Parse a YAML manifest and check every referenced file.

    All problems (malformed fields with their line numbers, missing files)
    are collected and raised together as one :class:`ManifestError`.
    """
    path = Path(path)
    try:
        data, lines = _read_yaml(path)
    except ValueError as exc:
        raise ManifestError([str(exc)]) from None
    root = path.parent
    problems = []

    def where(*key):
        ln = lines.get(key)
        return f"{path.name}:{ln}" if ln else path.name

    def need(mapping, key, kind, *ctx, default=...):
        if key not in mapping:
            if default is ...:
                problems.append(f"{where(*ctx) if ctx else path.name}: missing field {'.'.join(map(str, ctx + (key,)))}")
            return default if default is not ... else None
        value = mapping[key]
        if not isinstance(value, kind):
            problems.append(f"{where(*ctx, key)}: field {'.'.join(map(str, ctx + (key,)))} must be {kind_name(kind)}")
            return None
        return value

    n_frames = need(data, "n_frames", int)
    if isinstance(n_frames, int) and n_frames < 1:
        problems.append(f"{where('n_frames')}: n_frames must be >= 1")

    cams = []
    for i, entry in enumerate(need(data, "lr_cameras", list) or []):
        if not isinstance(entry, dict):
            problems.append(f"{where('lr_cameras', i)}: camera entry must be a mapping")
            continue
        cid = need(entry, "id", (str, int), "lr_cameras", i)
        calib = need(entry, "calib", str, "lr_cameras", i)
        frames = need(entry, "frames", str, "lr_cameras", i)
        masks = need(entry, "masks", str, "lr_cameras", i, default=None)
        if None not in (cid, calib, frames):
            cams.append(LRCamera(str(cid), root / calib, frames, masks))
    if "lr_cameras" in data and not cams and not problems:
        problems.append(f"{where('lr_cameras')}: need at least one low-res camera")

    stills = []
    for j, entry in enumerate(need(data, "hr_stills", list) or []):
        if not isinstance(entry, dict):
            problems.append(f"{where('hr_stills', j)}: still entry must be a mapping")
            continue
        sid = need(entry, "id", (str, int), "hr_stills", j)
        image = need(entry, "image", str, "hr_stills", j)
        mask = need(entry, "mask", str, "hr_stills", j, default=None)
        if None not in (sid, image):
            stills.append(HRStill(str(sid), root / image, root / mask if mask else None))
    if "hr_stills" in data and not stills and not problems:
        problems.append(f"{where('hr_stills')}: need at least one high-res still")

    partials = need(data, "partials", dict) or {}
    p_lr = need(partials, "lr", str, "partials")
    p_hr = need(partials, "hr", str, "partials")
    meshes = need(data, "meshes", str)

    key_color, tolerance = None, 0.15
    ck = need(data, "chroma_key", dict, default=None)
    if ck is not None:
        color = ck.get("color")
        if not (isinstance(color, list) and len(color) == 3 and all(isinstance(c, (int, float)) for c in color)):
            problems.append(f"{where('chroma_key', 'color') if 'color' in ck else where('chroma_key')}: chroma_key.color must be [r, g, b]")
        else:
            key_color = tuple(float(c) for c in color)
        tolerance = ck.get("tolerance", 0.15)
        if not isinstance(tolerance, (int, float)) or tolerance <= 0:
            problems.append(f"{where('chroma_key', 'tolerance')}: chroma_key.tolerance must be positive")
            tolerance = 0.15

    pairing = need(data, "pairing", str, default="camera")
    if pairing not in ("camera", "frame"):
        problems.append(f"{where('pairing')}: pairing must be 'camera' or 'frame'")
    pairing_frame = need(data, "pairing_frame", int, default=0)
    if isinstance(pairing_frame, int) and isinstance(n_frames, int) and not 0 <= pairing_frame < n_frames:
        problems.append(f"{where('pairing_frame')}: pairing_frame must be in [0, n_frames)")
    output_dir = need(data, "output_dir", str, default="out")

    for label, items in (("lr_cameras", cams), ("hr_stills", stills)):
        ids = [x.id for x in items]
        if len(set(ids)) != len(ids):
            problems.append(f"{where(label)}: duplicate ids in {label}")

    if problems:
        raise ManifestError(problems)

    manifest = Manifest(
        root=root,
        n_frames=n_frames,
        lr_cameras=cams,
        hr_stills=stills,
        partials_lr=root / p_lr,
        partials_hr=root / p_hr,
        meshes=meshes,
        output_dir=root / output_dir,
        key_color=key_color,
        tolerance=float(tolerance),
        pairing=pairing,
        pairing_frame=pairing_frame,
    )
    try:
        missing = [str(p) for p in manifest.required_files() if not Path(p).is_file()]
    except (KeyError, IndexError, ValueError) as exc:
        raise ManifestError([f"{path.name}: bad path pattern: {exc}"]) from None
    if missing:
        raise ManifestError([f"missing file: {p}" for p in missing])
    if config is not None:
        check_config(config, manifest)
    return manifest


def kind_name(kind):
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return {str: "a string", int: "an integer", list: "a list", dict: "a mapping"}.get(kind, kind.__name__)


# -- configuration ----------------------------------------------------------------------


@dataclass
class PipelineConfig:
    ordering: str = "srat"
    couples: int | None = None  # default: min(8, number of low-res cameras)
    transfer: ct.TransferConfig = field(default_factory=ct.TransferConfig)
    sr: SRBackendSpec = field(default_factory=SRBackendSpec)
    atlas_size: int = 2048
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    coverage_threshold: float = 0.02

    def __post_init__(self):
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}; expected one of {', '.join(ORDERINGS)}")
        if self.couples is not None and self.couples < 1:
            raise ConfigError("couples must be >= 1")
        if self.atlas_size < 1 or self.jobs < 1:
            raise ConfigError("atlas_size and jobs must be >= 1")

    def n_couples(self, n_lr):
        return min(8, n_lr) if self.couples is None else self.couples


def check_config(config, manifest):
    n_lr = len(manifest.lr_cameras)
    if config.n_couples(n_lr) > n_lr:
        raise ConfigError(f"couples={config.couples} exceeds the {n_lr} low-res cameras in the manifest")


def load_config(path=None, **overrides):
    """Read a YAML pipeline configuration (all keys optional)."""
    data = {}
    if path is not None:
        try:
            data, _ = _read_yaml(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        transfer = dict(data.pop("transfer", None) or {})
        if "seed" in data:
            transfer["seed"] = data.pop("seed")
        sr = dict(data.pop("sr", None) or {})
        if "command" in sr:
            sr["command_template"] = sr.pop("command")
        return PipelineConfig(transfer=ct.TransferConfig(**transfer), sr=SRBackendSpec(**sr), **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def select_couple_cameras(n_lr, n_couples):
    """Evenly spaced camera indices ``floor(i * n_lr / n_couples)``."""
    if not 1 <= n_couples <= n_lr:
        raise ValueError("need 1 <= n_couples <= n_lr")
    return [(i * n_lr) // n_couples for i in range(n_couples)]


# -- timing -----------------------------------------------------------------------------


@dataclass
class TimingReport:
    n_frames: int
    stages: dict = field(default_factory=dict)  # name -> seconds
    items: dict = field(default_factory=dict)  # name -> processed item count

    def record(self, name, seconds, n_items):
        self.stages[name] = self.stages.get(name, 0.0) + seconds
        self.items[name] = self.items.get(name, 0) + n_items

    @property
    def total(self):
        return sum(self.stages.values())

    def per_item(self, name):
        return self.stages[name] / self.items[name] if self.items[name] else 0.0

    def per_frame(self, name):
        return self.stages[name] / self.n_frames

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "seconds", "items", "seconds_per_item", "seconds_per_frame"])
            for name in self.stages:
                w.writerow([name, f"{self.stages[name]:.6f}", self.items[name], f"{self.per_item(name):.6f}", f"{self.per_frame(name):.6f}"])
            w.writerow(["total", f"{self.total:.6f}", "", "", f"{self.total / self.n_frames:.6f}"])


# -- run ---------------------------------------------------------------------------------


@dataclass
class RunResult:
    out_dir: Path
    timing: TimingReport
    pairing: CouplePairing
    theta: ct.TPSParams
    outputs: dict = field(default_factory=dict)  # kind -> list of paths


def _pmap(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _upsample_mask(mask, factor):
    return np.repeat(np.repeat(mask, factor, axis=0), factor, axis=1)


def load_still(still):
    image, alpha = load_png(still.image, return_mask=True)
    mask = load_mask(still.mask) if still.mask is not None else alpha
    if mask is None:
        mask = np.ones(image.shape[:2], dtype=bool)
    return image, mask


class _Run:
    """Mutable state threaded through the stages of one pipeline run."""

    def __init__(self, manifest, config, out_dir, stages):
        self.stages = tuple(stages)
        self.m = manifest
        self.cfg = config
        self.out = Path(out_dir)
        self.frames = {}  # (cam_index, frame) -> (image, mask)
        self.calibs = [load_calib(c.calib) for c in manifest.lr_cameras]
        self.frame_scale = 1
        self.textures = {}  # frame -> (image, filled)
        self.pairing = None
        self.theta = None
        self.outputs = {}
        self.timing = TimingReport(manifest.n_frames)

    def keys(self):
        return [(i, f) for i in range(len(self.m.lr_cameras)) for f in range(self.m.n_frames)]

    def name(self, key):
        i, f = key
        return f"{self.m.lr_cameras[i].id}_{f:04d}"

    def emit(self, kind, path):
        self.outputs.setdefault(kind, []).append(Path(path))

    def subdir(self, name):
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def each(self, stage, items, fn, label):
        def guarded(item):
            try:
                return fn(item)
            except PipelineStageError:
                raise
            except Exception as exc:
                raise PipelineStageError(stage, label(item), exc) from exc

        return _pmap(guarded, items, self.cfg.jobs)

    # stages -----------------------------------------------------------------

    def masks(self):
        d = self.subdir("masks")

        def one(key):
            i, f = key
            cam = self.m.lr_cameras[i]
            image, alpha = load_png(self.m.frame_path(cam, f), return_mask=True)
            if self.m.key_color is not None:
                mask = chroma_key(image, self.m.key_color, self.m.tolerance)
            elif cam.masks is not None:
                mask = load_mask(self.m.mask_path(cam, f))
            elif alpha is not None:
                mask = alpha
            else:
                mask = np.ones(image.shape[:2], dtype=bool)
            if image.shape[:2] != (self.calibs[i].image_size[1], self.calibs[i].image_size[0]):
                raise ValueError("frame size does not match calibration image size")
            save_mask(mask, d / f"{self.name(key)}.png")
            return image, mask

        keys = self.keys()
        for key, value in zip(keys, self.each("masks", keys, one, self.name)):
            self.frames[key] = value
            self.emit("masks", d / f"{self.name(key)}.png")
        return len(keys)

    def pairing_stage(self):
        m = self.m
        if m.pairing == "frame":
            lr_keys = self.keys()
        else:
            lr_keys = [(i, m.pairing_frame) for i in range(len(m.lr_cameras))]
        lr_ids = [self.name(k) if m.pairing == "frame" else m.lr_cameras[k[0]].id for k in lr_keys]
        lr = [PartialTextureMap.from_png(m.lr_partial_path(m.lr_cameras[i], f), lid) for (i, f), lid in zip(lr_keys, lr_ids)]
        hr = [PartialTextureMap.from_png(m.hr_partial_path(s), s.id) for s in m.hr_stills]
        matrix = similarity_matrix(lr, hr, self.cfg.coverage_threshold)
        self.pairing = pair_couples(matrix, lr_ids, [s.id for s in m.hr_stills])
        path = self.out / "pairing.csv"
        self.pairing.to_csv(path)
        self.emit("pairing", path)
        return len(lr)

    def still_for(self, cam_index, frame):
        key = self.name((cam_index, frame)) if self.m.pairing == "frame" else self.m.lr_cameras[cam_index].id
        return self.pairing.as_dict().get(key)

    def fit(self):
        m = self.m
        stills = {s.id: s for s in m.hr_stills}
        chosen = select_couple_cameras(len(m.lr_cameras), self.cfg.n_couples(len(m.lr_cameras)))
        couples = []
        for i in chosen:
            hid = self.still_for(i, m.pairing_frame)
            if hid is None:
                log.warning("camera %s was rejected during pairing; skipping its couple", m.lr_cameras[i].id)
                continue
            couples.append((self.frames[(i, m.pairing_frame)], load_still(stills[hid])))
        if not couples:
            raise PipelineStageError("fit", "couples", "no selected camera has a paired still")
        try:
            self.theta = ct.fit_multi_couple(couples, self.cfg.transfer)
        except ct.TransferFitError as exc:
            raise PipelineStageError("fit", "couples", exc) from exc
        path = self.out / "transfer.tps"
        ct.save_tps(self.theta, path)
        self.emit("theta", path)
        return len(couples)

    def transfer_frames(self):
        d = self.subdir("frames")
        keys = self.keys()

        def one(key):
            image, mask = self.frames[key]
            return ct.apply_transfer(self.theta, image, mask), mask

        for key, value in zip(keys, self.each("transfer", keys, one, self.name)):
            self.frames[key] = value
        self._save_frames(d)
        return len(keys)

    def sr_frames(self):
        d = self.subdir("frames")
        keys = self.keys()
        factor = self.cfg.sr.factor

        def one(key):
            image, mask = self.frames[key]
            return upscale(image, self.cfg.sr), _upsample_mask(mask, factor)

        for key, value in zip(keys, self.each("sr", keys, one, self.name)):
            self.frames[key] = value
        self.calibs = [c.scaled(factor) for c in self.calibs]
        self.frame_scale *= factor
        self._save_frames(d)
        return len(keys)

    def _save_frames(self, d):
        for key, (image, mask) in self.frames.items():
            save_png(image, d / f"{self.name(key)}.png")
            save_mask(mask, self.subdir("frame_masks") / f"{self.name(key)}.png")
        self.outputs["frames"] = [d / f"{self.name(k)}.png" for k in self.keys()]

    def bake(self):
        d = self.subdir("atlas")
        size = self.cfg.atlas_size * self.frame_scale
        n_cam = len(self.m.lr_cameras)
        frames = list(range(self.m.n_frames))

        def one(f):
            mesh = load_obj(self.m.mesh_path(f))
            views = [self.frames[(i, f)] for i in range(n_cam)]
            return bake_texture(mesh, views, self.calibs, size)

        for f, atlas in zip(frames, self.each("bake", frames, one, lambda f: f"frame {f}")):
            self.textures[f] = (atlas.image, atlas.filled)
            save_png(atlas.image, d / f"frame_{f:04d}.png")
            save_mask(atlas.filled, d / f"frame_{f:04d}_filled.png")
            self.emit("atlas", d / f"frame_{f:04d}.png")
        return len(frames)

    def transfer_textures(self):
        frames = sorted(self.textures)

        def one(f):
            image, filled = self.textures[f]
            return ct.apply_transfer(self.theta, image, filled), filled

        for f, value in zip(frames, self.each("transfer", frames, one, lambda f: f"texture {f}")):
            self.textures[f] = value
        return len(frames)

    def sr_textures(self):
        frames = sorted(self.textures)
        factor = self.cfg.sr.factor

        def one(f):
            image, filled = self.textures[f]
            return upscale(image, self.cfg.sr), _upsample_mask(filled, factor)

        for f, value in zip(frames, self.each("sr", frames, one, lambda f: f"texture {f}")):
            self.textures[f] = value
        return len(frames)

    def finish(self, label):
        if self.textures and any(s.startswith("sr") or s == "transfer_textures" for s in self.stages):
            d = self.subdir("textures")
        else:
            d = None
        for f in sorted(self.textures) if d else ():
            save_png(self.textures[f][0], d / f"frame_{f:04d}.png")
            self.emit("textures", d / f"frame_{f:04d}.png")
        summary = {
            "ordering": label,
            "stages": list(self.stages),
            "n_frames": self.m.n_frames,
            "pairing": self.m.pairing,
            "sr": {"kind": self.cfg.sr.kind, "factor": self.cfg.sr.factor, "command": self.cfg.sr.command_template},
            "frames_corrected": "transfer_frames" in self.stages,
            "lr_cameras": [c.id for c in self.m.lr_cameras],
            "hr_stills": {
                s.id: {"image": str(s.image.resolve()), "mask": str(s.mask.resolve()) if s.mask else None}
                for s in self.m.hr_stills
            },
        }
        (self.out / "run.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))


_STAGE_METHODS = {
    "masks": ("masks", _Run.masks),
    "pairing": ("pairing", _Run.pairing_stage),
    "fit": ("fit", _Run.fit),
    "transfer_frames": ("transfer", _Run.transfer_frames),
    "transfer_textures": ("transfer", _Run.transfer_textures),
    "sr_frames": ("sr", _Run.sr_frames),
    "sr_textures": ("sr", _Run.sr_textures),
    "bake": ("bake", _Run.bake),
}


def run_pipeline(manifest, config, out_dir=None):
    """Run every stage of ``config.ordering``; stages are barriers.

    Outputs are written under ``out_dir`` (default: the manifest's output
    directory) and a :class:`RunResult` is returned.  A failing stage raises
    :class:`PipelineStageError`; files written so far are left in place.
    """
    return run_stages(manifest, config, ORDERINGS[config.ordering], out_dir, label=config.ordering)


def run_stages(manifest, config, stages, out_dir=None, theta=None, label="custom"):
    """Run an explicit stage list (a sub-pipeline such as masks -> bake).

    ``theta`` supplies a previously fitted color map for stage lists that
    transfer without fitting.
    """
    unknown = [s for s in stages if s not in _STAGE_METHODS]
    if unknown:
        raise ConfigError(f"unknown stages: {', '.join(unknown)}")
    needs_theta = any(s.startswith("transfer") for s in stages)
    if needs_theta and theta is None and "fit" not in stages:
        raise ConfigError("transfer stages need a fit stage or a fitted color map")
    if "fit" in stages and "pairing" not in stages:
        raise ConfigError("the fit stage needs the pairing stage")
    if any(s not in ("masks", "pairing") for s in stages) and "masks" not in stages:
        raise ConfigError("frame and texture stages need the masks stage")
    check_config(config, manifest)
    run = _Run(manifest, config, out_dir or manifest.output_dir, stages)
    run.theta = theta
    run.out.mkdir(parents=True, exist_ok=True)
    for step in stages:
        timer_name, method = _STAGE_METHODS[step]
        log.info("stage %s", step)
        t0 = time.perf_counter()
        try:
            n_items = method(run)
        except PipelineStageError:
            raise
        except Exception as exc:
            raise PipelineStageError(step, "-", exc) from exc
        run.timing.record(timer_name, time.perf_counter() - t0, n_items)
    run.finish(label)
    path = run.out / "timing.csv"
    run.timing.to_csv(path)
    run.emit("timing", path)
    return RunResult(run.out, run.timing, run.pairing, run.theta, run.outputs)


# -- evaluation -----------------------------------------------------------------------


def _ground_truth_files(ground_truth):
    if ground_truth is None:
        return []
    if isinstance(ground_truth, (str, Path)):
        p = Path(ground_truth)
        return sorted(q for q in p.glob("*.png") if not q.stem.endswith("_filled")) if p.is_dir() else [p]
    return [Path(p) for p in ground_truth]


def evaluate_sr(ground_truths, spec=None, heat_dir=None):
    """Down-then-up SR protocol over ``{name: texture}``.

    Each texture is bicubic downscaled by the backend factor and upscaled
    again; the report holds PSNR-Y and SSIM per item.  With ``heat_dir`` one
    error heatmap PNG per item is written there.
    """
    spec = spec or SRBackendSpec()
    if heat_dir is not None:
        Path(heat_dir).mkdir(parents=True, exist_ok=True)
    report = MetricReport(["psnr_y", "ssim"])
    for name, gt in ground_truths.items():
        sr = upscale(downscale_eval(gt, spec.factor), spec)
        report.add(name, psnr_y=psnr_y(sr, gt), ssim=ssim(sr, gt))
        if heat_dir is not None:
            save_png(sr_heatmap(sr, gt), Path(heat_dir) / f"{name}.png")
    return report


def evaluate_run(run_dir, ground_truth=None):
    """Write metric reports for a finished run; returns ``{name: path}``.

    ``correction.csv`` compares every corrected frame with the still its
    camera was paired with (JS and chi-squared).  When ``ground_truth``
    textures are given (a directory or a list of PNGs), each is bicubic
    downscaled by the run's SR factor, super-resolved with the run's backend
    and scored (``sr.csv``, PSNR-Y and SSIM) with one heatmap per texture.
    """
    run_dir = Path(run_dir)
    summary_path = run_dir / "run.yaml"
    if not summary_path.is_file():
        raise FileNotFoundError(f"{run_dir} has no run.yaml; run the pipeline first")
    summary = yaml.safe_load(summary_path.read_text())
    reports = {}

    if summary["frames_corrected"]:
        pairing = CouplePairing.from_csv(run_dir / "pairing.csv").as_dict()
        stills = {
            sid: HRStill(sid, Path(s["image"]), Path(s["mask"]) if s["mask"] else None)
            for sid, s in summary["hr_stills"].items()
        }
        cache = {}
        frames, refs, ids = [], [], []
        for cam in summary["lr_cameras"]:
            for f in range(summary["n_frames"]):
                name = f"{cam}_{f:04d}"
                hid = pairing.get(name if summary["pairing"] == "frame" else cam)
                if hid is None:
                    continue
                frame_png = run_dir / "frames" / f"{name}.png"
                if not frame_png.is_file():
                    raise FileNotFoundError(f"missing corrected frame {frame_png}")
                if hid not in cache:
                    cache[hid] = load_still(stills[hid])
                frames.append((load_png(frame_png), load_mask(run_dir / "frame_masks" / f"{name}.png")))
                refs.append(cache[hid])
                ids.append(name)
        report = evaluate_correction(frames, refs, ids)
        path = run_dir / "correction.csv"
        report.to_csv(path)
        reports["correction"] = path

    gt_files = _ground_truth_files(ground_truth)
    if gt_files:
        spec = SRBackendSpec(summary["sr"]["kind"], summary["sr"]["factor"], summary["sr"]["command"] or "")
        heat_dir = run_dir / "heatmaps"
        report = evaluate_sr({p.stem: load_png(p) for p in gt_files}, spec, heat_dir)
        path = run_dir / "sr.csv"
        report.to_csv(path)
        reports["sr"] = path
        reports["heatmaps"] = heat_dir
    return reports
