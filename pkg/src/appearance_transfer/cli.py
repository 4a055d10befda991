"""Command-line entry point.

Every subcommand accepts ``--manifest``, ``--config`` and ``--out``.  Exit
status is 0 on success, 1 when the manifest, config or arguments are invalid
and 2 when a processing stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import colortransfer as ct
from .imaging import ImageFormatError, load_png, save_png
from .pipeline import (
    ORDERINGS,
    ConfigError,
    ManifestError,
    PipelineStageError,
    evaluate_run,
    load_config,
    run_stages,
    validate_manifest,
)
from .sr import SRBackendError, upscale

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def _setup(args, ordering=None):
    config = load_config(args.config, ordering=ordering, jobs=getattr(args, "jobs", None))
    if args.manifest is None:
        raise UsageError("--manifest is required")
    manifest = validate_manifest(args.manifest, config)
    return manifest, config


def _out(args, manifest=None):
    if args.out is not None:
        return Path(args.out)
    if manifest is not None:
        return manifest.output_dir
    raise UsageError("--out is required")


def _theta(args):
    if args.theta is None:
        return None
    try:
        return ct.load_tps(args.theta)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read color map {args.theta}: {exc}") from None


def cmd_validate(args):
    manifest, config = _setup(args)
    print(
        f"manifest ok: {len(manifest.lr_cameras)} low-res cameras, {len(manifest.hr_stills)} stills, "
        f"{manifest.n_frames} frames; ordering {config.ordering}, {config.n_couples(len(manifest.lr_cameras))} couples"
    )


def _stage_command(stages, label):
    def command(args):
        manifest, config = _setup(args)
        theta = _theta(args) if hasattr(args, "theta") else None
        todo = stages
        if label == "apply" and theta is not None:
            todo = ("masks", "transfer_frames")
        elif label == "bake" and theta is not None:
            todo = ("masks", "transfer_frames", "bake")
        result = run_stages(manifest, config, todo, _out(args, manifest), theta=theta, label=label)
        for kind, paths in result.outputs.items():
            print(f"{kind}: {len(paths)} file(s)")
        print(f"wrote {result.out_dir}")

    return command


def cmd_run(args):
    manifest, config = _setup(args, ordering=args.ordering)
    result = run_stages(manifest, config, ORDERINGS[config.ordering], _out(args, manifest), label=config.ordering)
    for name, seconds in result.timing.stages.items():
        print(f"{name:10s} {seconds:9.3f} s")
    print(f"{'total':10s} {result.timing.total:9.3f} s")
    print(f"wrote {result.out_dir}")


def cmd_sr(args):
    config = load_config(args.config)
    src = Path(args.input) if args.input else None
    if src is None:
        if args.manifest is None:
            raise UsageError("sr needs --input or --manifest")
        src = validate_manifest(args.manifest).output_dir / "atlas"
    files = [src] if src.is_file() else sorted(p for p in src.glob("*.png") if not p.stem.endswith("_filled"))
    if not files:
        raise UsageError(f"no PNG textures under {src}")
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        try:
            image = load_png(path)
        except ImageFormatError as exc:
            raise UsageError(str(exc)) from None
        save_png(upscale(image, config.sr), out / path.name)
        print(f"{path.name}: {image.shape[1]}x{image.shape[0]} -> x{config.sr.factor}")


def cmd_eval(args):
    run_dir = Path(args.out) if args.out else None
    if run_dir is None and args.manifest is not None:
        run_dir = validate_manifest(args.manifest).output_dir
    if run_dir is None:
        raise UsageError("eval needs --out (the run directory) or --manifest")
    reports = evaluate_run(run_dir, args.ground_truth)
    if not reports:
        print("nothing to evaluate: no corrected frames and no ground truth given")
    for name, path in reports.items():
        print(f"{name}: {path}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="appearance-transfer",
        description="Transfer the color appearance of high-res stills onto multi-view low-res capture.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", help="dataset manifest (YAML)")
        p.add_argument("--config", help="pipeline configuration (YAML)")
        p.add_argument("--out", help="output directory (default: the manifest's output_dir)")
        p.set_defaults(func=func)
        return p

    add("validate", cmd_validate, "check a manifest and config")
    add("pair", _stage_command(("pairing",), "pair"), "pair low-res cameras with stills")
    add("fit", _stage_command(("masks", "pairing", "fit"), "fit"), "fit the color map over the couples")
    p = add("apply", _stage_command(("masks", "pairing", "fit", "transfer_frames"), "apply"), "correct every frame")
    p.add_argument("--theta", help="use this fitted color map instead of fitting")
    p = add("bake", _stage_command(("masks", "bake"), "bake"), "bake per-frame texture atlases")
    p.add_argument("--theta", help="correct frames with this color map before baking")
    p = add("sr", cmd_sr, "super-resolve textures")
    p.add_argument("--input", help="PNG file or directory (default: <output_dir>/atlas)")
    p = add("eval", cmd_eval, "write metric reports for a run directory")
    p.add_argument("--ground-truth", help="PNG file or directory of ground-truth textures for the SR protocol")
    p = add("run", cmd_run, "run a full ordering")
    p.add_argument("--ordering", choices=list(ORDERINGS), help="stage ordering (default from config, else srat)")
    p.add_argument("--jobs", type=int, help="worker count")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is a validation error here
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ManifestError, ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PipelineStageError, SRBackendError, ImageFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
