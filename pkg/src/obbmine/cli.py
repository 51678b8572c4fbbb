"""Command-line interface.

Subcommands cover the whole workflow: ``gen`` (synthetic dense scenes),
``sample`` (sparse annotation split), ``fit-entropy`` (per-category entropy
bands from the sparse labels), ``mine`` (the closed mining loop), ``eval``
(summarize a finished run), and ``report`` (render its learning curves).

Exit codes: 0 on success, 1 for usage errors (bad flags or flag
combinations), 2 for data errors (missing or malformed files).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import build_configs, dump_toml, read_config_file
from .dataset import (box_ratio, generate_scenes, load_manifest,
                      sample_sparse, save_manifest)
from .entropy import (DEFAULT_BINS, EntropyModel, collect_entropy_values,
                      fit_entropy_model)
from .errors import DataError, UsageError
from .pipeline import RunSettings, run_mining
from .report import format_summary, load_metrics, write_report

_HIST_BINS = 16  # resolution of the fit-entropy histogram CSV


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for its own errors; we keep 2 for data
    problems, so flag problems are remapped to exit code 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obbmine",
                     description="pseudo-label mining for sparsely annotated "
                                 "oriented object detection")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dense-scene dataset")
    p.add_argument("--config", type=Path, default=None,
                   help="TOML file with a [dataset] section")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="output dataset directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("sample",
                       help="keep a sparse fraction of the annotations")
    p.add_argument("--in", dest="in_dir", type=Path, required=True,
                   help="fully-annotated dataset directory")
    p.add_argument("--ratio", type=float, required=True,
                   help="target fraction of annotations to keep, in (0, 1]")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("fit-entropy",
                       help="fit per-category entropy bands from the labels")
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS,
                   help=f"gray-level histogram bins (default {DEFAULT_BINS})")
    p.add_argument("--out", type=Path, required=True,
                   help="output model JSON (histogram CSV lands beside it)")
    p.set_defaults(func=_cmd_fit_entropy)

    p = sub.add_parser("mine", help="run the closed pseudo-label mining loop")
    p.add_argument("--in", dest="in_dir", type=Path, required=True,
                   help="sparsely-annotated dataset directory")
    p.add_argument("--entropy", type=Path, default=None,
                   help="fitted entropy model JSON (required unless "
                        "--no-egpf or --baseline)")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--config", type=Path, default=None,
                   help="TOML overrides for teacher/mining/tracker/loss/"
                        "pipeline sections")
    p.add_argument("--no-egpf", action="store_true",
                   help="disable the entropy band filter")
    p.add_argument("--no-plf", action="store_true",
                   help="disable multi-epoch freezing (candidates count only "
                        "for the epoch that mined them)")
    p.add_argument("--literal-fusion", action="store_true",
                   help="average clusters over the nominal size instead of "
                        "the member count")
    p.add_argument("--baseline", action="store_true",
                   help="no mining at all: train on the sparse labels only")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for the per-scene phases")
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("eval", help="print the final metrics of a run")
    p.add_argument("--run", type=Path, required=True, help="run directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render learning curves for a run")
    p.add_argument("--run", type=Path, required=True, help="run directory")
    p.set_defaults(func=_cmd_report)
    return parser


# ------------------------------------------------------------------ helpers

def _load_dataset(path: Path):
    """(manifest, rasters) from a dataset directory."""
    manifest = load_manifest(path / "annotations.json")
    rasters = {}
    for scene in manifest.scenes:
        pgm = path / "scenes" / f"{scene.image_id}.pgm"
        rasters[scene.image_id] = io.read_pgm(pgm)
    return manifest, rasters


def _configs_from(path: Path | None):
    if path is None:
        return build_configs({})
    return build_configs(read_config_file(path), where=str(path))


# ----------------------------------------------------------------- commands

def _cmd_gen(args) -> int:
    cfg = _configs_from(args.config)["dataset"]
    manifest, rasters = generate_scenes(cfg, seed=args.seed)
    scene_dir = args.out / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(args.out / "annotations.json", manifest)
    for image_id, raster in rasters.items():
        io.write_pgm(scene_dir / f"{image_id}.pgm", raster)
    print(f"wrote {len(manifest.scenes)} scenes, "
          f"{manifest.n_instances} instances to {args.out}")
    return 0


def _cmd_sample(args) -> int:
    manifest = load_manifest(args.in_dir / "annotations.json")
    sparse = sample_sparse(manifest, args.ratio, seed=args.seed)
    scene_dir = args.out / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(args.out / "annotations.json", sparse)
    for scene in sparse.scenes:
        src = args.in_dir / "scenes" / f"{scene.image_id}.pgm"
        if not src.exists():
            raise DataError(f"{src}: missing scene raster")
        shutil.copyfile(src, scene_dir / f"{scene.image_id}.pgm")
    print(f"kept {sparse.n_labeled} of {sparse.n_instances} annotations")
    print(f"Box Ratio: {box_ratio(sparse):.3f}")
    return 0


def _cmd_fit_entropy(args) -> int:
    if args.bins < 2 or args.bins > 256:
        raise UsageError("--bins must be in [2, 256]")
    manifest, rasters = _load_dataset(args.in_dir)
    values = collect_entropy_values(manifest.scenes, rasters, bins=args.bins)
    model = fit_entropy_model(values, bins=args.bins)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    io.save_json(args.out, model.to_dict())

    hist_path = args.out.with_name(args.out.stem + "_histogram.csv")
    top = math.log(args.bins)
    rows = []
    for cat in sorted(values):
        rec = model.records[cat]
        counts, edges = np.histogram(values[cat], bins=_HIST_BINS,
                                     range=(0.0, top))
        name = manifest.categories[cat]
        for b in range(_HIST_BINS):
            rows.append((name, float(edges[b]), float(edges[b + 1]),
                         int(counts[b]), rec.mu, rec.sigma))
    io.write_csv(hist_path, io.HISTOGRAM_HEADER, rows)
    n_values = sum(len(v) for v in values.values())
    print(f"fitted {len(model.records)} categories from {n_values} labeled "
          f"regions: {args.out}")
    print(f"histogram: {hist_path}")
    return 0


def _cmd_mine(args) -> int:
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    egpf = (not args.no_egpf) and not args.baseline
    plf = (not args.no_plf) and not args.baseline
    if egpf and args.entropy is None:
        raise UsageError("--entropy is required unless --no-egpf or "
                         "--baseline is given")

    cfgs = _configs_from(args.config)
    mining_cfg = cfgs["mining"]
    if args.literal_fusion:
        mining_cfg = dataclasses.replace(mining_cfg, literal_fusion=True)
    settings = RunSettings(teacher=cfgs["teacher"], mining=mining_cfg,
                           tracker=cfgs["tracker"], loss=cfgs["loss"],
                           pipeline=cfgs["pipeline"], egpf=egpf, plf=plf,
                           baseline=args.baseline, threads=args.threads)

    manifest, rasters = _load_dataset(args.in_dir)
    model = None
    if egpf:
        model = EntropyModel.from_dict(io.load_json(args.entropy))

    args.out.mkdir(parents=True, exist_ok=True)
    # --threads changes scheduling, never results, so it stays out of the
    # snapshot: reruns of the same mining job must be byte-identical.
    snapshot = {
        "run": {
            "baseline": args.baseline,
            "egpf": egpf,
            "epochs": args.epochs,
            "literal_fusion": mining_cfg.literal_fusion,
            "plf": plf,
            "seed": args.seed,
        },
        "teacher": settings.teacher,
        "mining": mining_cfg,
        "tracker": settings.tracker,
        "loss": settings.loss,
        "pipeline": settings.pipeline,
    }
    (args.out / "config.toml").write_text(dump_toml(snapshot))

    result = run_mining(manifest, rasters, model, settings, args.epochs,
                        args.seed, out_dir=args.out)
    write_report(args.out)
    if args.epochs > 0:
        final = result.aggregate(args.epochs)
        print(f"epochs={args.epochs} frozen={result.tracker.frozen_count()} "
              f"mAP={final[2]:.4f} precision={final[3]:.4f} "
              f"recall={final[4]:.4f}")
    else:
        print("epochs=0 (nothing mined); run directory initialized")
    return 0


def _cmd_eval(args) -> int:
    rows = load_metrics(args.run)
    sys.stdout.write(format_summary(rows))
    return 0


def _cmd_report(args) -> int:
    svg_path, summary_path = write_report(args.run)
    print(f"wrote {svg_path} and {summary_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"obbmine {args.command}: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"obbmine {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
