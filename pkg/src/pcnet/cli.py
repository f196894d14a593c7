"""``pcnet`` command line: stats, eval-maps, train, test, ablate, synth.

Exit codes: 0 success, 1 runtime error, 2 invalid input or configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from . import __version__
from .config import TrainConfig, build_config, dump_config
from .core import STRATEGY_CODES, ScoreMap, resize_map
from .dataset import compute_stats, export_stats_csv, generate_synthetic, load_manifest, load_object_mask
from .metrics import aggregate, evaluate_image

log = logging.getLogger("pcnet")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
MAP_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class InputError(ValueError):
    """Bad command-line input (exit code 2)."""


# --------------------------------------------------------------------------
# helpers


def _config(args) -> TrainConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "deterministic", False):
        overrides.append("deterministic=true")
    return build_config(args.config, overrides)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_pred(item: str):
    name, sep, path = item.partition("=")
    if not sep:
        path, name = item, Path(item).name
    if not name or not path:
        raise InputError(f"--pred expects NAME=DIR, got {item!r}")
    return name, Path(path)


def find_map(pred_dir: Path, sample_id: str) -> Optional[Path]:
    for suffix in MAP_SUFFIXES:
        p = pred_dir / f"{sample_id}{suffix}"
        if p.is_file():
            return p
    return None


def read_prediction(path: Path, shape) -> ScoreMap:
    """8-bit map -> [0, 1], min-max normalised, resized to the ground truth if needed."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    lo, hi = arr.min(), arr.max()
    if hi > lo:
        arr = (arr - lo) / (hi - lo)
    pred = ScoreMap(arr)
    if pred.shape != tuple(shape):
        pred = resize_map(pred, shape[0], shape[1], "bilinear")
    return pred


def _print_table(md: str) -> None:
    sys.stdout.write(md if md.endswith("\n") else md + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    from .plotting import plot_stats

    manifest = load_manifest(args.root, args.split, workers=args.workers)
    stats = compute_stats(manifest)
    out = _out(args, "stats")
    paths = export_stats_csv(stats, out)
    if not args.no_plots:
        paths.update(plot_stats(stats, out))
    print(f"{len(manifest)} images, {len(stats.category_histogram)} categories ({args.split})")
    print("strategy,images,fraction,categories,category_fraction")
    for c in STRATEGY_CODES:
        print(
            f"{c},{stats.strategy_counts[c]},{stats.strategy_distribution[c]:.4f},"
            f"{stats.category_strategy_counts[c]},{stats.category_strategy_distribution[c]:.4f}"
        )
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def _score_method(name, pred_dir, manifest, allow_partial, workers):
    missing = [rec.id for rec in manifest if find_map(pred_dir, rec.id) is None]
    for sid in missing:
        print(f"{name}: missing prediction for {sid} in {pred_dir}", file=sys.stderr)
    if missing and not allow_partial:
        print(f"{name}: excluded ({len(missing)} missing maps; use --allow-partial)", file=sys.stderr)
        return None
    records = [rec for rec in manifest if rec.id not in set(missing)]
    if not records:
        return None

    def score(rec):
        gt = load_object_mask(rec)
        return rec, evaluate_image(read_prediction(find_map(pred_dir, rec.id), gt.shape), gt)

    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        scored = list(pool.map(score, records))
    return aggregate(scored, slice_by="all")


def cmd_eval_maps(args) -> int:
    from .plotting import plot_curves
    from .report import read_scores_file, row_from_report, write_curves_csv, write_leaderboard, write_slices_csv

    preds = [_parse_pred(p) for p in args.pred or []]
    if not preds and not args.scores_file:
        raise InputError("eval-maps needs at least one --pred NAME=DIR or --scores-file")
    names = [n for n, _ in preds]
    if len(set(names)) != len(names):
        raise InputError("duplicate method names in --pred")
    out = _out(args, "leaderboard")
    rows, curves = [], {}
    if preds:
        if not args.root:
            raise InputError("--root is required with --pred")
        manifest = load_manifest(args.root, args.split, workers=args.workers)
        for name, pred_dir in preds:
            if not pred_dir.is_dir():
                raise InputError(f"{name}: prediction directory {pred_dir} does not exist")
            report = _score_method(name, pred_dir, manifest, args.allow_partial, args.workers)
            if report is None:
                continue
            rows.append(row_from_report(name, report))
            curve_path = write_curves_csv(report, out / "curves" / f"{name}.csv")
            write_slices_csv(report, out / "slices" / f"{name}.csv")
            curves[name] = {
                "precision": report.precision_curve,
                "recall": report.recall_curve,
                "f_beta": report.f_curve,
            }
            log.info("%s: %d images, curves in %s", name, report.n_images, curve_path)
    if args.scores_file:
        rows.extend(read_scores_file(args.scores_file))
    if not rows:
        print("no method could be scored", file=sys.stderr)
        return EXIT_INPUT
    paths = write_leaderboard(rows, out)
    if curves and not args.no_plots:
        plot_curves(curves, out)
    _print_table(paths["markdown"].read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_train(args) -> int:
    from .engine import read_curve, train
    from .plotting import plot_training_curve
    from .report import write_test_report

    cfg = _config(args)
    out = _out(args, "run")
    dump_config(cfg, out / "config.yaml")
    manifest = load_manifest(args.root, args.split, workers=args.workers)
    eval_split = args.eval_split if args.eval_split is not None else cfg.eval_split
    eval_manifest = load_manifest(args.root, eval_split, workers=args.workers) if eval_split else None
    art = train(manifest, cfg, out, eval_manifest=eval_manifest)
    if not args.no_plots:
        plot_training_curve(read_curve(art.curve_csv), out / "loss_curve.png")
    write_test_report("PCNet", art.report, out / "eval")
    print(f"trained {art.steps} steps in {art.seconds:.1f}s; checkpoint {art.checkpoint}")
    if art.best_checkpoint:
        print(f"best Sα {art.best_s_alpha:.4f}: {art.best_checkpoint}")
    _print_table((out / "eval" / "test_report.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_test(args) -> int:
    from .engine import evaluate
    from .plotting import plot_curves
    from .report import write_test_report

    cfg = _config(args) if (args.config or args.set) else None
    manifest = load_manifest(args.root, args.split, workers=args.workers)
    if not args.self_test and not args.checkpoint:
        raise InputError("test needs --checkpoint (or --self-test)")
    out = _out(args, "test")
    report = evaluate(
        manifest,
        args.checkpoint,
        cfg,
        iterations=args.iterations,
        self_test=args.self_test,
        save_dir=out / "maps" if args.save_maps else None,
    )
    paths = write_test_report(args.name, report, out)
    if not args.no_plots:
        c = {"precision": report.precision_curve, "recall": report.recall_curve, "f_beta": report.f_curve}
        plot_curves({args.name: c}, out)
    _print_table(paths["markdown"].read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .engine import AXES, ablation_suite
    from .report import write_ablation_tables

    cfg = _config(args)
    axes = AXES if args.axis == "all" else (args.axis,)
    out = _out(args, "ablation")
    manifest = load_manifest(args.root, args.split, workers=args.workers)
    eval_split = args.eval_split if args.eval_split is not None else cfg.eval_split
    eval_manifest = load_manifest(args.root, eval_split, workers=args.workers) if eval_split else None
    if args.resolutions and any(r % 32 for r in args.resolutions):
        raise InputError("--resolutions must be multiples of 32")
    tables = ablation_suite(manifest, cfg, out, eval_manifest, axes=axes, resolutions=args.resolutions)
    write_ablation_tables(tables, out)
    for axis in axes:
        print(f"## {axis}")
        _print_table((out / f"ablation_{axis}.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out or "synthetic")
    m = generate_synthetic(args.seed if args.seed is not None else 0, args.n, args.size, args.difficulty, root=out)
    print(f"wrote {len(m)} samples to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcnet", description="PCNet training and PlantCamo benchmarking")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, split="full"):
        sp.add_argument("--root", help="dataset root (Image/, GT/, Instance/, annotations.json)")
        sp.add_argument("--split", default=split, choices=("full", "train", "test"))
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel workers for loading / scoring")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    def run_opts(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--deterministic", action="store_true")

    sp = sub.add_parser("stats", help="dataset statistics CSVs and figures")
    common(sp)
    sp.set_defaults(func=cmd_stats, needs_root=True)

    sp = sub.add_parser("eval-maps", help="score prediction-map directories into a leaderboard")
    common(sp, split="test")
    sp.add_argument("--pred", action="append", metavar="NAME=DIR", help="method name and map directory (repeatable)")
    sp.add_argument("--scores-file", help="CSV of published scalar scores to include in the leaderboard")
    sp.add_argument("--allow-partial", action="store_true", help="score methods with missing maps on the rest")
    sp.set_defaults(func=cmd_eval_maps, needs_root=False)

    sp = sub.add_parser("train", help="train PCNet")
    common(sp, split="train")
    run_opts(sp)
    sp.add_argument("--eval-split", help="split for best-checkpoint tracking and the final report")
    sp.set_defaults(func=cmd_train, needs_root=True)

    sp = sub.add_parser("test", help="evaluate a checkpoint")
    common(sp, split="test")
    run_opts(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--iterations", type=int, help="override the number of feedback passes")
    sp.add_argument("--self-test", action="store_true", help="score ground truth against itself")
    sp.add_argument("--save-maps", action="store_true", help="write predicted maps as PNGs")
    sp.add_argument("--name", default="PCNet", help="method name in the report")
    sp.set_defaults(func=cmd_test, needs_root=True)

    sp = sub.add_parser("ablate", help="component / iteration / resolution ablations")
    common(sp, split="train")
    run_opts(sp)
    sp.add_argument("--axis", default="all", choices=("components", "iterations", "resolution", "all"))
    sp.add_argument("--resolutions", type=int, nargs="+", help="input sizes for the resolution axis")
    sp.add_argument("--eval-split")
    sp.set_defaults(func=cmd_ablate, needs_root=True)

    sp = sub.add_parser("synth", help="generate a synthetic PlantCamo-format dataset")
    sp.add_argument("--out", help="output root")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--difficulty", default="hard", choices=("easy", "hard"))
    sp.set_defaults(func=cmd_synth, needs_root=False)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_root", False) and not args.root:
        print(f"error: {args.command} requires --root", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ValueError as exc:
        # ConfigError, DatasetError, MapError and InputError are all ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
