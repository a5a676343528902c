"""
body-orient command line.

Commands:
    reconstruct     merge person boxes with strong/weak orientation labels
    evaluate        MAE / Acc-X / AP / Recall table for a prediction file
    nms             per-image greedy NMS over a prediction file
    plot            SVG of boxes with orientation arrows
    convert-labels  native orientation labels -> flat label file
    train-toy       desk-scale end-to-end training on synthetic scenes
    gradcheck       finite-difference check of every loss gradient
    fetch           download benchmark annotation files

Exit codes: 0 success, 1 data error, 2 configuration or usage error.
Data goes to stdout, diagnostics to stderr.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import DATASET_URLS, load_config, resolve_config_path
from .core.models import BodyOrientError, ConfigError
from .data.dataset import (convert_native_labels, load_merged_gts, load_orientation_labels,
                           load_person_annotations, reconstruct, write_merged,
                           write_orientation_labels)
from .data.formats import format_predictions, parse_predictions, read_predictions
from .detection.embedding import default_grid
from .detection.losses import loss_settings_from_config
from .detection.postprocess import SCORE_MODES, nms_per_image
from .evaluation.metrics import evaluate
from .network import fetch
from .plotting import ZERO_DIRECTIONS, plot_instances
from .training.gradcheck import run_gradcheck
from .training.toytrain import (TrainConfig, evaluate_head, sweep_lambda, sweep_tau, train,
                                write_history)

logger = logging.getLogger(__name__)


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
        force=True,
    )


def validate_config(config: Dict[str, Any]) -> None:
    """Build every typed view of the config once so errors surface before any work."""
    try:
        _check_sections(config)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config value: {exc}") from exc


def _check_sections(config: Dict[str, Any]) -> None:
    default_grid(config["grid"])
    loss_settings_from_config(config["loss"])
    TrainConfig.from_config(config)
    post = config["postprocess"]
    if not 0.0 <= float(post["conf_thresh"]) <= 1.0:
        raise ConfigError("conf_thresh must lie in [0, 1]", key="postprocess.conf_thresh")
    if not 0.0 < float(post["iou_thresh"]) < 1.0:
        raise ConfigError("iou_thresh must lie in (0, 1)", key="postprocess.iou_thresh")
    if post["score_mode"] not in SCORE_MODES:
        raise ConfigError(f"score_mode must be one of {SCORE_MODES}", key="postprocess.score_mode")
    if not 0.0 < float(config["evaluation"]["iou_thresh"]) <= 1.0:
        raise ConfigError("iou_thresh must lie in (0, 1]", key="evaluation.iou_thresh")
    if config["convention"]["zero_direction"] not in ZERO_DIRECTIONS:
        raise ConfigError(f"zero_direction must be one of {sorted(ZERO_DIRECTIONS)}",
                          key="convention.zero_direction")


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_reconstruct(args, config) -> int:
    persons = load_person_annotations(args.persons)
    labels = load_orientation_labels(args.labels)
    weak = load_orientation_labels(args.weak) if args.weak else None
    dataset = reconstruct(persons, labels, weak, permit_missing=args.permit_missing,
                          split=args.split)
    write_merged(dataset, args.out)
    stats = dataset.stats
    print(f"split={stats.split} images={stats.images} instances={stats.instances} "
          f"strong={stats.strong} weak={stats.weak} dropped={stats.dropped}")
    return 0


def cmd_evaluate(args, config) -> int:
    settings = config["evaluation"]
    iou = args.iou if args.iou is not None else float(settings["iou_thresh"])
    conf = args.conf if args.conf is not None else float(settings["conf_thresh"])
    exclude_weak = args.exclude_weak or bool(settings["exclude_weak"])
    report = evaluate(read_predictions(args.preds), load_merged_gts(args.gts), iou_thresh=iou,
                      conf_thresh=conf, exclude_weak=exclude_weak)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_table())
    return 0


def cmd_nms(args, config) -> int:
    iou = args.iou if args.iou is not None else float(config["postprocess"]["iou_thresh"])
    kept = nms_per_image(read_predictions(args.preds), iou)
    text = format_predictions(kept)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _load_plot_items(path: Path, image_id: Optional[int]) -> List:
    text = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(text)
    except json.JSONDecodeError:
        document = None
    if isinstance(document, dict) and "annotations" in document:
        items = load_merged_gts(path)
    else:
        items = parse_predictions(text, str(path))
    if image_id is not None:
        items = [item for item in items if item.image_id == image_id]
    return items


def cmd_plot(args, config) -> int:
    items = _load_plot_items(args.input, args.image_id)
    arrows = plot_instances(items, args.width, args.height, args.out, config["convention"])
    print(f"boxes={len(items)} arrows={arrows} out={args.out}")
    return 0


def cmd_convert_labels(args, config) -> int:
    labels = convert_native_labels(args.native)
    write_orientation_labels(labels, args.out)
    print(f"labels={len(labels)} out={args.out}")
    return 0


def cmd_train_toy(args, config) -> int:
    train_config = TrainConfig.from_config(config)
    if args.steps is not None:
        train_config = replace(train_config, steps=args.steps)
    if args.tau is not None:
        train_config = train_config.with_tau(args.tau)
    if args.sweep_tau:
        for tau, value in sweep_tau(train_config, args.sweep_tau).items():
            print(f"tau={tau:g} final_l_ori={value:.6f}")
        return 0
    if args.sweep_lam:
        for lam, report in sweep_lambda(train_config, args.sweep_lam).items():
            ap50 = "n/a" if report.ap50 is None else f"{report.ap50:.4f}"
            mae = "n/a" if report.mae_degrees is None else f"{report.mae_degrees:.3f}"
            print(f"lam={lam:g} ap50={ap50} mae={mae}")
        return 0

    result = train(train_config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_history(result.history, out_dir / "history.jsonl")
    result.head.save(out_dir / "head.npz")
    report = evaluate_head(result.head, train_config)
    final = result.history[-1]
    print(f"steps={len(result.history)} total={final.total:.6f} l_obj={final.l_obj:.6f} "
          f"l_box={final.l_box:.6f} l_ori={final.l_ori:.6f}")
    print(report.format_table())
    mae = "n/a" if report.mae_degrees is None else f"{report.mae_degrees:.3f}"
    print(f"MAE {mae}")
    return 0


def cmd_gradcheck(args, config) -> int:
    weights, options = loss_settings_from_config(config["loss"])
    worst, per_component = run_gradcheck(args.seeds, args.tolerance, weights=weights,
                                         options=options,
                                         ratio_threshold=float(config["grid"]["ratio_threshold"]),
                                         neighbor_cells=bool(config["grid"]["neighbor_cells"]))
    for name, error in per_component.items():
        print(f"{name}: max relative error {error:.3e}")
    passed = worst < args.tolerance
    print(f"{'PASS' if passed else 'FAIL'} max relative error {worst:.3e} over {args.seeds} seed(s)")
    return 0 if passed else 1


def cmd_fetch(args, config) -> int:
    urls = args.url or list(DATASET_URLS.values())
    for path in fetch(urls, Path(args.out_dir), config["download"]):
        print(path)
    return 0


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="body-orient",
                                     description="Joint body detection + orientation toolkit")
    parser.add_argument("--config", help="YAML config (default: $BODY_ORIENT_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="merge person boxes with orientation labels")
    p.add_argument("persons", type=Path)
    p.add_argument("labels", type=Path)
    p.add_argument("--weak", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--permit-missing", action="store_true")
    p.add_argument("--split", default="train")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="evaluate predictions against ground truth")
    p.add_argument("preds", type=Path)
    p.add_argument("gts", type=Path)
    p.add_argument("--iou", type=float)
    p.add_argument("--conf", type=float)
    p.add_argument("--exclude-weak", action="store_true")
    p.add_argument("--json", action="store_true", help="structured output instead of a table")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("nms", help="greedy NMS per image")
    p.add_argument("preds", type=Path)
    p.add_argument("--iou", type=float)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_nms)

    p = sub.add_parser("plot", help="SVG of boxes and orientation arrows")
    p.add_argument("input", type=Path, help="merged GT file or prediction file")
    p.add_argument("--width", type=float, required=True)
    p.add_argument("--height", type=float, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image-id", type=int)
    p.set_defaults(handler=cmd_plot)

    p = sub.add_parser("convert-labels", help="native orientation labels to the flat layout")
    p.add_argument("native", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_convert_labels)

    p = sub.add_parser("train-toy", help="desk-scale end-to-end training")
    p.add_argument("--out-dir", default="toy_run")
    p.add_argument("--steps", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--sweep-tau", type=float, nargs="+")
    p.add_argument("--sweep-lam", type=float, nargs="+")
    p.set_defaults(handler=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("fetch", help="download benchmark annotation files")
    p.add_argument("--url", action="append")
    p.add_argument("--out-dir", default="data")
    p.set_defaults(handler=cmd_fetch)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose)

    try:
        config = load_config(resolve_config_path(args.config))
        validate_config(config)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return 2

    try:
        return args.handler(args, config)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return 2
    except (BodyOrientError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
