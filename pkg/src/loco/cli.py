"""Command-line front end: single runs, benchmarks, and gradient checks.

Commands:

* ``loco generate --layout FILE`` runs one guided generation and writes a
  per-step loss CSV, the decoded label map, plain-PGM attention heatmaps,
  and a JSON summary.
* ``loco bench`` runs the benchmark over a suite directory (bundled suite
  by default) and writes the report JSON.
* ``loco gradcheck`` validates the loss gradient against central finite
  differences.

The ``LOCO_SEED`` environment variable supplies the default seed; flags
override values from an optional JSON config file that mirrors the
guidance-config field names.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .diffmath import ContractError, ShapeError
from .evaluate import (DEFAULT_TAU, decode_labels, detect_regions,
                       layout_metrics, run_benchmark)
from .guidance import GuidanceConfig, GuidedRun, gradient_check, guided_sample
from .layout import LayoutError, parse_layout
from .suite import bundled_suite_dir, load_suite

__all__ = ["build_parser", "main", "write_pgm"]

GRADCHECK_TOLERANCE = 1e-4


def _default_seed() -> int:
    return int(os.environ.get("LOCO_SEED", "0"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loco",
        description="Layout-guided attention steering on a toy denoiser.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--layout", type=Path, default=None,
                       help="layout JSON file (generate) or suite directory (bench)")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config mirroring the guidance-config fields")
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--guided-steps", type=int, default=None)
        p.add_argument("--iters", type=int, default=None,
                       help="latent updates per guided step")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: LOCO_SEED or 0)")
        p.add_argument("--out", type=Path, default=Path("loco_out"))
        p.add_argument("--detach-norms", action="store_true", default=None)

    gen = sub.add_parser("generate", help="run one guided generation")
    add_common(gen)

    bench = sub.add_parser("bench", help="run the layout benchmark")
    add_common(bench)
    bench.add_argument("--gamma-sweep", type=str, default=None,
                       help="comma-separated loss scales to sweep")
    bench.add_argument("--seeds", type=int, default=3,
                       help="number of seeds per layout (seed, seed+1, ...)")

    grad = sub.add_parser("gradcheck",
                          help="check the loss gradient against finite differences")
    grad.add_argument("--seed", type=int, default=None)
    grad.add_argument("--detach-norms", action="store_true", default=None,
                      help="check only the detached-divisor mode")
    grad.add_argument("--instances", type=int, default=10,
                      help="seeded instances per mode")
    grad.add_argument("--corrupt-gradient", action="store_true",
                      help=argparse.SUPPRESS)  # negative-control test hook
    return parser


def _guidance_config(args: argparse.Namespace) -> GuidanceConfig:
    """Config file values first, then flag overrides, on top of defaults."""
    values: dict = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ContractError("config file must hold a JSON object")
        known = {f.name for f in fields(GuidanceConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ContractError(f"unknown config fields: {sorted(unknown)}")
        values.update(doc)
    for flag, field in [("gamma", "gamma"), ("alpha", "alpha"),
                        ("beta", "beta"), ("guided_steps", "guided_steps"),
                        ("iters", "iterations_per_step"),
                        ("detach_norms", "detach_norms")]:
        got = getattr(args, flag, None)
        if got is not None:
            values[field] = got
    return GuidanceConfig(**values)


def write_pgm(path: Path, grid: np.ndarray) -> None:
    """Plain PGM (P2) heatmap, 255 gray levels, max-rescaled."""
    peak = max(float(grid.max()), 1e-12)
    levels = np.rint(255.0 * grid / peak).astype(int)
    rows, cols = levels.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    path.write_text("\n".join(lines) + "\n")


def _slug(text: str) -> str:
    return re.sub(r"\W+", "_", text.lower()).strip("_")


def _write_generate_artifacts(run: GuidedRun, out: Path, seed: int,
                              layout_path: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    with (out / "losses.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "iteration", "lac", "ptc", "total"])
        for step in run.steps:
            for it, bd in enumerate(step.losses):
                writer.writerow([step.index, it, repr(bd.lac), repr(bd.ptc),
                                 repr(bd.total)])
    written.append("losses.csv")

    labels = decode_labels(run.final_attention, run.layout)
    detections = detect_regions(labels)
    metrics = layout_metrics(detections, run.layout, run.final_attention)
    (out / "labels.json").write_text(json.dumps({
        "resolution": run.final_attention.resolution,
        "tau": DEFAULT_TAU,
        "labels": labels.tolist(),
    }, indent=2) + "\n")
    written.append("labels.json")

    attn = run.final_attention
    names = ["sot"] + [f"obj{i + 1}_{_slug(p.text)}"
                       for i, p in enumerate(run.layout.phrases)] + ["eot"]
    grids = [attn.token_map(attn.sot_index)]
    values = attn.values
    res = attn.resolution
    for phrase in run.layout.phrases:
        grids.append(values[:, list(phrase.span)].mean(axis=1).reshape(res, res))
    grids.append(attn.token_map(attn.eot_index))
    for name, grid in zip(names, grids):
        fname = f"heatmap_{name}.pgm"
        write_pgm(out / fname, grid)
        written.append(fname)

    curve = run.loss_curve()
    summary = {
        "layout_file": str(layout_path),
        "prompt": run.layout.prompt,
        "seed": seed,
        "guidance_enabled": run.config.guided_steps > 0,
        "guidance": asdict(run.config),
        "backbone": asdict(run.backbone),
        "latent_updates": len(curve),
        "final_losses": (asdict(curve[-1]) if curve else None),
        "metrics": {
            "all_correct": metrics.all_correct,
            "mean_iou": metrics.mean_iou,
            "objects": [asdict(o) for o in metrics.objects],
            "relations_total": metrics.relations_total,
            "relations_correct": metrics.relations_correct,
        },
        "artifacts": written + ["summary.json"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    written.append("summary.json")
    return written


def cmd_generate(args: argparse.Namespace) -> int:
    if args.layout is None:
        raise ContractError("generate requires --layout FILE")
    layout = parse_layout(Path(args.layout).read_text())
    cfg = _guidance_config(args)
    seed = args.seed if args.seed is not None else _default_seed()
    run = guided_sample(layout, cfg, BackboneConfig(), seed)
    written = _write_generate_artifacts(run, args.out, seed, args.layout)
    print(f"wrote {len(written)} artifacts to {args.out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        raise ContractError("bench needs at least one seed per layout")
    suite_dir = args.layout if args.layout is not None else bundled_suite_dir()
    suite = load_suite(suite_dir)
    cfg = _guidance_config(args)
    seed = args.seed if args.seed is not None else _default_seed()
    seeds = list(range(seed, seed + args.seeds))
    sweep = None
    if args.gamma_sweep:
        sweep = [float(v) for v in args.gamma_sweep.split(",") if v.strip()]
    report = run_benchmark(suite, cfg, BackboneConfig(), seeds,
                           gamma_sweep=sweep)
    args.out.mkdir(parents=True, exist_ok=True)
    report_path = args.out / "bench_report.json"
    report_path.write_text(report.to_json() + "\n")

    print(f"{'arm':<12} {'acc%':>6} {'mIoU':>6} {'inbox':>6} {'rel%':>6}")
    for arm in report.arms:
        agg = report.aggregates[arm]
        rel = agg["relation_accuracy"]
        print(f"{arm:<12} {agg['accuracy']:6.1f} {agg['mean_iou']:6.3f} "
              f"{agg['mean_inbox_mass']:6.3f} "
              f"{rel if rel is None else format(rel, '6.1f')}")
    for entry in report.gamma_sweep:
        print(f"gamma={entry['gamma']:<8g} acc={entry['accuracy']:5.1f}% "
              f"mIoU={entry['mean_iou']:.3f}")
    print(f"report: {report_path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.instances < 1:
        raise ContractError("gradcheck needs at least one instance")
    seed = args.seed if args.seed is not None else _default_seed()
    modes = [True] if args.detach_norms else [False, True]
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_where: tuple[int, int] | None = None
    for i in range(args.instances):
        content = int(rng.integers(2, 7))  # 4..8 tokens after SoT/EoT
        objects = int(rng.integers(1, min(content, 2) + 1))
        for detach in modes:
            result = gradient_check(seed + i, resolution=8,
                                    content_words=content, n_objects=objects,
                                    detach_norms=detach,
                                    corrupt=args.corrupt_gradient)
            print(f"seed={seed + i} tokens={content + 2} detach={detach}: "
                  f"rel_err={result.max_rel_error:.3e}")
            if result.max_rel_error > worst:
                worst = result.max_rel_error
                worst_where = result.worst_coordinate
    print(f"max relative error: {worst:.3e}")
    if worst > GRADCHECK_TOLERANCE:
        print(f"FAIL: tolerance {GRADCHECK_TOLERANCE:g} exceeded at "
              f"latent coordinate {worst_where}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_gradcheck(args)
    except (LayoutError, ContractError, ShapeError, OSError,
            json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
