"""Desk-scale layout evaluation: label maps, detections, and benchmarks.

The decoded image is proxied by a per-cell label map: each cell gets the
object whose max-rescaled attention is largest there, or background when
nothing clears the threshold. A connected-component pass then plays the
role of the object detector, and standard box metrics (IoU at 0.5,
centroid-based relation checks) score layout adherence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .backbone import (AttentionMaps, BackboneConfig, Seeds,
                       build_projections, cross_attention, embed_tokens,
                       init_latent)
from .diffmath import ContractError, Tape
from .guidance import (GuidanceConfig, GuidedRun, guided_sample, loco_loss,
                       schedule, update_latent)
from .layout import BoundingBox, Layout, rasterize_box

__all__ = [
    "ARMS",
    "BenchReport",
    "Detection",
    "LayoutMetrics",
    "ObjectScore",
    "aggregate_records",
    "arm_config",
    "cross_mass_probe",
    "decode_labels",
    "detect_regions",
    "iou",
    "layout_metrics",
    "run_benchmark",
]

# Benchmark arms: no guidance, the in-box loss without per-map rescaling,
# the in-box loss alone, and the full combination with the padding-token
# loss.
ARMS = ("none", "lac_wo_norm", "lac", "lac_ptc")

DEFAULT_TAU = 0.3
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    index: int  # 0-based object index in the layout
    box: BoundingBox
    area: int
    centroid: tuple[float, float]  # normalized (x, y)


@dataclass(frozen=True)
class ObjectScore:
    index: int
    detected: bool
    iou: float
    inbox_mass: float


@dataclass(frozen=True)
class LayoutMetrics:
    objects: tuple[ObjectScore, ...]
    all_correct: bool
    relations_total: int
    relations_correct: int
    cross_box_mass: tuple[tuple[float, ...], ...]  # [i][j]: object i's mass in box j

    @property
    def mean_iou(self) -> float:
        return float(np.mean([o.iou for o in self.objects]))


def _object_maps(attn: AttentionMaps, layout: Layout) -> np.ndarray:
    """Phrase-aggregated maps, one row per object, shape (k, q)."""
    values = attn.values
    maps = np.zeros((layout.k, values.shape[0]))
    for i, phrase in enumerate(layout.phrases):
        maps[i] = values[:, list(phrase.span)].mean(axis=1)
    return maps


def decode_labels(attn: AttentionMaps, layout: Layout,
                  tau: float = DEFAULT_TAU) -> np.ndarray:
    """Cellwise argmax over max-rescaled object maps; background below tau.

    Returns a (resolution, resolution) integer grid with 0 for background
    and i+1 for object i.
    """
    if not 0.0 < tau < 1.0:
        raise ContractError(f"tau must lie in (0, 1), got {tau}")
    maps = _object_maps(attn, layout)
    peaks = np.maximum(maps.max(axis=1, keepdims=True), 1e-12)
    scaled = maps / peaks
    best = scaled.argmax(axis=0)
    best_value = scaled.max(axis=0)
    labels = np.where(best_value >= tau, best + 1, 0)
    res = attn.resolution
    return labels.reshape(res, res).astype(np.int64)


def detect_regions(labels: np.ndarray) -> list[Detection]:
    """Largest 4-connected component per object, as a tight normalized box.

    Objects with no cells are simply absent from the result.
    """
    res = labels.shape[0]
    detections: list[Detection] = []
    for value in sorted(np.unique(labels)):
        if value == 0:
            continue
        components, count = ndimage.label(labels == value)
        if count == 0:
            continue
        sizes = ndimage.sum_labels(np.ones_like(components), components,
                                   index=range(1, count + 1))
        largest = int(np.argmax(sizes)) + 1  # first max wins ties
        rows, cols = np.nonzero(components == largest)
        box = BoundingBox(
            x0=cols.min() / res,
            y0=rows.min() / res,
            x1=(cols.max() + 1) / res,
            y1=(rows.max() + 1) / res,
        )
        centroid = (
            float((cols.mean() + 0.5) / res),
            float((rows.mean() + 0.5) / res),
        )
        detections.append(Detection(index=int(value) - 1, box=box,
                                    area=int(len(rows)), centroid=centroid))
    return detections


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 1 iff they coincide."""
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _relation_holds(kind: str, ca: tuple[float, float],
                    cb: tuple[float, float]) -> bool:
    # y grows downward, so "above" means a smaller y.
    if kind == "left":
        return ca[0] < cb[0]
    if kind == "right":
        return ca[0] > cb[0]
    if kind == "above":
        return ca[1] < cb[1]
    if kind == "below":
        return ca[1] > cb[1]
    raise ContractError(f"unknown relation kind {kind!r}")


def layout_metrics(detections: Sequence[Detection], layout: Layout,
                   attn: AttentionMaps) -> LayoutMetrics:
    """Per-object detection quality plus layout-level correctness flags.

    A layout counts as correct only when every object is detected with
    IoU >= 0.5 against its ground-truth box. Relations compare detection
    centroids; an undetected endpoint makes the relation incorrect.
    """
    by_index = {d.index: d for d in detections}
    masks = [rasterize_box(b, attn.resolution) for b in layout.boxes]
    maps = _object_maps(attn, layout)
    flat_masks = np.stack([m.reshape(-1).astype(np.float64) for m in masks])

    objects = []
    for i, gt_box in enumerate(layout.boxes):
        det = by_index.get(i)
        mass = maps[i]
        inbox = float(np.sum(mass * flat_masks[i]) / max(np.sum(mass), 1e-12))
        if det is None:
            objects.append(ObjectScore(index=i, detected=False, iou=0.0,
                                       inbox_mass=inbox))
        else:
            objects.append(ObjectScore(index=i, detected=True,
                                       iou=iou(det.box, gt_box),
                                       inbox_mass=inbox))
    all_correct = all(o.detected and o.iou >= IOU_THRESHOLD for o in objects)

    correct = 0
    for rel in layout.relations:
        da, db = by_index.get(rel.a), by_index.get(rel.b)
        if da is not None and db is not None and _relation_holds(
                rel.kind, da.centroid, db.centroid):
            correct += 1

    cross = tuple(
        tuple(
            float(np.sum(maps[i] * flat_masks[j]) / max(np.sum(maps[i]), 1e-12))
            for j in range(layout.k)
        )
        for i in range(layout.k)
    )
    return LayoutMetrics(objects=tuple(objects), all_correct=all_correct,
                         relations_total=len(layout.relations),
                         relations_correct=correct, cross_box_mass=cross)


def cross_mass_probe(layout: Layout, cfg: GuidanceConfig,
                     backbone: BackboneConfig, seed: int) -> float:
    """Mean cross-box attention mass over the first guided step.

    For every ordered object pair (i, j), sums object i's attention inside
    object j's box, averaged over the inner iterations of the first guided
    timestep, where the boxes are still contested. Later in the trajectory
    any guided run drives cross mass to numerical zero, so this early
    window is where object-fusion pressure is actually measurable.
    """
    if layout.k < 2:
        raise ContractError("cross-box mass needs at least two objects")
    seeds = Seeds.from_master(seed)
    tokens = embed_tokens(layout.prompt, seeds.vocab, backbone.d_e)
    proj = build_projections(backbone, seeds.proj)
    masks = [rasterize_box(b, backbone.resolution) for b in layout.boxes]
    flat = [m.reshape(-1).astype(np.float64) for m in masks]
    state = init_latent(backbone, seeds.latent)
    lam = schedule(0, cfg)
    values = []
    for _ in range(cfg.iterations_per_step):
        tape = Tape()
        z = tape.leaf(state.z)
        attn = cross_attention(tape, z, tokens, proj,
                               resolution=backbone.resolution)
        maps = _object_maps(attn, layout)
        for i in range(layout.k):
            for j in range(layout.k):
                if i != j:
                    values.append(float((maps[i] * flat[j]).sum()))
        loss, _ = loco_loss(attn, layout, masks, cfg)
        state = update_latent(state, tape.backward(loss)[z], cfg.gamma, lam)
    return float(np.mean(values))


def arm_config(cfg: GuidanceConfig, arm: str) -> GuidanceConfig:
    if arm == "none":
        return replace(cfg, guided_steps=0)
    if arm == "lac_wo_norm":
        return replace(cfg, alpha=0.0, lac_normalize=False)
    if arm == "lac":
        return replace(cfg, alpha=0.0)
    if arm == "lac_ptc":
        return cfg
    raise ContractError(f"unknown benchmark arm {arm!r}")


def _evaluate_run(run: GuidedRun, tau: float) -> tuple[LayoutMetrics, np.ndarray]:
    labels = decode_labels(run.final_attention, run.layout, tau)
    detections = detect_regions(labels)
    return layout_metrics(detections, run.layout, run.final_attention), labels


def _record(name: str, seed: int, arm: str, cfg: GuidanceConfig,
            run: GuidedRun, metrics: LayoutMetrics) -> dict:
    curve = run.loss_curve()
    return {
        "layout": name,
        "seed": seed,
        "arm": arm,
        "gamma": cfg.gamma,
        "all_correct": metrics.all_correct,
        "mean_iou": metrics.mean_iou,
        "objects": [asdict(o) for o in metrics.objects],
        "relations_total": metrics.relations_total,
        "relations_correct": metrics.relations_correct,
        "cross_box_mass": [list(row) for row in metrics.cross_box_mass],
        "loss_curve": {
            "lac": [bd.lac for bd in curve],
            "ptc": [bd.ptc for bd in curve],
            "total": [bd.total for bd in curve],
        },
    }


def aggregate_records(records: Sequence[dict]) -> dict:
    """Aggregate metrics for one group of records (one arm or sweep point)."""
    if not records:
        return {"runs": 0}
    n = len(records)
    rel_total = sum(r["relations_total"] for r in records)
    rel_correct = sum(r["relations_correct"] for r in records)
    inbox = [o["inbox_mass"] for r in records for o in r["objects"]]
    return {
        "runs": n,
        "accuracy": 100.0 * sum(r["all_correct"] for r in records) / n,
        "mean_iou": float(np.mean([r["mean_iou"] for r in records])),
        "mean_inbox_mass": float(np.mean(inbox)),
        "relation_accuracy": (100.0 * rel_correct / rel_total
                              if rel_total else None),
    }


@dataclass
class BenchReport:
    """Benchmark results; aggregates are derivable from the records."""

    config: GuidanceConfig
    backbone: BackboneConfig
    seeds: tuple[int, ...]
    arms: tuple[str, ...]
    tau: float
    records: list[dict]
    aggregates: dict
    gamma_sweep: list[dict]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "backbone": asdict(self.backbone),
            "seeds": list(self.seeds),
            "arms": list(self.arms),
            "tau": self.tau,
            "records": self.records,
            "aggregates": self.aggregates,
            "gamma_sweep": self.gamma_sweep,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_benchmark(suite: Sequence[tuple[str, Layout]], cfg: GuidanceConfig,
                  backbone: BackboneConfig, seeds: Sequence[int],
                  gamma_sweep: Sequence[float] | None = None,
                  arms: Sequence[str] = ARMS,
                  tau: float = DEFAULT_TAU) -> BenchReport:
    """Run every (layout, seed, arm) combination and aggregate the scores.

    ``gamma_sweep`` additionally reruns the full-guidance configuration at
    each requested loss scale and reports per-scale aggregates.
    """
    if not suite:
        raise ContractError("benchmark suite is empty")
    records: list[dict] = []
    for arm in arms:
        acfg = arm_config(cfg, arm)
        for name, layout in suite:
            for seed in seeds:
                run = guided_sample(layout, acfg, backbone, seed)
                metrics, _ = _evaluate_run(run, tau)
                records.append(_record(name, seed, arm, acfg, run, metrics))

    aggregates = {
        arm: aggregate_records([r for r in records if r["arm"] == arm])
        for arm in arms
    }

    sweep: list[dict] = []
    for gamma in gamma_sweep or ():
        gcfg = replace(cfg, gamma=float(gamma))
        sweep_records = []
        for name, layout in suite:
            for seed in seeds:
                run = guided_sample(layout, gcfg, backbone, seed)
                metrics, _ = _evaluate_run(run, tau)
                sweep_records.append(
                    _record(name, seed, "gamma_sweep", gcfg, run, metrics))
        entry = {"gamma": float(gamma)}
        entry.update(aggregate_records(sweep_records))
        sweep.append(entry)

    return BenchReport(config=cfg, backbone=backbone, seeds=tuple(seeds),
                       arms=tuple(arms), tau=tau, records=records,
                       aggregates=aggregates, gamma_sweep=sweep)
