#!/usr/bin/env python3
"""Benchmark ablations on a slice of the bundled suite.

Four arms: no guidance, the in-box loss without per-map rescaling, the
in-box loss alone, and the full combination with the padding-token loss.
A loss-scale sweep shows the rise-then-fall of layout quality: too weak
moves nothing, too strong drives the latent out of the denoiser's range.
The full 24-layout version of this is `loco bench`.
"""

from loco.backbone import BackboneConfig
from loco.evaluate import run_benchmark
from loco.guidance import GuidanceConfig
from loco.suite import bundled_suite_dir, load_suite

suite = load_suite(bundled_suite_dir())
subset = [entry for entry in suite
          if entry[0] in ("pair_cat_dog", "pair_bird_car", "fusion_cup_hat",
                          "triple_split", "quad_grid")]
print(f"running {len(subset)} layouts x 3 seeds x 4 arms ...")

report = run_benchmark(subset, GuidanceConfig(), BackboneConfig(),
                       seeds=range(3), gamma_sweep=[1.0, 5.0, 30.0, 300.0])

print(f"\n{'arm':<14} {'accuracy':>9} {'mean IoU':>9} {'in-box':>7}")
for arm in report.arms:
    agg = report.aggregates[arm]
    print(f"{arm:<14} {agg['accuracy']:8.1f}% {agg['mean_iou']:9.3f} "
          f"{agg['mean_inbox_mass']:7.3f}")

print("\nloss-scale sweep (full combination):")
for entry in report.gamma_sweep:
    bar = "#" * round(40 * entry["mean_iou"])
    print(f"  gamma {entry['gamma']:>6g}  IoU {entry['mean_iou']:.3f}  {bar}")
