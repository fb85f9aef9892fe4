"""Layout guidance losses and the gradient-steered sampling loop.

Two constraints are computed from the cross-attention maps at each guided
timestep and differentiated back to the latent:

* the localized attention loss (``lac_loss``): the squared shortfall of the
  in-box share of per-object attention mass, with each object's map
  individually rescaled by its max so small-magnitude maps get moderate
  rather than runaway gradients;
* the padding-token loss (``ptc_loss``): binary cross-entropy pulling a
  blend of the start-of-text complement map and the end-of-text map toward
  the foreground target, which suppresses object response bleeding outside
  the boxes and keeps adjacent objects from fusing.

The combined loss is ``lac + alpha * ptc``. Each guided timestep runs a
fixed number of inner iterations: re-extract attention, differentiate,
step the latent downhill with a decaying step size, then hand the latent
to the frozen denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .backbone import (
    AttentionMaps,
    BackboneConfig,
    LatentState,
    ProjectionSet,
    Seeds,
    TokenSet,
    build_projections,
    cross_attention,
    denoise_step,
    effective_noise,
    embed_tokens,
    expected_latent_rms,
    init_latent,
    value_matrix,
)
from .diffmath import ContractError, ShapeError, Tape, Var
from .layout import Layout, Phrase, layout_from_dict, rasterize_box, union_mask

__all__ = [
    "EPS",
    "FrozenNorms",
    "GradCheckResult",
    "GuidanceConfig",
    "GuidedRun",
    "LossBreakdown",
    "StepRecord",
    "TargetMaps",
    "gradient_check",
    "loss_norms",
    "guided_sample",
    "lac_loss",
    "loco_loss",
    "object_attention",
    "ptc_loss",
    "ptc_maps",
    "relative_error",
    "schedule",
    "target_maps",
    "update_latent",
]

# Floor for every division denominator in the loss chain.
EPS = 1e-8
# Probability clamp for the binary cross-entropy.
BCE_CLAMP = 1e-7

SCHEDULE_KINDS = ("linear", "exponential")
PTC_TARGETS = ("foreground", "mask")


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs of the guidance loop; defaults are the tuned operating point."""

    gamma: float = 30.0
    alpha: float = 0.2
    beta: float = 0.8
    guided_steps: int = 10
    iterations_per_step: int = 5
    detach_norms: bool = False
    schedule_kind: str = "linear"
    lac_normalize: bool = True
    ptc_target: str = "foreground"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")
        if self.alpha < 0:
            raise ContractError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")
        if self.guided_steps < 0:
            raise ContractError("guided_steps must be nonnegative")
        if self.iterations_per_step < 1:
            raise ContractError("iterations_per_step must be at least 1")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ContractError(f"schedule_kind must be one of {SCHEDULE_KINDS}")
        if self.ptc_target not in PTC_TARGETS:
            raise ContractError(f"ptc_target must be one of {PTC_TARGETS}")


@dataclass(frozen=True)
class TargetMaps:
    """Detached per-iteration targets derived from the current attention."""

    per_object: np.ndarray  # (k, q): object map masked to its box
    foreground: np.ndarray  # (q,): cellwise max over objects
    union: np.ndarray  # (q,): binary OR of the box masks


@dataclass(frozen=True)
class FrozenNorms:
    """Rescaling divisors pinned to explicit values.

    Detached divisors are constants of the differentiated function, so the
    finite-difference oracle evaluates the loss with the base-point values
    held fixed; this carries them.
    """

    lac: tuple[float, ...]
    sot: float
    eot: float


@dataclass(frozen=True)
class LossBreakdown:
    lac: float
    ptc: float
    total: float
    per_object_inbox_fraction: tuple[float, ...]


def _selector(span: Sequence[int], n: int) -> np.ndarray:
    """Column-averaging selector: A @ sel is the span's mean map, (q, 1)."""
    sel = np.zeros((n, 1))
    sel[list(span), 0] = 1.0 / len(span)
    return sel


def _token_column(attn: AttentionMaps, index: int) -> Var:
    return dm.matmul(attn.a, attn.a.tape.constant(_selector((index,), attn.n)))


def object_attention(attn: AttentionMaps, phrase: Phrase) -> Var:
    """One object's attention map as a (q, 1) tape variable.

    Multi-token phrases aggregate by elementwise mean, which keeps values
    inside (0, 1).
    """
    if not phrase.span:
        raise ContractError(f"phrase {phrase.text!r} has an empty span")
    if min(phrase.span) < 1 or max(phrase.span) > attn.n - 2:
        raise ContractError(
            f"span {phrase.span} outside the content range of {attn.n} tokens"
        )
    return dm.matmul(attn.a, attn.a.tape.constant(_selector(phrase.span, attn.n)))


def _flat_masks(masks: Sequence[np.ndarray], q: int) -> list[np.ndarray]:
    out = []
    for m in masks:
        flat = np.asarray(m, dtype=np.float64).reshape(-1, 1)
        if flat.shape[0] != q:
            raise ShapeError(f"mask has {flat.shape[0]} cells, expected {q}")
        out.append(flat)
    return out


def lac_loss(attn: AttentionMaps, layout: Layout, masks: Sequence[np.ndarray],
             normalize: bool = True, detach_norms: bool = False,
             frozen_norms: Sequence[float] | None = None) -> Var:
    """Squared shortfall of the in-box share of (rescaled) attention mass.

    With ``normalize`` each object's map is divided by its max entry before
    summation; ``detach_norms`` treats those divisors as constants of the
    gradient, and ``frozen_norms`` pins them to explicit values. Zero iff
    every object's mass lies inside its mask.
    """
    if layout.k == 0:
        raise ContractError("layout has no objects")
    if len(masks) != layout.k:
        raise ContractError(f"{len(masks)} masks for {layout.k} objects")
    tape = attn.a.tape
    q = attn.values.shape[0]
    flats = _flat_masks(masks, q)

    num = None
    den = None
    for i, (phrase, flat) in enumerate(zip(layout.phrases, flats)):
        a_i = object_attention(attn, phrase)
        inbox = dm.total(a_i * tape.constant(flat))
        everywhere = dm.total(a_i)
        if normalize:
            if frozen_norms is not None:
                norm = tape.constant(frozen_norms[i])
            else:
                norm = dm.maximum(dm.max_norm(a_i), EPS)
                if detach_norms:
                    norm = dm.detach(norm)
            inbox = inbox / norm
            everywhere = everywhere / norm
        num = inbox if num is None else num + inbox
        den = everywhere if den is None else den + everywhere
    ratio = num / dm.maximum(den, EPS)
    return dm.square(1.0 - ratio)


def target_maps(attn_values: np.ndarray, layout: Layout,
                masks: Sequence[np.ndarray]) -> TargetMaps:
    """Masked object maps and their cellwise-max foreground, off the tape."""
    q, n = attn_values.shape
    flats = _flat_masks(masks, q)
    per_object = np.zeros((layout.k, q))
    for i, (phrase, flat) in enumerate(zip(layout.phrases, flats)):
        sel = _selector(phrase.span, n)
        per_object[i] = (attn_values @ sel)[:, 0] * flat[:, 0]
    foreground = per_object.max(axis=0)
    union = union_mask([m for m in masks]).reshape(-1).astype(np.float64)
    return TargetMaps(per_object=per_object, foreground=foreground, union=union)


def ptc_maps(attn: AttentionMaps, beta: float, detach_norms: bool = False,
             frozen_norms: tuple[float, float] | None = None) -> Var:
    """Blend of the SoT-complement and EoT maps, each max-rescaled, (q, 1).

    A convex combination of two maps with entries in [0, 1], so the result
    stays in [0, 1]. Divisors are floored at EPS, which maps an all-ones
    SoT map (or an all-zeros EoT map) to an exactly zero term.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    tape = attn.a.tape
    sot = _token_column(attn, attn.sot_index)
    eot = _token_column(attn, attn.eot_index)
    inverted = 1.0 - sot
    if frozen_norms is not None:
        n_sot = tape.constant(frozen_norms[0])
        n_eot = tape.constant(frozen_norms[1])
    else:
        n_sot = dm.maximum(dm.max_norm(inverted), EPS)
        n_eot = dm.maximum(dm.max_norm(eot), EPS)
        if detach_norms:
            n_sot = dm.detach(n_sot)
            n_eot = dm.detach(n_eot)
    return beta * (inverted / n_sot) + (1.0 - beta) * (eot / n_eot)


def ptc_loss(a_pt: Var, target: np.ndarray) -> Var:
    """Mean binary cross-entropy between sigmoid(a_pt) and a fixed target."""
    tape = a_pt.tape
    cells = a_pt.value.size
    y = tape.constant(np.asarray(target, dtype=np.float64).reshape(-1, 1))
    if y.value.shape != a_pt.value.shape:
        raise ShapeError(
            f"target shape {y.value.shape} does not match map {a_pt.value.shape}"
        )
    p = dm.clamp(dm.sigmoid(a_pt), BCE_CLAMP, 1.0 - BCE_CLAMP)
    good = y * dm.log(p) + (1.0 - y) * dm.log(1.0 - p)
    return (0.0 - dm.total(good)) / float(cells)


def loss_norms(attn_values: np.ndarray, layout: Layout,
               sot_index: int, eot_index: int) -> FrozenNorms:
    """The loss chain's rescaling divisors, evaluated at given attention."""
    q, n = attn_values.shape
    lac = []
    for phrase in layout.phrases:
        a_i = attn_values @ _selector(phrase.span, n)
        lac.append(max(float(a_i.max()), EPS))
    sot = max(float((1.0 - attn_values[:, sot_index]).max()), EPS)
    eot = max(float(attn_values[:, eot_index].max()), EPS)
    return FrozenNorms(lac=tuple(lac), sot=sot, eot=eot)


def loco_loss(attn: AttentionMaps, layout: Layout, masks: Sequence[np.ndarray],
              cfg: GuidanceConfig, target: TargetMaps | None = None,
              frozen_norms: FrozenNorms | None = None) -> tuple[Var, LossBreakdown]:
    """Combined loss ``lac + alpha * ptc`` on the tape, plus its breakdown.

    ``target`` defaults to maps derived from the current attention values,
    treated as constants for this iteration. ``frozen_norms`` pins the
    rescaling divisors, which the finite-difference oracle needs when the
    divisors are detached.
    """
    if target is None:
        target = target_maps(attn.values, layout, masks)
    lac = lac_loss(attn, layout, masks, normalize=cfg.lac_normalize,
                   detach_norms=cfg.detach_norms,
                   frozen_norms=frozen_norms.lac if frozen_norms else None)
    y = target.union if cfg.ptc_target == "mask" else target.foreground
    a_pt = ptc_maps(attn, cfg.beta, detach_norms=cfg.detach_norms,
                    frozen_norms=(frozen_norms.sot, frozen_norms.eot)
                    if frozen_norms else None)
    ptc = ptc_loss(a_pt, y)
    loss = lac + cfg.alpha * ptc
    breakdown = LossBreakdown(
        lac=float(lac.value),
        ptc=float(ptc.value),
        total=float(loss.value),
        per_object_inbox_fraction=_inbox_fractions(attn.values, layout, masks),
    )
    return loss, breakdown


def _inbox_fractions(attn_values: np.ndarray, layout: Layout,
                     masks: Sequence[np.ndarray]) -> tuple[float, ...]:
    q, n = attn_values.shape
    flats = _flat_masks(masks, q)
    out = []
    for phrase, flat in zip(layout.phrases, flats):
        a_i = (attn_values @ _selector(phrase.span, n))[:, 0]
        out.append(float(np.sum(a_i * flat[:, 0]) / max(np.sum(a_i), EPS)))
    return tuple(out)


def schedule(step_index: int, cfg: GuidanceConfig) -> float:
    """Step-size decay over the guided steps; strictly decreasing in (0, 1]."""
    s = cfg.guided_steps
    if not 0 <= step_index < s:
        raise ContractError(f"step index {step_index} outside [0, {s})")
    if cfg.schedule_kind == "exponential":
        return 0.5 ** step_index
    return (s - step_index) / s


def update_latent(state: LatentState, grad: np.ndarray, gamma: float,
                  lam: float) -> LatentState:
    """One descent step on the latent; the timestep is left untouched."""
    if grad.shape != state.z.shape:
        raise ShapeError(
            f"gradient shape {grad.shape} does not match latent {state.z.shape}"
        )
    return replace(state, z=state.z - gamma * lam * grad)


@dataclass(frozen=True)
class StepRecord:
    """One timestep of a run: inner-iteration losses and snapshots."""

    index: int
    t_after: int
    guided: bool
    losses: tuple[LossBreakdown, ...]
    attention: np.ndarray  # (q, n) values after updates, before the denoise
    z_after: np.ndarray


@dataclass(frozen=True)
class GuidedRun:
    layout: Layout
    config: GuidanceConfig
    backbone: BackboneConfig
    seeds: Seeds
    tokens: TokenSet
    masks: tuple[np.ndarray, ...]
    steps: tuple[StepRecord, ...]
    final_state: LatentState
    final_attention: AttentionMaps

    def loss_curve(self) -> list[LossBreakdown]:
        return [bd for step in self.steps for bd in step.losses]


def _extract(state: LatentState, tokens: TokenSet, proj: ProjectionSet,
             cfg: BackboneConfig, for_grad: bool) -> tuple[Tape, Var, AttentionMaps]:
    tape = Tape()
    z = tape.leaf(state.z) if for_grad else tape.constant(state.z)
    attn = cross_attention(tape, z, tokens, proj, resolution=cfg.resolution)
    return tape, z, attn


def guided_sample(layout: Layout, cfg: GuidanceConfig, backbone: BackboneConfig,
                  seeds: Seeds | int) -> GuidedRun:
    """Run the full trajectory: guided prefix, then plain denoising.

    Each of the first ``cfg.guided_steps`` timesteps re-extracts attention,
    differentiates the combined loss, and steps the latent
    ``cfg.iterations_per_step`` times before one denoise; the remaining
    timesteps denoise without guidance.
    """
    if isinstance(seeds, int):
        seeds = Seeds.from_master(seeds)
    if cfg.guided_steps > backbone.total_steps:
        raise ContractError(
            f"guided_steps={cfg.guided_steps} exceeds the "
            f"{backbone.total_steps}-step trajectory"
        )
    tokens = embed_tokens(layout.prompt, seeds.vocab, backbone.d_e)
    proj = build_projections(backbone, seeds.proj)
    masks = tuple(rasterize_box(b, backbone.resolution) for b in layout.boxes)
    state = init_latent(backbone, seeds.latent)
    e_v = value_matrix(tokens, proj, backbone.d_z)
    value_rms = float(np.sqrt(np.mean(e_v * e_v)))

    steps: list[StepRecord] = []
    for index in range(backbone.total_steps):
        guided = index < cfg.guided_steps
        losses: list[LossBreakdown] = []
        if guided:
            lam = schedule(index, cfg)
            for _ in range(cfg.iterations_per_step):
                tape, z, attn = _extract(state, tokens, proj, backbone, True)
                loss, breakdown = loco_loss(attn, layout, masks, cfg)
                grads = tape.backward(loss)
                state = update_latent(state, grads[z], cfg.gamma, lam)
                losses.append(breakdown)
        _, _, attn = _extract(state, tokens, proj, backbone, False)
        attn_values = attn.values
        expected = expected_latent_rms(backbone, index, value_rms)
        sigma_t = effective_noise(backbone, state.t, state.z, expected)
        state = denoise_step(state, attn_values, tokens, proj, backbone.rho,
                             sigma_t)
        steps.append(StepRecord(index=index, t_after=state.t, guided=guided,
                                losses=tuple(losses), attention=attn_values,
                                z_after=state.z))

    _, _, final_attn = _extract(state, tokens, proj, backbone, False)
    return GuidedRun(layout=layout, config=cfg, backbone=backbone, seeds=seeds,
                     tokens=tokens, masks=masks, steps=tuple(steps),
                     final_state=state, final_attention=final_attn)


# ---------------------------------------------------------------------------
# Gradient validation against central finite differences.

_CHECK_WORDS = ("cat", "dog", "bird", "car", "tree", "boat", "ball", "cup",
                "hat", "fish", "star", "frog")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference over the larger of the two infinity norms."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_coordinate: tuple[int, int]  # (pixel, channel) of the largest gap
    analytic: np.ndarray
    numeric: np.ndarray


def _random_layout(rng: np.random.Generator, n_objects: int,
                   n_content: int) -> Layout:
    words = [
        _CHECK_WORDS[i] for i in rng.choice(len(_CHECK_WORDS), size=n_content,
                                            replace=False)
    ]
    prompt = " ".join(words)
    doc: dict = {"prompt": prompt, "objects": []}
    for i in range(n_objects):
        x0 = float(rng.uniform(0.0, 0.5))
        y0 = float(rng.uniform(0.0, 0.5))
        x1 = float(rng.uniform(x0 + 0.25, 1.0))
        y1 = float(rng.uniform(y0 + 0.25, 1.0))
        doc["objects"].append({"phrase": words[i], "box": [x0, y0, x1, y1]})
    return layout_from_dict(doc)


def gradient_check(seed: int, resolution: int = 8, content_words: int = 4,
                   n_objects: int = 2, detach_norms: bool = False,
                   cfg: GuidanceConfig | None = None, h: float = 1e-5,
                   corrupt: bool = False) -> GradCheckResult:
    """Compare the combined loss gradient against central differences.

    Builds a seeded random layout and latent at the given grid size and
    differences every latent entry. Detached quantities (the cross-entropy
    target, and the rescaling divisors when ``detach_norms`` is on) are
    constants of the differentiated function, so they are held at their
    base-point values throughout. ``corrupt`` deliberately damages the
    analytic gradient, as a negative control for the harness itself.
    """
    if resolution > 16:
        raise ContractError("finite differences need a latent of at most 16x16")
    if cfg is None:
        cfg = GuidanceConfig()
    cfg = replace(cfg, detach_norms=detach_norms)
    rng = np.random.default_rng(seed)
    layout = _random_layout(rng, n_objects, content_words)
    backbone = BackboneConfig(resolution=resolution, d_e=8, d=8, d_z=8)
    seeds = Seeds.from_master(seed)
    tokens = embed_tokens(layout.prompt, seeds.vocab, backbone.d_e)
    proj = build_projections(backbone, seeds.proj)
    masks = [rasterize_box(b, resolution) for b in layout.boxes]
    z0 = rng.standard_normal((backbone.q, backbone.d_z))

    def build_loss(z_value: np.ndarray, for_grad: bool,
                   target: TargetMaps | None,
                   frozen: FrozenNorms | None):
        tape = Tape()
        z = tape.leaf(z_value) if for_grad else tape.constant(z_value)
        attn = cross_attention(tape, z, tokens, proj, resolution=resolution)
        loss, _ = loco_loss(attn, layout, masks, cfg, target=target,
                            frozen_norms=frozen)
        return tape, z, attn, loss

    tape, z, attn, loss = build_loss(z0, True, None, None)
    target = target_maps(attn.values, layout, masks)
    frozen = (loss_norms(attn.values, layout, tokens.sot_index,
                         tokens.eot_index) if detach_norms else None)
    analytic = tape.backward(loss)[z].copy()
    if corrupt:
        analytic[0, 0] += 1e-2

    flat = z0.reshape(-1).copy()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        kept = flat[i]
        flat[i] = kept + h
        _, _, _, up = build_loss(flat.reshape(z0.shape), False, target, frozen)
        flat[i] = kept - h
        _, _, _, down = build_loss(flat.reshape(z0.shape), False, target, frozen)
        flat[i] = kept
        numeric[i] = (float(up.value) - float(down.value)) / (2.0 * h)
    numeric = numeric.reshape(z0.shape)

    gap = np.abs(analytic - numeric)
    worst = int(np.argmax(gap))
    return GradCheckResult(
        max_rel_error=relative_error(analytic, numeric),
        worst_coordinate=(worst // z0.shape[1], worst % z0.shape[1]),
        analytic=analytic,
        numeric=numeric,
    )
