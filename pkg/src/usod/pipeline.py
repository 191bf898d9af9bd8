"""Desk-scale two-stage saliency pipeline driven by per-pixel logits.

Stage 1 distils a saliency cue: the prediction is ``sigmoid(a + theta)``
where ``a`` is a fixed, image-derived activation map standing in for a
frozen pre-trained backbone and ``theta`` are trainable per-pixel logits
starting at zero. Stage 2 trains fresh logits against a pseudo-label that
is refreshed once per epoch by self-rectify refinement.

Gradient steps act on the summed (not averaged) loss, i.e. every loss
gradient is multiplied by the pixel count, so the learning rate is a
per-pixel step size independent of resolution.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Image, NumericalError, SaliencyMap, save_image, save_map
from .curriculum import CurriculumSchedule, hard_sample_mask, pcl_sd_loss, threshold_at
from .losses import (
    LossWeights,
    btm_loss,
    iou_loss,
    random_scale_transform,
    sc_loss_round_trip,
    texture_vector,
)
from .metrics import mae
from .refiner import RefinerConfig, affinity_kernel, refine
from .spr import SprWeights, posterior_rectify, spr_update

__all__ = [
    "PipelineConfig",
    "Stage1Result",
    "Stage2Result",
    "SyntheticScene",
    "activation_map",
    "binary_iou",
    "generate_scene",
    "is_collapsed",
    "load_config",
    "polarity_best_iou",
    "run_demo",
    "scene_seed",
    "stage1_optimize",
    "stage2_refine",
]

logger = logging.getLogger(__name__)

COLLAPSE_FRACTION = 0.95
STAGE2_INIT_EPS = 0.05  # logits start within +-2.94, off the flat tails of the sigmoid


@dataclass(frozen=True)
class PipelineConfig:
    p0: float = 0.2
    slope: float = 0.6
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    spr: SprWeights = field(default_factory=SprWeights)
    loss: LossWeights = field(default_factory=LossWeights)
    stage1_epochs: int = 20
    stage2_epochs: int = 10
    steps_per_epoch: int = 50
    lr1: float = 0.5
    lr2: float = 0.5
    scale_range: tuple[float, float] = (0.75, 1.25)
    seed: int = 0
    activation_gain: float = 0.5
    scene_size: int = 64
    scene_contrast: float = 1.0
    scene_noise: float = 0.1

    def __post_init__(self):
        for name in ("stage1_epochs", "stage2_epochs", "steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.lr1 > 0 and self.lr2 > 0):
            raise ValueError("learning rates must be > 0")
        lo, hi = self.scale_range
        if not 0.5 <= lo <= hi <= 2.0:
            raise ValueError(f"scale_range must lie within [0.5, 2.0], got {self.scale_range}")
        if self.activation_gain < 0:
            raise ValueError("activation_gain must be >= 0")
        # validates p0/slope early
        self.schedule

    @property
    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(self.p0, self.slope, self.stage1_epochs)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in _flatten(self).items())


# --- config file -------------------------------------------------------------

_NESTED = {
    "omega1": ("refiner", "omega1"),
    "omega2": ("refiner", "omega2"),
    "omega3": ("refiner", "omega3"),
    "refiner_iterations": ("refiner", "iterations"),
    "sigma_floor": ("refiner", "sigma_floor"),
    "lambda1": ("spr", "lambda1"),
    "lambda2": ("spr", "lambda2"),
    "lambda3": ("spr", "lambda3"),
    "gamma": ("loss", "gamma"),
}
_INT_KEYS = {
    "refiner_iterations", "stage1_epochs", "stage2_epochs", "steps_per_epoch", "seed", "scene_size"
}


def _flatten(cfg: PipelineConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in ("refiner", "spr", "loss"):
            continue
        if f.name == "scale_range":
            out["scale_min"], out["scale_max"] = value
        else:
            out[f.name] = value
    for key, (group, attr) in _NESTED.items():
        out[key] = getattr(getattr(cfg, group), attr)
    return dict(sorted(out.items()))


def config_from_mapping(values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from flat ``key -> value`` settings; unknown keys raise."""
    flat = _flatten(base or PipelineConfig())
    unknown = sorted(set(values) - set(flat))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    flat.update(values)
    typed = {k: (int(v) if k in _INT_KEYS else float(v)) for k, v in flat.items()}
    groups = {"refiner": {}, "spr": {}, "loss": {}}
    top = {}
    for k, v in typed.items():
        if k in _NESTED:
            group, attr = _NESTED[k]
            groups[group][attr] = v
        else:
            top[k] = v
    top["scale_range"] = (top.pop("scale_min"), top.pop("scale_max"))
    return PipelineConfig(
        refiner=RefinerConfig(**groups["refiner"]),
        spr=SprWeights(**groups["spr"]),
        loss=LossWeights(**groups["loss"]),
        **top,
    )


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return config_from_mapping(values, base)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- synthetic scenes --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: Image
    ground_truth: SaliencyMap
    descriptor: dict


def generate_scene(seed, width: int = 64, height: int = 64, contrast: float = 1.0, noise: float = 0.0) -> SyntheticScene:
    """1-3 rectangles/ellipses at one intensity on a contrasting background."""
    if width < 16 or height < 16:
        raise ValueError("scene must be at least 16x16")
    if not 0 < contrast <= 1:
        raise ValueError("contrast must lie in (0, 1]")
    if not 0 <= noise <= 0.3:
        raise ValueError("noise must lie in [0, 0.3]")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width] + 0.5
    while True:
        mask = np.zeros((height, width), dtype=bool)
        shapes = []
        for _ in range(int(rng.integers(1, 4))):
            kind = "ellipse" if rng.random() < 0.5 else "rectangle"
            cy, cx = rng.uniform(0.2, 0.8) * height, rng.uniform(0.2, 0.8) * width
            ry, rx = rng.uniform(0.08, 0.3) * height, rng.uniform(0.08, 0.3) * width
            if kind == "ellipse":
                inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
            else:
                inside = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
            mask |= inside
            shapes.append((kind, float(cy), float(cx), float(ry), float(rx)))
        fraction = float(mask.mean())
        if 0.05 <= fraction <= 0.6:
            break
    polarity = 1.0 if rng.random() < 0.5 else -1.0
    fg_level = 0.5 + polarity * contrast / 2
    bg_level = 0.5 - polarity * contrast / 2
    gray = np.where(mask, fg_level, bg_level)
    values = np.repeat(gray[:, :, None], 3, axis=2)
    if noise > 0:
        values = np.clip(values + rng.uniform(-noise, noise, size=values.shape), 0.0, 1.0)
    descriptor = {
        "shapes": shapes,
        "foreground_level": fg_level,
        "background_level": bg_level,
        "contrast": contrast,
        "noise": noise,
        "area_fraction": fraction,
    }
    return SyntheticScene(Image(values), SaliencyMap(mask.astype(np.float64)), descriptor)


def scene_seed(master_seed: int, index: int) -> int:
    """Independent per-scene seed, so scene order and concurrency cannot matter."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


# --- helpers -----------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation_map(img) -> np.ndarray:
    """Zero-mean, unit-variance colour-contrast activation of an image.

    Distance of each 3x3-box-blurred pixel colour from the image mean colour,
    standardized over the image. Plays the role of the frozen backbone's
    activation that the cue extractor distils.
    """
    values = img.values if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    h, w = values.shape[:2]
    padded = np.pad(values, ((1, 1), (1, 1), (0, 0)), mode="edge")
    blur = sum(padded[r : r + h, c : c + w] for r in range(3) for c in range(3)) / 9.0
    dist = np.sqrt(((blur - values.reshape(-1, values.shape[2]).mean(axis=0)) ** 2).sum(axis=2))
    std = dist.std()
    if std < 1e-12:
        return np.zeros((h, w))
    return (dist - dist.mean()) / std


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def polarity_best_iou(s, gt) -> tuple[float, int]:
    """IoU of ``S > 0.5`` against the truth or its complement, whichever is higher.

    Returns ``(iou, polarity)`` with polarity ``+1`` for the truth itself.
    """
    pred = np.asarray(s) > 0.5
    truth = np.asarray(gt) >= 0.5
    direct, flipped = binary_iou(pred, truth), binary_iou(pred, ~truth)
    return (direct, 1) if direct >= flipped else (flipped, -1)


def is_collapsed(s, fraction: float = COLLAPSE_FRACTION) -> bool:
    above = float((np.asarray(s) > 0.5).mean())
    return max(above, 1.0 - above) > fraction


def _scene_parts(scene_or_image):
    if isinstance(scene_or_image, SyntheticScene):
        return scene_or_image.image, scene_or_image.ground_truth
    if isinstance(scene_or_image, Image):
        return scene_or_image, None
    return Image(scene_or_image), None


def _check_finite(value: float, stage: str, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{stage}: non-finite loss {value} at epoch {epoch}, step {step}")


# --- stage 1 -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stage1Result:
    saliency: SaliencyMap
    logits: np.ndarray
    loss_trace: list[float]
    thresholds: list[float]


def stage1_optimize(scene, cfg: PipelineConfig = PipelineConfig(), *, curriculum: bool = True, seed: int | None = None) -> Stage1Result:
    """Optimize the cue-extractor objective over per-pixel logits.

    With ``curriculum=False`` the hard-sample threshold is held at 0 so every
    pixel takes part from the first step.
    """
    img, _ = _scene_parts(scene)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    prior = cfg.activation_gain * activation_map(img)
    tex_img = texture_vector(img)
    theta = np.zeros(prior.shape)
    n = theta.size
    schedule = cfg.schedule
    loss_trace, thresholds = [], []

    for epoch in range(cfg.stage1_epochs):
        s = _sigmoid(prior + theta)
        p = threshold_at(schedule, epoch) if curriculum else 0.0
        mask = hard_sample_mask(s, p)
        recipe = random_scale_transform(s, seed=rng, scale_range=cfg.scale_range).recipe
        thresholds.append(p)
        total = 0.0
        for step in range(cfg.steps_per_epoch):
            s = _sigmoid(prior + theta)
            parts = (pcl_sd_loss(s, mask), btm_loss(s, tex_img), sc_loss_round_trip(s, recipe))
            value = parts[0].value + cfg.loss.gamma * parts[1].value + parts[2].value
            _check_finite(value, "stage 1", epoch, step)
            total += value
            grad = parts[0].gradient + cfg.loss.gamma * parts[1].gradient + parts[2].gradient
            # easy-sample exclusion applies to the whole backward pass
            theta -= cfg.lr1 * n * (grad * mask.bits) * s * (1.0 - s)
        loss_trace.append(total / cfg.steps_per_epoch)
        logger.debug("stage 1 epoch %d: p=%.3f loss=%.5f", epoch, p, loss_trace[-1])

    s = _sigmoid(prior + theta)
    return Stage1Result(SaliencyMap(s), prior + theta, loss_trace, thresholds)


# --- stage 2 -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stage2Result:
    saliency: SaliencyMap
    pseudo_label: SaliencyMap
    initial_label: SaliencyMap
    label_mae_trace: list[float] = field(default_factory=list)
    polarity: int = 1
    loss_trace: list[float] = field(default_factory=list)


def stage2_refine(
    scene,
    cue,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    use_spr: bool = True,
    seed: int | None = None,
    ground_truth=None,
) -> Stage2Result:
    """Train the detector on a pseudo-label that SPR refreshes every epoch.

    ``label_mae_trace`` holds ``mae(G, truth)`` for the initial label and
    after every epoch, against the truth orientation closest to the initial
    label; it is empty when no ground truth is known.
    """
    img, gt = _scene_parts(scene)
    if ground_truth is not None:
        gt = ground_truth
    cue = np.asarray(cue, dtype=np.float64)
    if cue.shape != (img.height, img.width):
        raise ValueError(f"cue shape {cue.shape} does not match image {(img.height, img.width)}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    aff = affinity_kernel(img, cfg.refiner)
    label = refine(cue, aff, cfg.refiner.iterations)
    initial = label

    truth, polarity = None, 1
    if gt is not None:
        truth = np.asarray(gt, dtype=np.float64)
        if mae(label, 1.0 - truth) < mae(label, truth):
            truth, polarity = 1.0 - truth, -1
    trace = [mae(label, truth)] if truth is not None else []

    c = np.clip(cue, STAGE2_INIT_EPS, 1.0 - STAGE2_INIT_EPS)
    theta = np.log(c) - np.log1p(-c)
    n = theta.size
    loss_trace = []
    for epoch in range(cfg.stage2_epochs):
        recipe = random_scale_transform(cue, seed=rng, scale_range=cfg.scale_range).recipe
        total = 0.0
        for step in range(cfg.steps_per_epoch):
            s = _sigmoid(theta)
            a, b = iou_loss(s, label), sc_loss_round_trip(s, recipe)
            value = a.value + b.value
            _check_finite(value, "stage 2", epoch, step)
            total += value
            theta -= cfg.lr2 * n * (a.gradient + b.gradient) * s * (1.0 - s)
        loss_trace.append(total / cfg.steps_per_epoch)
        if use_spr:
            s = SaliencyMap(_sigmoid(theta))
            label = spr_update(refine(s, aff, cfg.refiner.iterations), posterior_rectify(s), label, cfg.spr)
        if truth is not None:
            trace.append(mae(label, truth))

    return Stage2Result(
        SaliencyMap(_sigmoid(theta)), label, initial, trace, polarity, loss_trace
    )


# --- demo --------------------------------------------------------------------

DEMO_COLUMNS = [
    "scene", "curriculum", "spr", "cue_iou", "cue_collapsed", "iou", "mae",
    "label_mae_initial", "label_mae_final", "polarity", "collapsed",
]


@dataclass(frozen=True)
class DemoReport:
    rows: list[dict]
    collapses: dict
    csv_text: str
    summary_text: str


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def run_demo(cfg: PipelineConfig = PipelineConfig(), scenes: int = 4, out_dir=None) -> DemoReport:
    """Curriculum on/off x SPR on/off over seeded synthetic scenes.

    Writes ``results.csv``, ``summary.csv`` and PGM/PPM maps under ``out_dir``
    when given.
    """
    if scenes < 2:
        raise ValueError("demo needs at least 2 scenes")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "maps").mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(scenes):
        sseed = scene_seed(cfg.seed, k)
        scene = generate_scene(sseed, cfg.scene_size, cfg.scene_size, cfg.scene_contrast, cfg.scene_noise)
        gt = scene.ground_truth.values
        name = f"scene{k:03d}"
        if out is not None:
            save_image(scene.image, out / "maps" / f"{name}_image.ppm")
            save_map(scene.ground_truth, out / "maps" / f"{name}_gt.pgm")
        for curriculum in (True, False):
            s1 = stage1_optimize(scene, cfg, curriculum=curriculum, seed=sseed)
            cue = s1.saliency.values
            cue_iou, _ = polarity_best_iou(cue, gt)
            tag = "cur" if curriculum else "nocur"
            if out is not None:
                save_map(s1.saliency, out / "maps" / f"{name}_cue_{tag}.pgm")
            for use_spr in (True, False):
                s2 = stage2_refine(scene, cue, cfg, use_spr=use_spr, seed=sseed + 1)
                final = s2.saliency.values
                iou, polarity = polarity_best_iou(final, gt)
                truth = gt if polarity == 1 else 1.0 - gt
                rows.append({
                    "scene": name,
                    "curriculum": curriculum,
                    "spr": use_spr,
                    "cue_iou": cue_iou,
                    "cue_collapsed": is_collapsed(cue),
                    "iou": iou,
                    "mae": mae(final, truth),
                    "label_mae_initial": s2.label_mae_trace[0],
                    "label_mae_final": s2.label_mae_trace[-1],
                    "polarity": polarity,
                    "collapsed": is_collapsed(final),
                })
                if out is not None:
                    spr_tag = "spr" if use_spr else "nospr"
                    save_map(s2.saliency, out / "maps" / f"{name}_final_{tag}_{spr_tag}.pgm")

    summary = []
    collapses = {}
    for curriculum in (True, False):
        for use_spr in (True, False):
            sel = [r for r in rows if r["curriculum"] == curriculum and r["spr"] == use_spr]
            key = ("curriculum" if curriculum else "no_curriculum") + ("+spr" if use_spr else "")
            collapses[key] = sum(r["cue_collapsed"] for r in sel)
            summary.append({
                "configuration": key,
                "cue_collapses": collapses[key],
                "final_collapses": sum(r["collapsed"] for r in sel),
                "mean_cue_iou": sum(r["cue_iou"] for r in sel) / len(sel),
                "mean_iou": sum(r["iou"] for r in sel) / len(sel),
                "mean_mae": sum(r["mae"] for r in sel) / len(sel),
            })
    csv_text = _csv(DEMO_COLUMNS, rows)
    summary_text = _csv(list(summary[0]), summary)
    if out is not None:
        (out / "results.csv").write_text(csv_text, encoding="utf-8")
        (out / "summary.csv").write_text(summary_text, encoding="utf-8")
    return DemoReport(rows, collapses, csv_text, summary_text)
