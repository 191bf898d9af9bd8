"""Salient-object evaluation: MAE, threshold-averaged F-measure, E-measure."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import _check_same_shape, as_map_array, load_map

__all__ = [
    "BETA2",
    "EVAL_EPS",
    "MetricsReport",
    "PairSetResult",
    "e_measure",
    "evaluate_pair_set",
    "f_measure",
    "mae",
    "write_csv",
]

# numerical guards, in one place
BETA2 = 0.3
EVAL_EPS = 1e-8
GT_BINARIZE_AT = 0.5
THRESHOLDS = np.arange(256) / 255.0


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    f_beta: float
    e_xi: float
    threshold_count: int = len(THRESHOLDS)


def _binary_gt(g) -> np.ndarray:
    g = as_map_array(g)
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("ground truth must be binary (values 0 or 1)")
    return g


def mae(p, g) -> float:
    p, g = as_map_array(p), as_map_array(g)
    _check_same_shape(p, g)
    return float(np.abs(p - g).sum()) / p.size


def f_measure(p, g) -> float:
    """Mean F-beta over binarizations ``P >= k/255`` for k = 0..255."""
    p, g = as_map_array(p), _binary_gt(g)
    _check_same_shape(p, g)
    fg = g.astype(bool)
    positives = int(fg.sum())
    if positives == 0:
        raise ValueError("F-measure is undefined for ground truth without foreground")
    all_sorted = np.sort(p, axis=None)
    fg_sorted = np.sort(p[fg])
    predicted = all_sorted.size - np.searchsorted(all_sorted, THRESHOLDS, side="left")
    tp = fg_sorted.size - np.searchsorted(fg_sorted, THRESHOLDS, side="left")
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = tp / positives
        denom = BETA2 * precision + recall
        f = np.where(denom > 0, (1 + BETA2) * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f.mean())


def e_measure(p, g) -> float:
    """Enhanced alignment with the prediction binarized at ``min(2 * mean, 1)``."""
    p, g = as_map_array(p), _binary_gt(g)
    _check_same_shape(p, g)
    threshold = min(2.0 * float(p.mean()), 1.0)
    p_bin = (p >= threshold).astype(np.float64)
    phi_p = p_bin - p_bin.mean()
    phi_g = g - g.mean()
    if not phi_g.any():
        # all-foreground / all-background truth: aligned where the prediction is also flat
        xi = np.where(phi_p == 0.0, 1.0, 0.0)
    else:
        xi = 2.0 * phi_g * phi_p / (phi_g * phi_g + phi_p * phi_p + EVAL_EPS)
    return float(((xi + 1.0) ** 2 / 4.0).mean())


def evaluate(p, g) -> MetricsReport:
    return MetricsReport(mae(p, g), f_measure(p, g), e_measure(p, g))


@dataclass(frozen=True)
class PairSetResult:
    per_image: list[tuple[str, MetricsReport]]
    mean: MetricsReport


def evaluate_pair_set(pred_dir, gt_dir) -> PairSetResult:
    """Score every same-named PGM pair; names processed in lexicographic order."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {f.name for f in pred_dir.iterdir() if f.is_file()}
    gts = {f.name for f in gt_dir.iterdir() if f.is_file()}
    unmatched_pred, unmatched_gt = sorted(preds - gts), sorted(gts - preds)
    if unmatched_pred or unmatched_gt or not preds:
        raise ValueError(
            "prediction/ground-truth names do not match: "
            f"only in {os.fspath(pred_dir)}: {unmatched_pred}; "
            f"only in {os.fspath(gt_dir)}: {unmatched_gt}"
        )
    rows = []
    problems = []
    for name in sorted(preds):
        pred = load_map(pred_dir / name)
        gt = (load_map(gt_dir / name).values >= GT_BINARIZE_AT).astype(np.float64)
        if pred.shape != gt.shape:
            problems.append(f"{name}: prediction {pred.shape} vs ground truth {gt.shape}")
            continue
        rows.append((name, evaluate(pred, gt)))
    if problems:
        raise ValueError("shape mismatches:\n" + "\n".join(problems))
    n = len(rows)
    mean = MetricsReport(
        sum(r.mae for _, r in rows) / n,
        sum(r.f_beta for _, r in rows) / n,
        sum(r.e_xi for _, r in rows) / n,
    )
    return PairSetResult(rows, mean)


def write_csv(result: PairSetResult, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", "mae", "f_beta", "e_xi"])
    for name, r in [*result.per_image, ("__mean__", result.mean)]:
        writer.writerow([name, f"{r.mae:.6f}", f"{r.f_beta:.6f}", f"{r.e_xi:.6f}"])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
