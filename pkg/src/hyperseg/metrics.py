"""Segmentation metrics: DICE, Hungarian label matching, Hausdorff distances."""

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import DimensionError, EmptySetError, ShapeError

LEVEL_CLASSES = (2, 3, 3)


def dice(pred, gt):
    """``2TP / (2TP + FN + FP)`` for boolean masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = np.count_nonzero(pred & gt)
    fp = np.count_nonzero(pred & ~gt)
    fn = np.count_nonzero(~pred & gt)
    den = 2 * tp + fp + fn
    return 1.0 if den == 0 else 2.0 * tp / den


def hungarian(cost):
    """Minimum-cost assignment; ``perm[row]`` is the column matched to ``row``."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


class Hausdorff(NamedTuple):
    avg: float
    h95: float
    max: float


def nearest_rank(values, q):
    """Nearest-rank percentile of a 1-D array."""
    s = np.sort(np.asarray(values))
    rank = max(1, int(math.ceil(q / 100.0 * len(s))))
    return float(s[rank - 1])


def hausdorff(a, b, spacing=None):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptySetError("Hausdorff distance needs two nonempty point sets")
    if spacing is not None:
        a = a * np.asarray(spacing)
        b = b * np.asarray(spacing)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return Hausdorff(
        # fsum keeps the mean independent of summation order
        avg=(math.fsum(d_ab) / len(d_ab) + math.fsum(d_ba) / len(d_ba)) / 2,
        h95=max(nearest_rank(d_ab, 95), nearest_rank(d_ba, 95)),
        max=float(max(d_ab.max(), d_ba.max())),
    )


@dataclass
class LevelReport:
    level: int
    dice_per_class: list
    average_dice: float
    foreground_dice: float
    matching: dict  # predicted label -> ground-truth class
    hausdorff_avg: float
    hausdorff_95: float
    hausdorff_max: float


@dataclass
class MetricReport:
    levels: list = field(default_factory=list)

    @property
    def dice(self):
        return [lv.average_dice for lv in self.levels]

    def to_dict(self):
        out = []
        for lv in self.levels:
            d = asdict(lv)
            d["matching"] = {str(k): int(v) for k, v in lv.matching.items()}
            for key in ("hausdorff_avg", "hausdorff_95", "hausdorff_max"):
                if math.isinf(d[key]):
                    d[key] = "inf"
            out.append(d)
        return {"levels": out}


def match_labels(pred, gt, n_pred, n_gt):
    """Hungarian match of predicted labels to gt classes on a zero-padded negative-DICE cost."""
    n = max(n_pred, n_gt)
    cost = np.zeros((n, n))
    for i in range(n_pred):
        pi = pred == i
        for j in range(n_gt):
            cost[i, j] = -dice(pi, gt == j)
    perm = hungarian(cost)
    return {i: int(perm[i]) for i in range(n_pred) if perm[i] < n_gt}


def evaluate_level(pred, gt, n_pred, n_gt, level=1, spacing=None):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    matching = match_labels(pred, gt, n_pred, n_gt)
    inverse = {j: i for i, j in matching.items()}
    per_class = []
    for j in range(n_gt):
        pm = pred == inverse[j] if j in inverse else np.zeros(pred.shape, dtype=bool)
        per_class.append(dice(pm, gt == j))

    mapped = np.zeros(pred.shape, dtype=np.int64)
    for i, j in matching.items():
        mapped[pred == i] = j
    pred_fg = np.argwhere(mapped > 0)
    gt_fg = np.argwhere(gt > 0)
    try:
        h = hausdorff(pred_fg, gt_fg, spacing)
    except EmptySetError:
        h = Hausdorff(math.inf, math.inf, math.inf)
    return LevelReport(
        level=level,
        dice_per_class=per_class,
        average_dice=float(np.mean(per_class)),
        foreground_dice=float(np.mean(per_class[1:])) if n_gt > 1 else float(per_class[0]),
        matching=matching,
        hausdorff_avg=h.avg,
        hausdorff_95=h.h95,
        hausdorff_max=h.max,
    )


def evaluate_levels(pred, gts, k=None, n_classes=LEVEL_CLASSES, spacing=None):
    """Per-level average class DICE (and Hausdorff) of one clustering against nested gt masks.

    ``pred`` may also be a list with one prediction per level.
    """
    preds = pred if isinstance(pred, (list, tuple)) else [pred] * len(gts)
    report = MetricReport()
    for level, (p, g, n_gt) in enumerate(zip(preds, gts, n_classes), start=1):
        n_pred = k if k is not None else int(np.max(p)) + 1
        report.levels.append(evaluate_level(p, g, n_pred, n_gt, level, spacing))
    return report


def summarize(reports):
    """Mean and standard deviation of per-level metrics across volumes."""
    out = {}
    n_levels = len(reports[0].levels)
    for li in range(n_levels):
        rows = [r.levels[li] for r in reports]
        entry = {}
        for key in ("average_dice", "foreground_dice", "hausdorff_avg", "hausdorff_95"):
            vals = np.array([getattr(r, key) for r in rows], dtype=np.float64)
            entry[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        out[f"level{li + 1}"] = entry
    return out
