"""Soft Dice score, the multi-class Dice loss, and case-level metrics.

dice_score / multiclass_dice_loss accept numpy arrays or torch tensors;
with tensors they stay differentiable and drive training. Evaluation-time
Dice is the exact binary form with the both-empty = 1 convention, and HD95
is the 95th percentile of the pooled symmetric surface-distance set in
millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .volumes import LabelMap, labels_to_subregions

# reported when exactly one mask of a pair is empty; excluded from means
HD95_SENTINEL = float("inf")


@dataclass(frozen=True)
class DiceParams:
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def dice_score(y_true, y_pred, params: DiceParams = DiceParams()):
    """Soft Dice: 2 * sum(t * p) / (sum(t) + sum(p) + epsilon).

    Sums run over all voxels; epsilon keeps empty masks finite.
    """
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    intersection = (y_true * y_pred).sum()
    return 2.0 * intersection / (y_true.sum() + y_pred.sum() + params.epsilon)


def multiclass_dice_loss(y_true, y_pred, params: DiceParams = DiceParams()):
    """Negative mean Dice over channels (channel-first arrays), range (-1, 0]."""
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    n = y_true.shape[0]
    if n < 1:
        raise ValueError("need at least one channel")
    total = dice_score(y_true[0], y_pred[0], params)
    for c in range(1, n):
        total = total + dice_score(y_true[c], y_pred[c], params)
    return -total / n


def binary_dice(a: np.ndarray, b: np.ndarray) -> float:
    """Exact binary Dice 2|A&B| / (|A|+|B|), with both-empty = 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


_SIX_NEIGHBOURHOOD = ndimage.generate_binary_structure(3, 1)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one of their 6 neighbours background.

    Voxels on the volume border count as surface (outside is background).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask
    interior = ndimage.binary_erosion(mask, structure=_SIX_NEIGHBOURHOOD, border_value=0)
    return mask & ~interior


def hd95(
    mask_a: np.ndarray,
    mask_b: np.ndarray,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> float:
    """95th percentile of the pooled symmetric surface distances, in mm.

    Both masks empty: 0. Exactly one empty: HD95_SENTINEL.
    """
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    a_empty, b_empty = not mask_a.any(), not mask_b.any()
    if a_empty and b_empty:
        return 0.0
    if a_empty or b_empty:
        return HD95_SENTINEL
    scale = np.asarray(spacing, dtype=np.float64)
    pts_a = np.argwhere(surface_voxels(mask_a)) * scale
    pts_b = np.argwhere(surface_voxels(mask_b)) * scale
    d_ab = cKDTree(pts_b).query(pts_a)[0]
    d_ba = cKDTree(pts_a).query(pts_b)[0]
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


@dataclass
class CaseMetrics:
    dice_wt: float
    dice_tc: float
    dice_et: float
    hd95_wt: float
    hd95_tc: float
    hd95_et: float

    def as_row(self) -> list[float]:
        return [self.dice_wt, self.dice_tc, self.dice_et,
                self.hd95_wt, self.hd95_tc, self.hd95_et]


def evaluate_case(pred: LabelMap, truth: LabelMap) -> CaseMetrics:
    """Per-subregion binary Dice and HD95 between two label maps."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    p = labels_to_subregions(pred)
    t = labels_to_subregions(truth)
    spacing = truth.spacing
    return CaseMetrics(
        dice_wt=binary_dice(t.wt, p.wt),
        dice_tc=binary_dice(t.tc, p.tc),
        dice_et=binary_dice(t.et, p.et),
        hd95_wt=hd95(t.wt, p.wt, spacing),
        hd95_tc=hd95(t.tc, p.tc, spacing),
        hd95_et=hd95(t.et, p.et, spacing),
    )
