"""Coarse-to-fine prediction: low-resolution tumour localization, patch-wise
prediction with flip test-time augmentation, cascaded region restriction,
model ensembling, and adaptive thresholding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch
from torch.nn import functional as F

from .network import predict_patch
from .patches import VoxelBox, bounding_box, extract, plan_patches, stitch
from .volumes import MultiModalVolume, ProbabilityMaps, SubregionMasks

# all 8 spatial mirror combinations, identity first
FLIP_SET = tuple(
    tuple(axis for axis, on in zip((1, 2, 3), bits) if on)
    for bits in itertools.product((False, True), repeat=3)
)


@dataclass(frozen=True)
class ThresholdPolicy:
    wt_threshold: float = 0.5
    tc_threshold: float = 0.5
    et_threshold: float = 0.4
    et_fallback_ladder: tuple[float, ...] = (0.3, 0.2, 0.1)

    def __post_init__(self):
        values = (self.wt_threshold, self.tc_threshold, self.et_threshold,
                  *self.et_fallback_ladder)
        if any(not 0 < v < 1 for v in values):
            raise ValueError("thresholds must lie in (0, 1)")
        ladder = (self.et_threshold, *self.et_fallback_ladder)
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("fallback ladder must be strictly decreasing")


@dataclass(frozen=True)
class TTAConfig:
    enabled: bool = True
    flip_set: tuple[tuple[int, ...], ...] = FLIP_SET

    def __post_init__(self):
        if () not in self.flip_set:
            raise ValueError("the identity flip must be part of the flip set")


def _model_patch_size(model) -> tuple[int, int, int]:
    size = getattr(model, "patch_size", None)
    if size is None:
        size = model.config.patch_size
    return tuple(int(s) for s in size)


def resize_trilinear(data: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Trilinearly resample (C, D, H, W) or (D, H, W) data to a new grid."""
    arr = np.asarray(data, dtype=np.float32)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    x = torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(0)
    y = F.interpolate(x, size=tuple(int(s) for s in shape), mode="trilinear",
                      align_corners=False)[0].numpy()
    return y[0] if squeeze else y


def localize(model, volume: MultiModalVolume,
             policy: ThresholdPolicy = ThresholdPolicy()) -> np.ndarray:
    """Coarse whole-tumour mask at full resolution.

    The volume is resized down to the model's patch grid, predicted once,
    and the WT probability (channel 0) is resized back up and thresholded.
    """
    patch_size = _model_patch_size(model)
    coarse = resize_trilinear(volume.data, patch_size)
    probs = predict_patch(model, coarse)
    wt_full = resize_trilinear(probs[0], volume.shape)
    return wt_full >= policy.wt_threshold


def localization_bbox(coarse_mask: np.ndarray) -> VoxelBox:
    """Bounding box of the coarse mask; an empty mask falls back to the
    whole volume."""
    box = bounding_box(coarse_mask)
    if box is None:
        return VoxelBox.full(coarse_mask.shape)
    return box


def tta_predict(model, patch: np.ndarray,
                tta: TTAConfig = TTAConfig()) -> np.ndarray:
    """Mean prediction over all mirror combinations of the input patch."""
    if not tta.enabled:
        return predict_patch(model, patch)
    patch = np.asarray(patch)
    accum = None
    for axes in tta.flip_set:
        flipped = np.flip(patch, axes) if axes else patch
        pred = predict_patch(model, np.ascontiguousarray(flipped))
        pred = np.flip(pred, axes) if axes else pred
        accum = pred.astype(np.float64) if accum is None else accum + pred
    return (accum / len(tta.flip_set)).astype(np.float32)


def _predict_region(model, volume: MultiModalVolume, region: VoxelBox,
                    tta: TTAConfig) -> np.ndarray:
    """Patch-wise prediction over a region, stitched to full volume shape."""
    plan = plan_patches(region, volume.shape, _model_patch_size(model))
    patch_probs = [
        tta_predict(model, extract(volume.data, spec), tta) for spec in plan.specs
    ]
    return stitch(patch_probs, plan)


def predict_multitask(
    model,
    volume: MultiModalVolume,
    tta: TTAConfig = TTAConfig(),
    policy: ThresholdPolicy = ThresholdPolicy(),
) -> ProbabilityMaps:
    """Localize the tumour, predict all three subregions patch-wise, stitch."""
    region = localization_bbox(localize(model, volume, policy))
    probs = _predict_region(model, volume, region, tta)
    return ProbabilityMaps.from_array(probs)


def predict_cascaded(
    models: Mapping[str, object],
    volume: MultiModalVolume,
    tta: TTAConfig = TTAConfig(),
    policy: ThresholdPolicy = ThresholdPolicy(),
) -> ProbabilityMaps:
    """Run the three-stage cascade with region restriction between stages.

    Core probabilities are zeroed outside the thresholded whole-tumour mask
    and enhancing probabilities outside the thresholded core mask, so the
    thresholded masks nest by construction.
    """
    shape = volume.shape
    region = localization_bbox(localize(models["wt"], volume, policy))
    wt_prob = _predict_region(models["wt"], volume, region, tta)[0]
    tc_prob = np.zeros(shape, dtype=np.float32)
    et_prob = np.zeros(shape, dtype=np.float32)

    wt_mask = wt_prob >= policy.wt_threshold
    wt_box = bounding_box(wt_mask)
    if wt_box is not None:
        tc_prob = _predict_region(models["tc"], volume, wt_box, tta)[0]
        tc_prob[~wt_mask] = 0.0
        tc_mask = tc_prob >= policy.tc_threshold
        tc_box = bounding_box(tc_mask)
        if tc_box is not None:
            et_prob = _predict_region(models["et"], volume, tc_box, tta)[0]
            et_prob[~tc_mask] = 0.0
    return ProbabilityMaps(wt=wt_prob, tc=tc_prob, et=et_prob)


def ensemble(a: ProbabilityMaps, b: ProbabilityMaps) -> ProbabilityMaps:
    """Per-voxel, per-channel mean of two probability map sets."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return ProbabilityMaps(
        wt=(a.wt.astype(np.float64) + b.wt) / 2,
        tc=(a.tc.astype(np.float64) + b.tc) / 2,
        et=(a.et.astype(np.float64) + b.et) / 2,
    )


def threshold_subregions(
    probs: ProbabilityMaps, policy: ThresholdPolicy = ThresholdPolicy()
) -> SubregionMasks:
    """Threshold the probability maps into (pre-hierarchy) binary masks.

    WT and TC use fixed thresholds. ET starts at its own threshold and, if
    empty, retries each ladder value in order until something is detected or
    the ladder is exhausted (an empty ET is a legitimate outcome).
    """
    wt = probs.wt >= policy.wt_threshold
    tc = probs.tc >= policy.tc_threshold
    et = probs.et >= policy.et_threshold
    if not et.any():
        for threshold in policy.et_fallback_ladder:
            et = probs.et >= threshold
            if et.any():
                break
    return SubregionMasks(wt=wt, tc=tc, et=et, hierarchy_enforced=False)
