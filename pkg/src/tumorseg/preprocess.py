"""Intensity normalization and stochastic spatial augmentation.

Inputs are expected to be skull-stripped, co-registered and bias-field
corrected already; this module only normalizes intensities and applies
rigid-ish training-time augmentation (small rotations, isotropic scaling,
axis mirroring).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volumes import BrainMask, LabelMap, MultiModalVolume

DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class AugmentParams:
    """Random augmentation ranges; fully determined by the seed."""

    rotation_range_deg: tuple[float, float] = (-6.0, 6.0)
    scale_range: tuple[float, float] = (0.9, 1.1)
    mirror_prob_per_axis: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_range_deg
        if abs(lo + hi) > 1e-9:
            raise ValueError("rotation range must be symmetric about 0")
        slo, shi = self.scale_range
        if not (slo <= 1.0 <= shi):
            raise ValueError("scale range must contain 1.0")


def zscore_normalize(volume: MultiModalVolume, mask: BrainMask) -> MultiModalVolume:
    """Normalize each channel to zero mean and unit variance over the brain.

    Uses the population standard deviation. Voxels outside the mask are set
    to 0. A channel that is constant inside the mask cannot be scaled; it is
    zeroed and a warning is issued.
    """
    if mask.shape != volume.shape:
        raise ValueError(f"mask shape {mask.shape} != volume shape {volume.shape}")
    m = mask.mask
    out = np.zeros_like(volume.data, dtype=np.float32)
    for c in range(volume.data.shape[0]):
        values = volume.data[c][m].astype(np.float64)
        std = values.std()
        if std < DEGENERATE_STD:
            warnings.warn(
                f"channel {c} is constant inside the brain mask; output zeroed"
            )
            continue
        out[c][m] = ((volume.data[c][m] - values.mean()) / std).astype(np.float32)
    return MultiModalVolume(data=out, spacing=volume.spacing, affine=volume.affine)


def _spatial_matrix(
    angles_deg: tuple[float, float, float],
    scale: float,
    flips: tuple[bool, bool, bool],
) -> np.ndarray:
    """Forward voxel transform about the volume centre: mirror . R0 R1 R2 . scale."""
    mat = np.eye(3) * scale
    for axis, angle in enumerate(angles_deg):
        theta = np.deg2rad(angle)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.eye(3)
        i, j = [a for a in range(3) if a != axis]
        rot[i, i] = c
        rot[i, j] = -s
        rot[j, i] = s
        rot[j, j] = c
        mat = rot @ mat
    mirror = np.diag([-1.0 if f else 1.0 for f in flips])
    return mirror @ mat


def apply_spatial_transform(
    volume: MultiModalVolume,
    labels: LabelMap,
    angles_deg: tuple[float, float, float],
    scale: float,
    flips: tuple[bool, bool, bool],
) -> tuple[MultiModalVolume, LabelMap]:
    """Rotate/scale/mirror about the volume centre.

    Image channels are resampled trilinearly, labels with nearest neighbour;
    voxels mapped from outside the volume are filled with 0.
    """
    if volume.shape != labels.shape:
        raise ValueError("volume and label shapes differ")
    forward = _spatial_matrix(angles_deg, scale, flips)
    inverse = np.linalg.inv(forward)
    centre = (np.asarray(volume.shape) - 1) / 2.0
    offset = centre - inverse @ centre
    data = np.empty_like(volume.data, dtype=np.float32)
    for c in range(volume.data.shape[0]):
        data[c] = ndimage.affine_transform(
            volume.data[c], inverse, offset=offset, order=1, mode="constant", cval=0.0,
            output=np.float32,
        )
    lab = ndimage.affine_transform(
        labels.labels, inverse, offset=offset, order=0, mode="constant", cval=0
    )
    return (
        MultiModalVolume(data=data, spacing=volume.spacing, affine=volume.affine),
        LabelMap(labels=lab, spacing=labels.spacing, affine=labels.affine),
    )


def augment(
    volume: MultiModalVolume, labels: LabelMap, params: AugmentParams
) -> tuple[MultiModalVolume, LabelMap]:
    """Draw one random spatial transform and apply it to image and labels.

    One rotation angle per spatial axis, one isotropic scale factor, and
    independent per-axis mirror decisions, all from the seeded generator.
    """
    rng = np.random.default_rng(params.seed)
    lo, hi = params.rotation_range_deg
    angles = tuple(rng.uniform(lo, hi) for _ in range(3))
    scale = float(rng.uniform(*params.scale_range))
    flips = tuple(bool(rng.random() < params.mirror_prob_per_axis) for _ in range(3))
    return apply_spatial_transform(volume, labels, angles, scale, flips)
