"""Tumour-centred patch planning, extraction, and mean-blended stitching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VoxelBox:
    """Half-open voxel box [lo, hi) in volume index space."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))

    @property
    def extent(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def is_empty(self) -> bool:
        return any(h <= l for l, h in zip(self.lo, self.hi))

    def contains_box(self, other: "VoxelBox") -> bool:
        return all(
            sl <= ol and oh <= sh
            for sl, sh, ol, oh in zip(self.lo, self.hi, other.lo, other.hi)
        )

    @classmethod
    def full(cls, shape: tuple[int, int, int]) -> "VoxelBox":
        return cls(lo=(0, 0, 0), hi=tuple(int(s) for s in shape))


def bounding_box(mask: np.ndarray) -> VoxelBox | None:
    """Tight half-open box around the foreground of a binary volume.

    Returns None for an all-background mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        line = mask.any(axis=other)
        idx = np.flatnonzero(line)
        lo.append(int(idx[0]))
        hi.append(int(idx[-1]) + 1)
    return VoxelBox(lo=tuple(lo), hi=tuple(hi))


@dataclass(frozen=True)
class PatchSpec:
    """One patch: origin voxel (may be out of bounds) and size."""

    origin: tuple[int, int, int]
    size: tuple[int, int, int] = (128, 128, 128)

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(int(v) for v in self.origin))
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))
        if any(s <= 0 for s in self.size):
            raise ValueError(f"patch size must be positive, got {self.size}")


@dataclass
class PatchPlan:
    """Ordered patch specs covering a target box within a volume."""

    specs: list[PatchSpec] = field(default_factory=list)
    volume_shape: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        self.volume_shape = tuple(int(s) for s in self.volume_shape)


def _axis_origins(lo: int, hi: int, vol: int, patch: int) -> list[int]:
    """Patch origins along one axis covering [lo, hi)."""
    extent = hi - lo
    if extent <= patch:
        centre = (lo + hi) // 2
        origin = centre - patch // 2
        if vol >= patch:
            # shift minimally into bounds; smaller volumes rely on zero padding
            origin = min(max(origin, 0), vol - patch)
        return [origin]
    # minimal count of equally spaced overlapping patches
    count = -(-extent // patch)  # ceil
    span = extent - patch
    return [lo + round(i * span / (count - 1)) for i in range(count)]


def plan_patches(
    target_bbox: VoxelBox,
    volume_shape: tuple[int, int, int],
    patch_size: tuple[int, int, int] = (128, 128, 128),
) -> PatchPlan:
    """Plan patches so their union covers target_bbox.

    A box no larger than the patch gets a single patch centred on it; a larger
    extent along any axis is tiled with the minimal number of equally spaced
    overlapping patches.
    """
    if target_bbox.is_empty():
        raise ValueError("cannot plan patches for an empty target box")
    volume_shape = tuple(int(s) for s in volume_shape)
    if not VoxelBox.full(volume_shape).contains_box(target_bbox):
        raise ValueError(f"target box {target_bbox} not inside volume {volume_shape}")
    per_axis = [
        _axis_origins(target_bbox.lo[a], target_bbox.hi[a], volume_shape[a], patch_size[a])
        for a in range(3)
    ]
    specs = [
        PatchSpec(origin=(o0, o1, o2), size=tuple(patch_size))
        for o0 in per_axis[0]
        for o1 in per_axis[1]
        for o2 in per_axis[2]
    ]
    return PatchPlan(specs=specs, volume_shape=volume_shape)


def extract(data: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Copy the patch region out of (..., D, H, W) data, zero-filling
    anything that falls outside the volume bounds."""
    data = np.asarray(data)
    shape = data.shape[-3:]
    out = np.zeros(data.shape[:-3] + spec.size, dtype=data.dtype)
    src, dst = [], []
    for a in range(3):
        s0 = max(spec.origin[a], 0)
        s1 = min(spec.origin[a] + spec.size[a], shape[a])
        if s1 <= s0:
            return out
        src.append(slice(s0, s1))
        dst.append(slice(s0 - spec.origin[a], s1 - spec.origin[a]))
    out[(Ellipsis, *dst)] = data[(Ellipsis, *src)]
    return out


def stitch(patch_probs: list[np.ndarray], plan: PatchPlan) -> np.ndarray:
    """Reassemble patch probabilities at their planned locations.

    Voxels covered by several patches take the arithmetic mean; voxels
    covered by none stay zero. Returns (channels, D, H, W) float32.
    """
    if len(patch_probs) != len(plan.specs):
        raise ValueError(
            f"{len(patch_probs)} patches for {len(plan.specs)} planned specs"
        )
    if not patch_probs:
        raise ValueError("nothing to stitch")
    channels = patch_probs[0].shape[0]
    accum = np.zeros((channels,) + plan.volume_shape, dtype=np.float64)
    count = np.zeros(plan.volume_shape, dtype=np.int32)
    for patch, spec in zip(patch_probs, plan.specs):
        if patch.shape != (channels,) + spec.size:
            raise ValueError(f"patch shape {patch.shape} does not match spec {spec}")
        src, dst = [], []
        inside = True
        for a in range(3):
            s0 = max(spec.origin[a], 0)
            s1 = min(spec.origin[a] + spec.size[a], plan.volume_shape[a])
            if s1 <= s0:
                inside = False
                break
            dst.append(slice(s0, s1))
            src.append(slice(s0 - spec.origin[a], s1 - spec.origin[a]))
        if not inside:
            continue
        accum[(Ellipsis, *dst)] += patch[(Ellipsis, *src)]
        count[tuple(dst)] += 1
    covered = count > 0
    accum[:, covered] /= count[covered]
    return accum.astype(np.float32)
