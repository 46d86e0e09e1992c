"""Rule-based connected-component clean-up and final label fusion.

The rules run in a fixed order: enforce the subregion hierarchy, drop
components below 10 voxels, drop whole-tumour components that contain no
core or enhancing voxels, relabel enhancing components below 50 voxels as
necrosis, then re-enforce the hierarchy and fuse to a label map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .volumes import LabelMap, SubregionMasks, subregions_to_labels

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True)
class PostprocessConfig:
    min_component_voxels: int = 10
    min_et_voxels: int = 50
    connectivity: int = 26

    def __post_init__(self):
        if self.min_component_voxels < 1 or self.min_et_voxels < 1:
            raise ValueError("component thresholds must be at least 1")
        if self.connectivity not in _STRUCTURES:
            raise ValueError(f"connectivity must be one of {sorted(_STRUCTURES)}")


def connected_components(
    mask: np.ndarray, connectivity: int = 26
) -> tuple[np.ndarray, np.ndarray]:
    """Label maximal connected foreground sets.

    Returns (labeled, sizes): labels are 1..n ordered by each component's
    first voxel in flat scan order, and sizes[i] is the voxel count of
    component i + 1.
    """
    mask = np.asarray(mask, dtype=bool)
    labeled, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    if n == 0:
        return labeled, np.zeros(0, dtype=np.int64)
    flat = labeled.ravel()
    values, first_idx = np.unique(flat, return_index=True)
    nonzero = values != 0
    order = np.argsort(first_idx[nonzero])
    remap = np.zeros(n + 1, dtype=labeled.dtype)
    remap[values[nonzero][order]] = np.arange(1, n + 1)
    labeled = remap[labeled]
    sizes = np.bincount(labeled.ravel(), minlength=n + 1)[1:].astype(np.int64)
    return labeled, sizes


def enforce_hierarchy(masks: SubregionMasks) -> SubregionMasks:
    """Cut enhancing voxels outside the core, then core voxels outside the
    whole tumour (in that order; the first cut sees the uncut core)."""
    et = masks.et & masks.tc
    tc = masks.tc & masks.wt
    return SubregionMasks(wt=masks.wt.copy(), tc=tc, et=et, hierarchy_enforced=True)


def _drop_small(mask: np.ndarray, min_voxels: int, connectivity: int) -> np.ndarray:
    labeled, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        return mask.copy()
    keep = np.concatenate([[False], sizes >= min_voxels])
    return keep[labeled]


def remove_small_components(
    masks: SubregionMasks, config: PostprocessConfig = PostprocessConfig()
) -> SubregionMasks:
    """Drop components strictly smaller than min_component_voxels from each
    subregion mask independently."""
    return replace(
        masks,
        wt=_drop_small(masks.wt, config.min_component_voxels, config.connectivity),
        tc=_drop_small(masks.tc, config.min_component_voxels, config.connectivity),
        et=_drop_small(masks.et, config.min_component_voxels, config.connectivity),
    )


def remove_uncertain_wt(
    masks: SubregionMasks, config: PostprocessConfig = PostprocessConfig()
) -> SubregionMasks:
    """Drop whole-tumour components that contain no core and no enhancing
    voxels (typical false positives)."""
    labeled, sizes = connected_components(masks.wt, config.connectivity)
    if sizes.size == 0:
        return replace(masks, wt=masks.wt.copy())
    evidence = masks.tc | masks.et
    counts = np.bincount(labeled[evidence], minlength=sizes.size + 1)
    keep = counts > 0
    keep[0] = False
    return replace(masks, wt=keep[labeled])


def relabel_small_et(
    masks: SubregionMasks, config: PostprocessConfig = PostprocessConfig()
) -> SubregionMasks:
    """Remove enhancing components below min_et_voxels from ET; the voxels
    stay in TC/WT and fuse to necrosis."""
    return replace(
        masks, et=_drop_small(masks.et, config.min_et_voxels, config.connectivity)
    )


def postprocess(
    masks: SubregionMasks,
    config: PostprocessConfig = PostprocessConfig(),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    affine: np.ndarray | None = None,
) -> LabelMap:
    """Apply all rules in order and fuse the result into a label map.

    The hierarchy is re-enforced before the enhancing-tumour relabel step so
    that rule only ever sees nesting-consistent components; otherwise a later
    hierarchy cut could split enhancing components below the size threshold
    and the whole operation would not be idempotent.
    """
    masks = enforce_hierarchy(masks)
    masks = remove_small_components(masks, config)
    masks = remove_uncertain_wt(masks, config)
    masks = enforce_hierarchy(masks)
    masks = relabel_small_et(masks, config)
    masks = enforce_hierarchy(masks)
    return subregions_to_labels(masks, spacing=spacing, affine=affine)
