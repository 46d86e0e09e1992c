"""Core volumetric data types, the BraTS label codec, and brain-mask derivation.

Label convention: 0 background, 1 necrosis/non-enhancing core, 2 peritumoural
edema, 4 enhancing tumour. The three clinical subregions are nested:
whole tumour (WT) = {1, 2, 4}, tumour core (TC) = {1, 4}, enhancing
tumour (ET) = {4}, so ET is inside TC is inside WT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

VALID_LABELS = (0, 1, 2, 4)


class Modality(IntEnum):
    """The four MR channels, in the fixed stacking order used everywhere."""

    FLAIR = 0
    T1 = 1
    T1C = 2
    T2 = 3


MODALITY_ORDER = (Modality.FLAIR, Modality.T1, Modality.T1C, Modality.T2)


def _default_affine() -> np.ndarray:
    return np.eye(4, dtype=np.float64)


@dataclass
class MultiModalVolume:
    """Four co-registered 3D scalar channels plus voxel geometry.

    data is (4, D, H, W), channel order FLAIR, T1, T1C, T2.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=_default_affine)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[0] != len(MODALITY_ORDER):
            raise ValueError(
                f"expected (4, D, H, W) channel-first data, got shape {self.data.shape}"
            )
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive components, got {self.spacing}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be a 4x4 matrix")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def channel(self, modality: Modality) -> np.ndarray:
        return self.data[int(modality)]


@dataclass
class BrainMask:
    """Binary support of the brain region; nonzero for any valid case."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 3:
            raise ValueError("brain mask must be 3D")
        if not self.mask.any():
            raise ValueError("brain mask is empty")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mask.shape


@dataclass
class LabelMap:
    """Integer segmentation volume over the BraTS labels {0, 1, 2, 4}."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=_default_affine)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ValueError("label map must be 3D")
        bad = np.setdiff1d(np.unique(self.labels), VALID_LABELS)
        if bad.size:
            raise ValueError(f"invalid label values {bad.tolist()}; allowed: {VALID_LABELS}")
        self.labels = self.labels.astype(np.uint8, copy=False)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.affine = np.asarray(self.affine, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass
class SubregionMasks:
    """Binary WT / TC / ET volumes of one shared shape.

    Nesting (et inside tc inside wt) is guaranteed only once hierarchy has
    been enforced; raw thresholded masks may violate it and carry
    hierarchy_enforced=False until post-processing.
    """

    wt: np.ndarray
    tc: np.ndarray
    et: np.ndarray
    hierarchy_enforced: bool = False

    def __post_init__(self):
        self.wt = np.asarray(self.wt, dtype=bool)
        self.tc = np.asarray(self.tc, dtype=bool)
        self.et = np.asarray(self.et, dtype=bool)
        if not (self.wt.shape == self.tc.shape == self.et.shape):
            raise ValueError("wt/tc/et shapes differ")
        if self.wt.ndim != 3:
            raise ValueError("subregion masks must be 3D")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.wt.shape

    def is_nested(self) -> bool:
        return bool((~self.tc | self.wt).all() and (~self.et | self.tc).all())


@dataclass
class ProbabilityMaps:
    """Per-subregion sigmoid probability volumes in [0, 1]."""

    wt: np.ndarray
    tc: np.ndarray
    et: np.ndarray

    def __post_init__(self):
        self.wt = np.asarray(self.wt)
        self.tc = np.asarray(self.tc)
        self.et = np.asarray(self.et)
        if not (self.wt.shape == self.tc.shape == self.et.shape):
            raise ValueError("wt/tc/et shapes differ")
        for name, arr in (("wt", self.wt), ("tc", self.tc), ("et", self.et)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} probabilities outside [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.wt.shape

    def to_array(self) -> np.ndarray:
        """Stack as (3, D, H, W) in wt, tc, et order."""
        return np.stack([self.wt, self.tc, self.et])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ProbabilityMaps":
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ValueError(f"expected (3, D, H, W), got {arr.shape}")
        return cls(wt=arr[0], tc=arr[1], et=arr[2])


def labels_to_subregions(labels: LabelMap) -> SubregionMasks:
    """Decode a label map into the three nested binary subregions."""
    lab = labels.labels
    wt = (lab == 1) | (lab == 2) | (lab == 4)
    tc = (lab == 1) | (lab == 4)
    et = lab == 4
    return SubregionMasks(wt=wt, tc=tc, et=et, hierarchy_enforced=True)


def subregions_to_labels(
    masks: SubregionMasks,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    affine: np.ndarray | None = None,
) -> LabelMap:
    """Fuse nested subregion masks back into a single label map.

    ET voxels become 4, the rest of TC becomes 1 (necrosis), the rest of WT
    becomes 2 (edema). Non-nested input is rejected.
    """
    if not masks.is_nested():
        raise ValueError("subregion masks are not nested; enforce hierarchy first")
    labels = np.zeros(masks.shape, dtype=np.uint8)
    labels[masks.wt] = 2
    labels[masks.tc] = 1
    labels[masks.et] = 4
    if affine is None:
        affine = np.eye(4)
    return LabelMap(labels=labels, spacing=spacing, affine=affine)


def brain_mask(volume: MultiModalVolume) -> BrainMask:
    """Union of the nonzero supports of all four modalities.

    Assumes skull-stripped inputs where background is exactly zero.
    """
    mask = (volume.data != 0).any(axis=0)
    if not mask.any():
        raise ValueError("volume is identically zero; no brain region")
    return BrainMask(mask=mask)
