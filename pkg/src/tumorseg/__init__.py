"""Cascaded 3D densely-connected U-net pipeline for brain tumour
subregion segmentation."""

from .estimators import (
    CascadedSegmenter,
    EnsembleSegmenter,
    MultitaskSegmenter,
    ZScoreNormalizer,
)
from .volumes import (
    BrainMask,
    LabelMap,
    Modality,
    MultiModalVolume,
    ProbabilityMaps,
    SubregionMasks,
    brain_mask,
    labels_to_subregions,
    subregions_to_labels,
)

__version__ = "0.1.0"

__all__ = [
    "BrainMask",
    "CascadedSegmenter",
    "EnsembleSegmenter",
    "LabelMap",
    "Modality",
    "MultiModalVolume",
    "MultitaskSegmenter",
    "ProbabilityMaps",
    "SubregionMasks",
    "ZScoreNormalizer",
    "brain_mask",
    "labels_to_subregions",
    "subregions_to_labels",
    "__version__",
]
