"""BraTS-layout case discovery, loading and persistence.

A case is a directory named after its id containing
``<id>_flair.nii.gz``, ``<id>_t1.nii.gz``, ``<id>_t1ce.nii.gz``,
``<id>_t2.nii.gz`` and optionally ``<id>_seg.nii.gz``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nifti import read_nifti, write_nifti
from .volumes import LabelMap, MultiModalVolume

MODALITY_SUFFIXES = ("flair", "t1", "t1ce", "t2")


@dataclass
class CaseRecord:
    case_id: str
    modality_paths: dict[str, Path]
    seg_path: Path | None = None


def case_record(case_dir: str | Path) -> CaseRecord:
    case_dir = Path(case_dir)
    case_id = case_dir.name
    paths = {}
    for suffix in MODALITY_SUFFIXES:
        path = case_dir / f"{case_id}_{suffix}.nii.gz"
        if not path.exists():
            raise FileNotFoundError(f"missing modality file: {path}")
        paths[suffix] = path
    seg = case_dir / f"{case_id}_seg.nii.gz"
    return CaseRecord(case_id=case_id, modality_paths=paths,
                      seg_path=seg if seg.exists() else None)


def find_cases(root: str | Path) -> list[CaseRecord]:
    """All case directories under root, sorted by case id."""
    root = Path(root)
    records = []
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if (child / f"{child.name}_flair.nii.gz").exists():
            records.append(case_record(child))
    return records


def load_case(case_dir: str | Path) -> tuple[MultiModalVolume, LabelMap | None]:
    """Load the four modalities (fixed channel order) and the optional
    segmentation, checking that shapes and affines agree across files."""
    record = case_record(case_dir)
    images = {s: read_nifti(p) for s, p in record.modality_paths.items()}
    reference = images["flair"]
    for suffix, image in images.items():
        if image.data.shape != reference.data.shape:
            raise ValueError(
                f"{record.case_id}: shape of {suffix} {image.data.shape} does not "
                f"match flair {reference.data.shape}"
            )
        if not np.allclose(image.affine, reference.affine, atol=1e-4):
            raise ValueError(f"{record.case_id}: affine of {suffix} does not match flair")
    data = np.stack(
        [images[s].data.astype(np.float32) for s in MODALITY_SUFFIXES]
    )
    volume = MultiModalVolume(data=data, spacing=reference.spacing,
                              affine=reference.affine)
    labels = None
    if record.seg_path is not None:
        seg = read_nifti(record.seg_path)
        if seg.data.shape != reference.data.shape:
            raise ValueError(f"{record.case_id}: segmentation shape mismatch")
        seg_values = np.asarray(seg.data)
        bad = np.setdiff1d(np.unique(seg_values), (0, 1, 2, 4))
        if bad.size:
            raise ValueError(
                f"{record.case_id}: segmentation contains invalid labels {bad.tolist()}"
            )
        labels = LabelMap(labels=seg_values.astype(np.uint8),
                          spacing=reference.spacing, affine=reference.affine)
    return volume, labels


def save_labelmap(labels: LabelMap, path: str | Path):
    """Write a segmentation as gzip-compressed NIfTI-1 uint8."""
    write_nifti(path, labels.labels.astype(np.uint8), affine=labels.affine,
                spacing=labels.spacing)


def save_case(
    volume: MultiModalVolume,
    case_id: str,
    out_dir: str | Path,
    labels: LabelMap | None = None,
):
    """Write a case back out in the BraTS directory layout (float32 images)."""
    case_dir = Path(out_dir) / case_id
    for index, suffix in enumerate(MODALITY_SUFFIXES):
        write_nifti(case_dir / f"{case_id}_{suffix}.nii.gz",
                    volume.data[index].astype(np.float32),
                    affine=volume.affine, spacing=volume.spacing)
    if labels is not None:
        save_labelmap(labels, case_dir / f"{case_id}_seg.nii.gz")
