"""Input validation helpers shared by the estimators, trainer and CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .volumes import LabelMap, MultiModalVolume


def check_volume(x) -> MultiModalVolume:
    if not isinstance(x, MultiModalVolume):
        raise TypeError(f"expected a MultiModalVolume, got {type(x).__name__}")
    return x


def check_labelmap(y) -> LabelMap:
    if not isinstance(y, LabelMap):
        raise TypeError(f"expected a LabelMap, got {type(y).__name__}")
    return y


def check_volume_list(X) -> list[MultiModalVolume]:
    """Accept a single volume or a sequence of volumes; return a list."""
    if isinstance(X, MultiModalVolume):
        return [X]
    return [check_volume(x) for x in X]


def check_case_lists(
    X, y
) -> tuple[list[MultiModalVolume], list[LabelMap]]:
    volumes = check_volume_list(X)
    labels = [check_labelmap(l) for l in ([y] if isinstance(y, LabelMap) else y)]
    if len(volumes) != len(labels):
        raise ValueError(f"{len(volumes)} volumes but {len(labels)} label maps")
    for index, (volume, label) in enumerate(zip(volumes, labels)):
        if volume.shape != label.shape:
            raise ValueError(
                f"case {index}: volume shape {volume.shape} does not match "
                f"label shape {label.shape}"
            )
    return volumes, labels


def split_cases(cases: Sequence, val_fraction: float, seed: int):
    """Deterministic train/validation split; val may come back empty."""
    n_val = int(round(len(cases) * val_fraction))
    if n_val == 0:
        return list(cases), []
    order = np.random.default_rng(seed).permutation(len(cases))
    val_idx = set(order[:n_val].tolist())
    train = [cases[i] for i in range(len(cases)) if i not in val_idx]
    val = [cases[i] for i in sorted(val_idx)]
    if not train:
        raise ValueError("validation split leaves no training cases")
    return train, val
