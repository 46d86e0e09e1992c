"""Synthetic nested-sphere tumour phantoms.

Spheres have closed-form voxel counts, component counts and bounding boxes,
so every pipeline stage can be exercised without real data. Default modal
offsets loosely mimic the clinical appearance: FLAIR/T2 bright over the
whole tumour, T1C bright in the enhancing part, T1 slightly dark in the core.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volumes import LabelMap, MultiModalVolume


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 64)
    brain_centre: tuple[float, float, float] | None = None
    brain_semiaxes: tuple[float, float, float] | None = None
    brain_intensity: float = 1.0
    tumour_centre: tuple[float, float, float] | None = None
    r_wt: float = 12.0
    r_tc: float = 8.0
    r_et: float = 5.0
    # per-modality additive offsets (flair, t1, t1c, t2) inside each region
    wt_offsets: tuple[float, float, float, float] = (2.0, 0.2, 0.1, 1.5)
    tc_offsets: tuple[float, float, float, float] = (0.5, -0.6, 0.3, 0.5)
    et_offsets: tuple[float, float, float, float] = (0.2, 0.1, 2.0, 0.2)
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (self.r_wt > self.r_tc > self.r_et >= 0):
            raise ValueError("radii must satisfy r_wt > r_tc > r_et >= 0")

    def resolved_brain_centre(self) -> np.ndarray:
        if self.brain_centre is not None:
            return np.asarray(self.brain_centre, dtype=np.float64)
        return (np.asarray(self.shape) - 1) / 2.0

    def resolved_brain_semiaxes(self) -> np.ndarray:
        if self.brain_semiaxes is not None:
            return np.asarray(self.brain_semiaxes, dtype=np.float64)
        return np.asarray(self.shape, dtype=np.float64) * 0.45

    def resolved_tumour_centre(self) -> np.ndarray:
        if self.tumour_centre is not None:
            return np.asarray(self.tumour_centre, dtype=np.float64)
        return self.resolved_brain_centre()


def make_phantom(spec: PhantomSpec) -> tuple[MultiModalVolume, LabelMap]:
    """Build one phantom case: four modalities plus its ground-truth labels."""
    shape = tuple(int(s) for s in spec.shape)
    centre = spec.resolved_tumour_centre()
    if np.any(centre - spec.r_wt < 0) or np.any(centre + spec.r_wt > np.asarray(shape) - 1):
        raise ValueError("tumour sphere exceeds the volume bounds")

    grid = np.indices(shape, dtype=np.float64)
    d2_tumour = sum((grid[a] - centre[a]) ** 2 for a in range(3))
    # r_et = 0 means an LGG-like phantom with no enhancing tumour at all
    et = d2_tumour <= spec.r_et**2 if spec.r_et > 0 else np.zeros(shape, dtype=bool)
    tc = d2_tumour <= spec.r_tc**2
    wt = d2_tumour <= spec.r_wt**2

    labels = np.zeros(shape, dtype=np.uint8)
    labels[wt] = 2
    labels[tc] = 1
    labels[et] = 4

    brain_c = spec.resolved_brain_centre()
    semi = spec.resolved_brain_semiaxes()
    brain = sum(((grid[a] - brain_c[a]) / semi[a]) ** 2 for a in range(3)) <= 1.0

    rng = np.random.default_rng(spec.seed)
    data = np.zeros((4,) + shape, dtype=np.float32)
    for c in range(4):
        channel = np.zeros(shape, dtype=np.float64)
        channel[brain] = spec.brain_intensity
        channel[wt] += spec.wt_offsets[c]
        channel[tc] += spec.tc_offsets[c]
        channel[et] += spec.et_offsets[c]
        if spec.noise_sigma > 0:
            noise = rng.normal(0.0, spec.noise_sigma, size=shape)
            channel[brain] += noise[brain]
        data[c] = channel.astype(np.float32)

    volume = MultiModalVolume(data=data)
    return volume, LabelMap(labels=labels)
