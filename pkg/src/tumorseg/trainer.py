"""Optimization loop: Adam with plateau-halved learning rate, early stopping,
and tumour-centred patch sampling for both training frameworks.

The multi-task framework trains one 3-channel network against all subregions
at once; the cascaded framework trains three independent 1-channel networks,
one per subregion. Both share the schedule: the learning rate halves whenever
the validation Dice has not improved for plateau_patience epochs, and
training stops at max_epochs or after early_stop_patience stagnant epochs,
keeping the best-validation weights.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .network import NetworkConfig, build_network
from .objectives import DiceParams, binary_dice, multiclass_dice_loss
from .patches import VoxelBox, bounding_box, extract, plan_patches
from .preprocess import AugmentParams, augment
from .volumes import LabelMap, MultiModalVolume, labels_to_subregions

Case = tuple[MultiModalVolume, LabelMap]
STAGES = ("wt", "tc", "et")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 5e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 50
    max_epochs: int = 300
    batch_size: int = 1
    l2_weight: float = 1e-5
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_metric: float
    lr: float
    seconds: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -math.inf
    stopped_early: bool = False

    def to_csv(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_dice", "lr", "seconds"])
            for r in self.records:
                writer.writerow(
                    [r.epoch, f"{r.loss:.8f}", f"{r.val_metric:.8f}",
                     f"{r.lr:.8g}", f"{r.seconds:.3f}"]
                )
        tmp.replace(path)


def run_training_schedule(
    train_epoch: Callable[[int, float], float],
    val_metric: Callable[[int], float],
    config: TrainConfig,
    on_improvement: Callable[[], None] | None = None,
) -> TrainingHistory:
    """Drive the epoch loop: plateau-based lr halving and early stopping.

    train_epoch(epoch, lr) returns the epoch's mean loss; val_metric(epoch)
    returns the scheduling metric (higher is better). on_improvement fires
    whenever a new best metric is seen, letting callers snapshot weights.
    """
    history = TrainingHistory()
    lr = config.initial_lr
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = float(train_epoch(epoch, lr))
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite training loss {loss} at epoch {epoch}")
        metric = float(val_metric(epoch))
        history.records.append(
            EpochRecord(epoch, loss, metric, lr, time.perf_counter() - t0)
        )
        if metric > history.best_metric:
            history.best_metric = metric
            history.best_epoch = epoch
            wait = 0
            if on_improvement is not None:
                on_improvement()
        else:
            wait += 1
            if wait >= config.early_stop_patience:
                history.stopped_early = True
                break
            if wait % config.plateau_patience == 0:
                lr *= config.plateau_factor
    return history


def _case_patches(
    volume: MultiModalVolume,
    labels: LabelMap,
    target: np.ndarray,
    patch_size: tuple[int, int, int],
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Patch pairs planned on the ground-truth tumour bounding box."""
    bbox = bounding_box(labels.labels > 0)
    if bbox is None:
        bbox = VoxelBox.full(labels.shape)
    plan = plan_patches(bbox, labels.shape, patch_size)
    return [
        (extract(volume.data, spec), extract(target, spec)) for spec in plan.specs
    ]


def _stack_target(labels: LabelMap, stage: str | None) -> np.ndarray:
    subs = labels_to_subregions(labels)
    if stage is None:
        return np.stack([subs.wt, subs.tc, subs.et]).astype(np.float32)
    return getattr(subs, stage)[None].astype(np.float32)


def _l2_penalty(model: nn.Module) -> torch.Tensor:
    total = None
    for module in model.modules():
        if isinstance(module, nn.Conv3d):
            term = module.weight.pow(2).sum()
            total = term if total is None else total + term
    return total


def _train(
    train_cases: Sequence[Case],
    net_config: NetworkConfig,
    train_config: TrainConfig,
    stage: str | None,
    val_cases: Sequence[Case] | None,
) -> tuple[nn.Module, TrainingHistory]:
    if len(train_cases) == 0:
        raise TrainingError("training dataset is empty")
    torch.manual_seed(train_config.seed)
    model = build_network(net_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.initial_lr)
    dice_params = DiceParams()
    eval_cases = val_cases if val_cases else train_cases
    best_state: dict = {}

    def augmented(volume, labels, epoch, index):
        if not train_config.augment:
            return volume, labels
        seed = int(
            np.random.SeedSequence([train_config.seed, epoch, index]).generate_state(1)[0]
        )
        return augment(volume, labels, AugmentParams(seed=seed))

    def train_epoch(epoch: int, lr: float) -> float:
        model.train()
        for group in optimizer.param_groups:
            group["lr"] = lr
        losses = []
        for index, (volume, labels) in enumerate(train_cases):
            volume, labels = augmented(volume, labels, epoch, index)
            target = _stack_target(labels, stage)
            for x_np, t_np in _case_patches(volume, labels, target, net_config.patch_size):
                x = torch.from_numpy(x_np.astype(np.float32)).unsqueeze(0)
                t = torch.from_numpy(t_np).unsqueeze(0)
                optimizer.zero_grad()
                pred = model(x)
                loss = multiclass_dice_loss(t[0], pred[0], dice_params)
                loss = loss + train_config.l2_weight * _l2_penalty(model)
                loss.backward()
                optimizer.step()
                losses.append(float(loss.detach()))
        return float(np.mean(losses))

    def val_metric(epoch: int) -> float:
        model.eval()
        scores = []
        with torch.no_grad():
            for volume, labels in eval_cases:
                target = _stack_target(labels, stage)
                for x_np, t_np in _case_patches(
                    volume, labels, target, net_config.patch_size
                ):
                    x = torch.from_numpy(x_np.astype(np.float32)).unsqueeze(0)
                    pred = model(x)[0].numpy()
                    for c in range(t_np.shape[0]):
                        scores.append(binary_dice(t_np[c] > 0.5, pred[c] >= 0.5))
        return float(np.mean(scores))

    def snapshot():
        nonlocal best_state
        best_state = copy.deepcopy(model.state_dict())

    history = run_training_schedule(train_epoch, val_metric, train_config, snapshot)
    if best_state:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def train_multitask(
    dataset: Sequence[Case],
    net_config: NetworkConfig,
    train_config: TrainConfig,
    val_cases: Sequence[Case] | None = None,
) -> tuple[nn.Module, TrainingHistory]:
    """Train one 3-channel network on all subregions jointly."""
    if net_config.out_channels != 3:
        raise ValueError("multi-task training needs out_channels = 3")
    return _train(dataset, net_config, train_config, None, val_cases)


def train_cascaded(
    dataset: Sequence[Case],
    net_config: NetworkConfig,
    train_config: TrainConfig,
    stage: str,
    val_cases: Sequence[Case] | None = None,
) -> tuple[nn.Module, TrainingHistory]:
    """Train a single 1-channel stage network (wt, tc or et)."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    if net_config.out_channels != 1:
        raise ValueError("cascaded training needs out_channels = 1")
    return _train(dataset, net_config, train_config, stage, val_cases)
