"""Modified 3D U-net: heavy residual encoder, densely merged skip pathways,
light decoder with summed multi-scale segmentation heads.

Topology. Nodes are indexed (level, column). Column 0 is the encoder: two
residual blocks per level, strided-convolution downsampling between levels,
and base_filters * 2**level channels at each level. Every other node
(level l, column j) receives the concatenation of all previous same-level
node outputs with the upsampled output of node (level l+1, column j-1), so
levels form a triangle: level l holds columns 0 .. depth-1-l and the
bottleneck keeps only its encoder node. A 1x1x1 segmentation head taps the
last node of every level above the bottleneck; heads are upsampled and
summed into the next finer head, and a single sigmoid produces the output
probabilities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 4
    out_channels: int = 3
    patch_size: tuple[int, int, int] = (128, 128, 128)
    depth: int = 5
    base_filters: int = 16
    groupnorm_groups: int = 8
    dropout_rate: float = 0.3
    weight_decay: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "patch_size", tuple(int(p) for p in self.patch_size))
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.out_channels not in (1, 3):
            raise ValueError("out_channels must be 1 (cascaded stage) or 3 (multi-task)")
        if self.base_filters % self.groupnorm_groups != 0:
            raise ValueError(
                f"base_filters ({self.base_filters}) must be divisible by "
                f"groupnorm_groups ({self.groupnorm_groups})"
            )
        stride = 2 ** (self.depth - 1)
        if any(p % stride != 0 for p in self.patch_size):
            raise ValueError(
                f"patch size {self.patch_size} must be divisible by {stride} "
                f"(2**(depth-1))"
            )

    def level_channels(self, level: int) -> int:
        return self.base_filters * 2**level


class ResidualBlock(nn.Module):
    """Two conv(3x3x3) + GroupNorm + ReLU stages with an identity shortcut."""

    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, channels)
        self.conv2 = nn.Conv3d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, channels)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = F.relu(self.norm2(self.conv2(y)))
        return x + y


class ConvBlock(nn.Module):
    """Single conv(3x3x3) + GroupNorm + ReLU stage (decoder nodes)."""

    def __init__(self, in_channels: int, out_channels: int, groups: int):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, 3, padding=1)
        self.norm = nn.GroupNorm(groups, out_channels)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class UpSample(nn.Module):
    """2x trilinear upsampling followed by a 1x1x1 channel-matching conv."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, 1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="trilinear",
                                       align_corners=False))


class DenseUNet3D(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        ch = [config.level_channels(l) for l in range(config.depth)]
        g = config.groupnorm_groups

        self.stem = nn.Conv3d(config.in_channels, ch[0], 3, padding=1)
        self.encoders = nn.ModuleList(
            nn.Sequential(ResidualBlock(ch[l], g), ResidualBlock(ch[l], g))
            for l in range(config.depth)
        )
        self.downs = nn.ModuleList(
            nn.Conv3d(ch[l], ch[l + 1], 3, stride=2, padding=1)
            for l in range(config.depth - 1)
        )

        # nodes[(l, j)] for j >= 1 consume (j + 1) * ch[l] concatenated channels
        self.ups = nn.ModuleDict()
        self.nodes = nn.ModuleDict()
        for l in range(config.depth - 1):
            for j in range(1, config.depth - l):
                self.ups[f"{l}_{j}"] = UpSample(ch[l + 1], ch[l])
                self.nodes[f"{l}_{j}"] = ConvBlock((j + 1) * ch[l], ch[l], g)
        self.dropout = nn.Dropout3d(config.dropout_rate)

        self.heads = nn.ModuleList(
            nn.Conv3d(ch[l], config.out_channels, 1)
            for l in range(config.depth - 1)
        )
        # start the summed logits well below zero so the initial foreground
        # probability is small; soft Dice converges poorly from p ~ 0.5
        for head in self.heads:
            nn.init.constant_(head.bias, -2.0 / len(self.heads))

    @property
    def patch_size(self) -> tuple[int, int, int]:
        return self.config.patch_size

    def forward(self, x):
        if tuple(x.shape[-3:]) != self.config.patch_size:
            raise ValueError(
                f"input spatial shape {tuple(x.shape[-3:])} does not match "
                f"configured patch size {self.config.patch_size}"
            )
        depth = self.config.depth
        grid: dict[tuple[int, int], torch.Tensor] = {}
        h = self.stem(x)
        for l in range(depth):
            if l > 0:
                h = self.downs[l - 1](grid[(l - 1, 0)])
            grid[(l, 0)] = self.encoders[l](h)

        for j in range(1, depth):
            for l in range(depth - 1 - j, -1, -1):
                up = self.ups[f"{l}_{j}"](grid[(l + 1, j - 1)])
                merged = torch.cat([grid[(l, k)] for k in range(j)] + [up], dim=1)
                grid[(l, j)] = self.nodes[f"{l}_{j}"](self.dropout(merged))

        # deep supervision: sum each head into the next finer one
        logits = self.heads[depth - 2](grid[(depth - 2, 1)])
        for l in range(depth - 3, -1, -1):
            up = F.interpolate(logits, scale_factor=2, mode="trilinear",
                               align_corners=False)
            logits = self.heads[l](grid[(l, depth - 1 - l)]) + up
        return torch.sigmoid(logits)


def build_network(config: NetworkConfig) -> DenseUNet3D:
    return DenseUNet3D(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def predict_patch(model, patch: np.ndarray, train_mode: bool = False) -> np.ndarray:
    """Run one (channels, D, H, W) numpy patch through a model.

    torch modules are switched to eval mode (dropout off, deterministic)
    unless train_mode is set; any other callable is treated as a
    numpy-in/numpy-out predictor, which keeps mock models trivial.
    """
    if isinstance(model, nn.Module):
        was_training = model.training
        model.train(train_mode)
        try:
            x = torch.from_numpy(np.ascontiguousarray(patch, dtype=np.float32))
            with torch.no_grad():
                y = model(x.unsqueeze(0))[0]
            return y.numpy()
        finally:
            model.train(was_training)
    return np.asarray(model(patch))


def save_checkpoint(model: DenseUNet3D, path: str | Path, stage: str | None = None):
    """Persist weights plus the config echo and a format-version tag."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.config),
        "stage": stage,
        "state_dict": model.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[DenseUNet3D, str | None]:
    """Rebuild the model from its config echo and load the weights."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    cfg = payload["config"]
    cfg["patch_size"] = tuple(cfg["patch_size"])
    config = NetworkConfig(**cfg)
    model = build_network(config)
    model.load_state_dict(payload["state_dict"], strict=True)
    model.eval()
    return model, payload.get("stage")
