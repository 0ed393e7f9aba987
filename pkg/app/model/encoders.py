# app/model/encoders.py
from typing import List, Sequence

import torch
import torch.nn as nn

from app.core.config import ENCODER_FEATURE_SIZE, IMAGE_SIZE, NUM_EXPERT_FEATURES, TS_KERNEL_SIZES
from app.core.errors import ShapeError

TYPE_TAGS = ("ts", "img", "exp")


def _split_channels(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


class MultiScaleBlock(nn.Module):
    """
    Parallel same-padded 1-D convolutions, one per kernel size, concatenated on channels,
    then layer normalization over (channels, time) and ReLU.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_sizes: Sequence[int]):
        super().__init__()
        widths = _split_channels(out_channels, len(kernel_sizes))
        self.branches = nn.ModuleList(
            nn.Conv1d(in_channels, width, kernel_size=k, padding="same")
            for k, width in zip(kernel_sizes, widths)
        )
        # One group over all channels: per-sample statistics only.
        self.norm = nn.GroupNorm(1, out_channels)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.cat([branch(x) for branch in self.branches], dim=1)
        return self.act(self.norm(out))


class OmniScaleEncoder(nn.Module):
    """
    Maps a normalized series (B, T) to a 128-length feature with prime-sized kernels.

    Kernels longer than the series are skipped; the size-1 branch always runs.
    """

    def __init__(self, series_length: int, hidden: int = 96, out_features: int = ENCODER_FEATURE_SIZE,
                 kernel_sizes: Sequence[int] = TS_KERNEL_SIZES):
        super().__init__()
        self.kernel_sizes = [k for k in kernel_sizes if k <= series_length] or [1]
        self.block1 = MultiScaleBlock(1, hidden, self.kernel_sizes)
        self.block2 = MultiScaleBlock(hidden, out_features, self.kernel_sizes)

    def forward(self, series: torch.Tensor) -> torch.Tensor:
        if series.dim() != 2:
            raise ShapeError(f"Expected (batch, T) series, got {tuple(series.shape)}")
        x = self.block2(self.block1(series.unsqueeze(1)))
        return x.mean(dim=-1)


class ImageEncoder(nn.Module):
    """Four stride-2 3x3 convolutions (3->16->32->64->128), layer norm + ReLU, global average pool."""

    def __init__(self, out_features: int = ENCODER_FEATURE_SIZE):
        super().__init__()
        channels = [3, 16, 32, 64, out_features]
        layers: List[nn.Module] = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers += [nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1), nn.GroupNorm(1, c_out), nn.ReLU()]
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f"Expected (batch, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {tuple(image.shape)}")
        return self.net(image).mean(dim=(-2, -1))


class ExpertEncoder(nn.Module):
    """Single affine map from the standardized expert features to 128 values."""

    def __init__(self, out_features: int = ENCODER_FEATURE_SIZE):
        super().__init__()
        self.linear = nn.Linear(NUM_EXPERT_FEATURES, out_features)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != NUM_EXPERT_FEATURES:
            raise ShapeError(f"Expected {NUM_EXPERT_FEATURES} expert features, got {features.shape[-1]}")
        return self.linear(features)


class PatchProjector(nn.Module):
    """Cuts a (B, P*L) feature into P patches of length L and projects each to d."""

    def __init__(self, type_tag: str, nodes: int, patch_len: int, hidden: int):
        super().__init__()
        if type_tag not in TYPE_TAGS:
            raise ValueError(f"Unknown type tag '{type_tag}'")
        self.type_tag = type_tag
        self.nodes = nodes
        self.patch_len = patch_len
        self.proj = nn.Linear(patch_len, hidden)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        if feature.shape[-1] != self.nodes * self.patch_len:
            raise ShapeError(
                f"Feature length {feature.shape[-1]} != {self.nodes} nodes x {self.patch_len}"
            )
        patches = feature.reshape(*feature.shape[:-1], self.nodes, self.patch_len)
        return self.proj(patches)
