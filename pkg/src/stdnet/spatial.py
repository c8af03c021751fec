"""Spatial difference branch: intra-frame RGB-D aggregation guided by the
down-up resampling residual of the depth features.

All modules here operate per frame on ``(N, C, h, w)`` tensors; callers fold
time into the batch axis, so nothing in this file can leak information
between frames.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .numerics import ConvBlock, bilinear_resize, dynamic_filter, fuse_layer, pixel_unshuffle


class DepthEncoder(nn.Module):
    """LR depth ``(N, 1, h, w)`` (already divided by the depth scale) to ``(N, c, h, w)``."""

    def __init__(self, channels=32, layers=3):
        super().__init__()
        mods = [ConvBlock(1, channels, act=layers > 1)]
        for i in range(1, layers):
            mods.append(ConvBlock(channels, channels, act=i < layers - 1))
        self.body = nn.Sequential(*mods)

    def forward(self, d):
        return self.body(d)

    @property
    def last(self) -> ConvBlock:
        return self.body[-1]


class RGBEncoder(nn.Module):
    """HR RGB ``(N, 3, s*h, s*w)`` to LR features ``(N, c, h, w)``.

    The stride-``s`` reduction is a space-to-depth rearrangement followed by
    convolutions, so no pixel of the guide is discarded before learning.
    """

    def __init__(self, scale, channels=32, layers=3):
        super().__init__()
        self.scale = scale
        mods = [ConvBlock(3 * scale * scale, channels, act=layers > 1)]
        for i in range(1, layers):
            mods.append(ConvBlock(channels, channels, act=i < layers - 1))
        self.body = nn.Sequential(*mods)

    def forward(self, rgb, lr_size=None):
        h, w = rgb.shape[-2:]
        if rgb.shape[1] != 3:
            raise ValueError(f"RGB input needs 3 channels, got {rgb.shape[1]}")
        if lr_size is not None and (h, w) != (lr_size[0] * self.scale, lr_size[1] * self.scale):
            raise ValueError(f"RGB size {(h, w)} is not {self.scale}x the LR size {tuple(lr_size)}")
        return self.body(pixel_unshuffle(rgb, self.scale))


def spatial_difference_rep(f_d: torch.Tensor) -> torch.Tensor:
    """``|F - up2(down2(F))|`` with bilinear resampling, over the last two axes."""
    h, w = f_d.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"spatial difference needs h, w >= 2, got {(h, w)}")
    coarse = bilinear_resize(f_d, size=(round(h / 2), round(w / 2)))
    return (f_d - bilinear_resize(coarse, size=(h, w))).abs()


class KernelGenerator(nn.Module):
    """Predicts softmax-normalized ``k x k`` kernels per pixel and channel group."""

    def __init__(self, channels=32, kernel_size=3, groups=1):
        super().__init__()
        self.kernel_size = kernel_size
        self.groups = groups
        self.body = ConvBlock(channels, channels)
        self.head = ConvBlock(channels, groups * kernel_size ** 2, act=False)

    def forward(self, sigma):
        logits = self.head(self.body(sigma))
        n, _, h, w = logits.shape
        taps = self.kernel_size ** 2
        return logits.view(n, self.groups, taps, h, w).softmax(dim=2).view(n, -1, h, w)


class WeightEncoder(nn.Module):
    """conv3x3, channel max and mean, 1x1 projection, sigmoid -> ``(N, 1, h, w)``."""

    def __init__(self, channels=32):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.proj = nn.Conv2d(2, 1, 1)

    def forward(self, sigma):
        y = self.conv(sigma)
        pooled = torch.cat([y.amax(dim=1, keepdim=True), y.mean(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.proj(pooled))


class SpatialDifference(nn.Module):
    """Fuses depth features with RGB features reweighted and refiltered by ``sigma``.

    Returns ``(F_sd, w)`` where ``w`` is reused by the temporal branch.
    """

    def __init__(self, channels=32, kernel_size=3, groups=1, fuse_blocks=1):
        super().__init__()
        self.groups = groups
        self.kernels = KernelGenerator(channels, kernel_size, groups)
        self.weights = WeightEncoder(channels)
        self.fuse = fuse_layer(3 * channels, channels, fuse_blocks)

    def forward(self, f_d, f_r, sigma):
        if not (f_d.shape == f_r.shape == sigma.shape):
            raise ValueError(f"shape mismatch: F_d {tuple(f_d.shape)}, F_r {tuple(f_r.shape)}, "
                             f"sigma {tuple(sigma.shape)}")
        k = self.kernels(sigma)
        w = self.weights(sigma)
        f_r_hat = dynamic_filter(f_r, k, self.groups)
        return self.fuse(torch.cat([f_d, w * f_r, f_r_hat], dim=1)), w


def scale_stages(scale: int) -> int:
    stages = int(round(math.log2(scale)))
    if 2 ** stages != scale:
        raise ValueError(f"scale must be a power of two, got {scale}")
    return stages
