"""The full network: spatial branch, temporal branch and reconstruction."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .config import ModelConfig
from .spatial import DepthEncoder, RGBEncoder, SpatialDifference, spatial_difference_rep
from .temporal import Reconstructor, TemporalDifference, temporal_difference_reps


class STDNetOutput(NamedTuple):
    d_hr: torch.Tensor      # (B, T, 1, s*h, s*w), cm
    sigma: torch.Tensor     # (B, T, c, h, w)
    phi: torch.Tensor       # (B, T-1, c, h, w)
    phi_hat: torch.Tensor   # (B, T-2, c, h, w)
    weights: torch.Tensor   # (B, T, 1, h, w)
    depth_scale: torch.Tensor | None = None   # (B, 1, 1, 1, 1), cm per unit of network output


class STDNet(nn.Module):
    """RGB-guided video depth super-resolution.

    Inputs are batched clips: ``d_lr`` of shape ``(B, T, 1, h, w)`` in
    centimeters and ``rgb`` of shape ``(B, T, 3, s*h, s*w)`` in ``[0, 1]``.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        c = cfg.channels
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.depth_encoder = DepthEncoder(c, cfg.depth_layers)
            self.rgb_encoder = RGBEncoder(cfg.scale, c, cfg.rgb_layers)
            self.spatial = SpatialDifference(c, cfg.filter_size, cfg.filter_groups, cfg.fuse_blocks)
            self.temporal = TemporalDifference(c, cfg.deform_kernel, cfg.deform_groups, cfg.max_offset,
                                               cfg.fuse_blocks, cfg.neighbors, cfg.recurrent,
                                               cfg.tie_directions)
            self.reconstruct = Reconstructor(cfg.scale, c, cfg.recon_channels, cfg.depth_scale_cm)

    @property
    def scale(self) -> int:
        return self.cfg.scale

    def forward(self, d_lr: torch.Tensor, rgb: torch.Tensor) -> STDNetOutput:
        if d_lr.dim() != 5 or d_lr.shape[2] != 1:
            raise ValueError(f"d_lr must be (B, T, 1, h, w), got {tuple(d_lr.shape)}")
        if rgb.dim() != 5 or rgb.shape[:2] != d_lr.shape[:2]:
            raise ValueError(f"rgb must be (B, T, 3, H, W) matching d_lr, got {tuple(rgb.shape)}")
        b, t, _, h, w = d_lr.shape
        if t < 3:
            raise ValueError(f"clips need at least 3 frames, got {t}")
        center, scale = self.depth_stats(d_lr)
        d = d_lr.flatten(0, 1)
        per_frame = lambda x: x.expand(b, t, 1, 1, 1).flatten(0, 1)  # noqa: E731
        f_d = self.depth_encoder((d - per_frame(center)) / per_frame(scale))
        f_r = self.rgb_encoder(rgb.flatten(0, 1), lr_size=(h, w))
        sigma = spatial_difference_rep(f_d)
        f_sd, weights = self.spatial(f_d, f_r, sigma)

        unflat = lambda x: x.view(b, t, *x.shape[1:])  # noqa: E731
        f_sd, f_r, sigma, weights = map(unflat, (f_sd, f_r, sigma, weights))
        phi, phi_hat = temporal_difference_reps(f_sd)
        f_td = self.temporal(f_sd, f_r, weights, phi, phi_hat)
        d_hr = unflat(self.reconstruct(f_td.flatten(0, 1), d, per_frame(scale)))
        return STDNetOutput(d_hr, sigma, phi, phi_hat, weights, scale)

    def depth_stats(self, d_lr):
        """Per-clip ``(center, scale)`` in cm, each ``(B, 1, 1, 1, 1)``.

        ``fixed`` uses ``(0, depth_scale_cm)``. ``clip`` uses the mean and
        standard deviation of the valid (positive) LR depths, with the scale
        floored at 1 cm, which makes the network equivariant to affine changes
        of depth.
        """
        b = d_lr.shape[0]
        if self.cfg.depth_norm == "fixed":
            zero = d_lr.new_zeros(b, 1, 1, 1, 1)
            return zero, zero + self.cfg.depth_scale_cm
        valid = (d_lr > 0).to(d_lr.dtype)
        n = valid.sum(dim=(1, 2, 3, 4), keepdim=True).clamp(min=1)
        center = (d_lr * valid).sum(dim=(1, 2, 3, 4), keepdim=True) / n
        var = (((d_lr - center) * valid) ** 2).sum(dim=(1, 2, 3, 4), keepdim=True) / n
        return center, var.sqrt().clamp(min=1.0)


def param_count(cfg: ModelConfig | None = None) -> int:
    """Number of learnable scalars in the network for ``cfg``."""
    model = STDNet(cfg)
    return sum(p.numel() for p in model.parameters())
