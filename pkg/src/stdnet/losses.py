"""Reconstruction loss, difference regularization and the total objective.

Depth tensors are ``(B, T, 1, H, W)`` in centimeters with a boolean mask of
the same shape. With ``reduction="sum"`` every term is the literal sum over
valid pixels; ``"mean"`` divides each sum by its valid-pixel count.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import LossConfig
from .numerics import ConvBlock, bicubic_resize, bilinear_resize


def _check_same(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def _reduce(values, mask, reduction):
    total = torch.where(mask, values, torch.zeros_like(values)).sum()
    if reduction == "sum":
        return total
    return total / mask.sum().clamp(min=1)


def charbonnier(d_hr, d_gt, mask, eps=1e-12, reduction="sum"):
    """``sum_q sqrt((gt - hr)^2 + eps)`` over valid pixels."""
    _check_same(d_hr, d_gt, mask)
    return _reduce(torch.sqrt((d_gt - d_hr) ** 2 + eps), mask, reduction)


def spatial_weight(sigma, hr_size, mask):
    """Channel-mean of ``sigma``, bilinearly upsampled and shifted by its per-clip valid minimum."""
    weight = bilinear_resize(sigma.mean(dim=2, keepdim=True), size=hr_size)
    big = torch.finfo(weight.dtype).max
    floor = torch.where(mask, weight, torch.full_like(weight, big)).flatten(1).amin(dim=1)
    floor = torch.where(mask.flatten(1).any(dim=1), floor, torch.zeros_like(floor))
    return weight - floor.view(-1, 1, 1, 1, 1)


def spatial_diff_loss(sigma, d_hr, d_gt, mask, reduction="sum"):
    """Residual L1 weighted by the spatial difference map."""
    _check_same(d_hr, d_gt, mask)
    if sigma.dim() != 5 or sigma.shape[:2] != d_hr.shape[:2]:
        raise ValueError(f"sigma {tuple(sigma.shape)} does not match depth {tuple(d_hr.shape)}")
    weight = spatial_weight(sigma, d_hr.shape[-2:], mask)
    return _reduce(weight * (d_gt - d_hr).abs(), mask, reduction)


def depth_differences(d, stride):
    """``|D^t - D^{t+stride}|`` along the time axis."""
    return (d[:, :-stride] - d[:, stride:]).abs()


def pair_mask(mask, stride):
    return mask[:, :-stride] & mask[:, stride:]


class DifferenceReconstructor(nn.Module):
    """Maps an LR difference feature ``(N, c, h, w)`` to an HR depth change ``(N, 1, s*h, s*w)`` in cm.

    Two convolutions at feature resolution followed by bicubic upsampling.
    The last conv starts at zero.
    """

    def __init__(self, channels=32, scale=4, depth_scale_cm=100.0):
        super().__init__()
        self.scale = scale
        self.depth_scale_cm = depth_scale_cm
        self.body = ConvBlock(channels, channels)
        self.head = ConvBlock(channels, 1, act=False).zero_()

    def forward(self, diff, depth_scale=None):
        k = self.depth_scale_cm if depth_scale is None else depth_scale
        return bicubic_resize(k * self.head(self.body(diff)), self.scale)


def temporal_diff_loss(phi, phi_hat, d_gt, mask, rdf: DifferenceReconstructor, reduction="sum",
                       depth_scale=None):
    """Adjacent plus cross frame L1 between reconstructed and true depth changes.

    ``depth_scale`` (``(B, 1, 1, 1, 1)``) is the model's per-clip depth unit;
    by default the reconstructor's fixed scale applies.
    """
    if d_gt.shape[1] < 3:
        raise ValueError(f"temporal difference loss needs T >= 3, got {d_gt.shape[1]}")
    _check_same(d_gt, mask)
    total = 0
    for stride, rep in ((1, phi), (2, phi_hat)):
        b, t = rep.shape[:2]
        if t != d_gt.shape[1] - stride:
            raise ValueError(f"difference rep for stride {stride} has {t} frames, expected {d_gt.shape[1] - stride}")
        k = None if depth_scale is None else depth_scale.expand(b, t, 1, 1, 1).flatten(0, 1)
        pred = rdf(rep.flatten(0, 1), k)
        pred = pred.view(b, t, *pred.shape[1:])
        target = depth_differences(d_gt, stride)
        _check_same(pred, target)
        total = total + _reduce((pred - target).abs(), pair_mask(mask, stride), reduction)
    return total


def total_loss(components: dict, cfg: LossConfig | None = None):
    """``L_rec + beta * (alpha_sd * L_sd + alpha_td * L_td)``.

    Disabled or missing difference terms contribute nothing; with both off the
    result is ``L_rec`` itself. Raises ``FloatingPointError`` naming the first
    non-finite component.
    """
    cfg = cfg or LossConfig()
    for name, value in components.items():
        if not math.isfinite(float(value.detach() if torch.is_tensor(value) else value)):
            raise FloatingPointError(f"non-finite loss component {name!r}: {value}")
    total = components["rec"]
    diff = 0
    if cfg.use_sd and "sd" in components:
        diff = diff + cfg.alpha_sd * components["sd"]
    if cfg.use_td and "td" in components:
        diff = diff + cfg.alpha_td * components["td"]
    if isinstance(diff, int):
        return total
    return total + cfg.beta * diff


class STDNetLoss(nn.Module):
    """Bundles the trainable difference reconstructor with the loss config."""

    def __init__(self, cfg: LossConfig | None = None, channels=32, scale=4, depth_scale_cm=100.0, seed=0):
        super().__init__()
        self.cfg = cfg or LossConfig()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 1)
            self.rdf = DifferenceReconstructor(channels, scale, depth_scale_cm)

    def forward(self, out, d_gt, mask):
        cfg = self.cfg
        parts = {"rec": charbonnier(out.d_hr, d_gt, mask, cfg.eps, cfg.reduction)}
        if cfg.use_sd:
            parts["sd"] = spatial_diff_loss(out.sigma, out.d_hr, d_gt, mask, cfg.reduction)
        if cfg.use_td:
            parts["td"] = temporal_diff_loss(out.phi, out.phi_hat, d_gt, mask, self.rdf, cfg.reduction,
                                             out.depth_scale)
        return total_loss(parts, cfg), parts
