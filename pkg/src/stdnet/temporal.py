"""Temporal difference branch: difference-guided bidirectional propagation.

Clip tensors here are ``(B, T, C, h, w)``. Each direction visits frames in
order and fuses the current frame with an adjacent source (``t-1``) and a
cross source (``t-2``); the backward direction is the forward one applied to
the time-reversed clip. Frames without a neighbour fuse with themselves,
which is exactly what a zero difference map describes.

Two source policies exist. The default (``recurrent=False``) takes the
neighbours' spatially refined features, so every frame of a static clip sees
identical inputs and the output stays frame-constant. With
``recurrent=True`` the sources are the previously propagated hidden states
(a second-order recurrence with a two-deep history).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .numerics import ConvBlock, deformable_sample, fuse_layer, pixel_shuffle, bicubic_resize
from .spatial import scale_stages


def temporal_difference_reps(f_sd: torch.Tensor):
    """Consecutive ``|F^t - F^{t+1}|`` and cross ``|F^t - F^{t+2}|`` along axis 1."""
    if f_sd.shape[1] < 3:
        raise ValueError(f"temporal differences need T >= 3, got T={f_sd.shape[1]}")
    phi = (f_sd[:, :-1] - f_sd[:, 1:]).abs()
    phi_hat = (f_sd[:, :-2] - f_sd[:, 2:]).abs()
    return phi, phi_hat


class TemporalDifferenceEncoder(nn.Module):
    """Difference map to clamped offsets and sigmoid modulation, one per deformable tap."""

    def __init__(self, channels=32, kernel_size=3, groups=1, max_offset=10.0):
        super().__init__()
        self.max_offset = max_offset
        self.n = groups * kernel_size ** 2
        self.body = ConvBlock(channels, channels)
        self.head = ConvBlock(channels, 3 * self.n, act=False).zero_()

    def forward(self, diff):
        out = self.head(self.body(diff))
        offsets = out[:, :2 * self.n].clamp(-self.max_offset, self.max_offset)
        return offsets, torch.sigmoid(out[:, 2 * self.n:])


class FrameFusion(nn.Module):
    """Aligns a source depth/RGB feature pair to the current frame and fuses.

    ``out = fuse([F_cur, D(F_src), w * D(F_r_src)])`` with ``D`` a modulated
    deformable conv (weights shared by the depth and RGB paths) whose offsets
    and modulation come from the difference map.
    """

    def __init__(self, channels=32, kernel_size=3, groups=1, max_offset=10.0, fuse_blocks=1):
        super().__init__()
        self.encoder = TemporalDifferenceEncoder(channels, kernel_size, groups, max_offset)
        align = nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2)
        self.weight = nn.Parameter(align.weight.detach().clone())
        self.bias = nn.Parameter(align.bias.detach().clone())
        self.fuse = fuse_layer(3 * channels, channels, fuse_blocks)

    def align(self, x, offsets, modulation):
        return deformable_sample(x, offsets, modulation, self.weight, self.bias)

    def forward(self, f_cur, f_src, r_src, w, diff):
        if not (f_cur.shape == f_src.shape == r_src.shape == diff.shape):
            raise ValueError("current, source, RGB source and difference features must share a shape")
        if w.shape[0] != f_cur.shape[0] or w.shape[-2:] != f_cur.shape[-2:]:
            raise ValueError(f"weight map {tuple(w.shape)} does not match features {tuple(f_cur.shape)}")
        offsets, mod = self.encoder(diff)
        return self.fuse(torch.cat([f_cur, self.align(f_src, offsets, mod),
                                    w * self.align(r_src, offsets, mod)], dim=1))


def combine_fusions(adjacent: torch.Tensor, cross: torch.Tensor) -> torch.Tensor:
    if adjacent.shape != cross.shape:
        raise ValueError(f"cannot combine {tuple(adjacent.shape)} and {tuple(cross.shape)}")
    return adjacent + cross


def _flat(x):
    return x.flatten(0, 1)


class Propagation(nn.Module):
    """One propagation direction (forward in time)."""

    def __init__(self, channels=32, kernel_size=3, groups=1, max_offset=10.0,
                 fuse_blocks=1, neighbors=2):
        super().__init__()
        args = (channels, kernel_size, groups, max_offset, fuse_blocks)
        self.adjacent = FrameFusion(*args)
        self.cross = FrameFusion(*args) if neighbors == 2 else None

    def _fuse(self, f_cur, src1, r1, d1, src2, r2, d2, w):
        out = self.adjacent(f_cur, src1, r1, w, d1)
        if self.cross is None:
            return combine_fusions(out, torch.zeros_like(out))
        return combine_fusions(out, self.cross(f_cur, src2, r2, w, d2))

    def forward(self, f_sd, f_r, w, phi, phi_hat, recurrent=False):
        if recurrent:
            return self._recurrent(f_sd, f_r, w, phi, phi_hat)
        b, t = f_sd.shape[:2]
        zero = torch.zeros_like(f_sd[:, :1])
        idx1 = [0] + list(range(t - 1))
        idx2 = [0, 1] + list(range(t - 2))
        d1 = torch.cat([zero, phi], dim=1)
        d2 = torch.cat([zero, zero, phi_hat], dim=1)
        out = self._fuse(_flat(f_sd), _flat(f_sd[:, idx1]), _flat(f_r[:, idx1]), _flat(d1),
                         _flat(f_sd[:, idx2]), _flat(f_r[:, idx2]), _flat(d2), _flat(w))
        return out.view_as(f_sd)

    def _recurrent(self, f_sd, f_r, w, phi, phi_hat):
        zero = torch.zeros_like(f_sd[:, 0])
        outputs: list[torch.Tensor] = []
        for i in range(f_sd.shape[1]):
            cur = f_sd[:, i]
            if i >= 1:
                src1, r1, d1 = outputs[i - 1], f_r[:, i - 1], phi[:, i - 1]
            else:
                src1, r1, d1 = cur, f_r[:, i], zero
            if i >= 2:
                src2, r2, d2 = outputs[i - 2], f_r[:, i - 2], phi_hat[:, i - 2]
            else:
                src2, r2, d2 = cur, f_r[:, i], zero
            outputs.append(self._fuse(cur, src1, r1, d1, src2, r2, d2, w[:, i]))
        return torch.stack(outputs, dim=1)


class TemporalDifference(nn.Module):
    """Forward and backward propagation followed by per-frame aggregation.

    ``F_td^t = fuse([F_sd^t, F_f^t, F_b^t])``. With ``tie_directions`` the two
    directions share one :class:`Propagation`.
    """

    def __init__(self, channels=32, kernel_size=3, groups=1, max_offset=10.0,
                 fuse_blocks=1, neighbors=2, recurrent=False, tie_directions=False):
        super().__init__()
        self.recurrent = recurrent
        self.forward_prop = Propagation(channels, kernel_size, groups, max_offset, fuse_blocks, neighbors)
        self.backward_prop = self.forward_prop if tie_directions else Propagation(
            channels, kernel_size, groups, max_offset, fuse_blocks, neighbors)
        self.aggregate = fuse_layer(3 * channels, channels, fuse_blocks)

    def forward(self, f_sd, f_r, w, phi, phi_hat):
        if f_sd.shape[1] < 3:
            raise ValueError(f"propagation needs T >= 3, got T={f_sd.shape[1]}")
        f_f = self.forward_prop(f_sd, f_r, w, phi, phi_hat, self.recurrent)
        rev = lambda x: x.flip(1)  # noqa: E731
        f_b = rev(self.backward_prop(rev(f_sd), rev(f_r), rev(w), rev(phi), rev(phi_hat), self.recurrent))
        out = self.aggregate(torch.cat([_flat(f_sd), _flat(f_f), _flat(f_b)], dim=1))
        return out.view_as(f_sd)


class Reconstructor(nn.Module):
    """Pixel-shuffle upsampler with a bicubic global residual.

    ``D_HR = depth_scale * head(F_td) + bicubic(D_LR, s)``; the head starts at
    zero so an untrained model returns the bicubic upsampling exactly.
    """

    def __init__(self, scale, channels=32, recon_channels=None, depth_scale_cm=100.0):
        super().__init__()
        if scale not in (4, 8, 16):
            raise ValueError(f"unsupported scale {scale}; expected 4, 8 or 16")
        self.scale = scale
        self.depth_scale_cm = depth_scale_cm
        rc = recon_channels or channels
        stages = []
        cin = channels
        for _ in range(scale_stages(scale)):
            stages.append(ConvBlock(cin, 4 * rc, act=False))
            cin = rc
        self.stages = nn.ModuleList(stages)
        self.act = nn.LeakyReLU(0.1)
        self.head = ConvBlock(rc, 1, act=False).zero_()

    def forward(self, f_td, d_lr, depth_scale=None):
        x = f_td
        for stage in self.stages:
            x = self.act(pixel_shuffle(stage(x), 2))
        k = self.depth_scale_cm if depth_scale is None else depth_scale
        return k * self.head(x) + bicubic_resize(d_lr, self.scale)
