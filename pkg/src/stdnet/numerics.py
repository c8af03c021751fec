"""Differentiable tensor primitives shared by the spatial and temporal branches.

Layout convention: every function takes channels-first tensors ``(N, C, H, W)``
where ``N`` folds batch and frames together. A clip ``(T, h, w, c)`` is stored
as ``(T, c, h, w)``.

Resampling uses half-pixel centers (``align_corners=False`` semantics) and
edge-replicated taps everywhere. Source coordinate of output pixel ``i`` is
``(i + 0.5) * n_in / n_out - 0.5``. No antialiasing is applied when shrinking.
"""

from __future__ import annotations

import functools
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CUBIC_A = -0.5


def cubic_kernel(x, a: float = CUBIC_A):
    """Keys cubic convolution kernel (Catmull-Rom for ``a = -0.5``)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def linear_kernel(x):
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.clip(1.0 - x, 0.0, None)


_KERNELS = {
    "bilinear": (linear_kernel, 1),
    "bicubic": (cubic_kernel, 2),
}


@functools.lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int, kernel: str) -> np.ndarray:
    """Dense ``(n_out, n_in)`` 1-D interpolation matrix; rows sum to one."""
    fn, support = _KERNELS[kernel]
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        for tap in range(base - support + 1, base + support + 1):
            w = float(fn(src - tap))
            if w != 0.0:
                mat[i, min(max(tap, 0), n_in - 1)] += w
    mat /= mat.sum(axis=1, keepdims=True)
    mat.setflags(write=False)
    return mat


def _output_size(shape, factor, size):
    if size is not None:
        out = (int(size[0]), int(size[1]))
    else:
        if factor is None or not factor > 0:
            raise ValueError(f"resize factor must be positive, got {factor!r}")
        out = (round(shape[0] * factor), round(shape[1] * factor))
    if out[0] < 1 or out[1] < 1:
        raise ValueError(f"resize output must be at least 1x1, got {out}")
    return out


def resize(x: torch.Tensor, factor: float | None = None, *, size=None,
           kernel: str = "bilinear") -> torch.Tensor:
    """Separable resize of the last two axes by ``factor`` or to ``size``.

    Any leading axes are allowed. Output dims are ``round(dim * factor)``.
    """
    if kernel not in _KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    h, w = x.shape[-2:]
    oh, ow = _output_size((h, w), factor, size)
    if (oh, ow) == (h, w):
        return x
    my = torch.tensor(resample_matrix(h, oh, kernel), dtype=x.dtype, device=x.device)
    mx = torch.tensor(resample_matrix(w, ow, kernel), dtype=x.dtype, device=x.device)
    return torch.matmul(torch.matmul(my, x), mx.transpose(0, 1))


def bilinear_resize(x, factor=None, *, size=None):
    return resize(x, factor, size=size, kernel="bilinear")


def bicubic_resize(x, factor=None, *, size=None):
    return resize(x, factor, size=size, kernel="bicubic")


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Channel-to-space rearrangement ``(N, C*r*r, H, W) -> (N, C, H*r, W*r)``.

    Input channel ``c*r*r + i*r + j`` lands at sub-pixel ``(i, j)`` of output
    channel ``c``.
    """
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ValueError(f"channels ({c}) not divisible by r^2 ({r * r})")
    oc = c // (r * r)
    x = x.reshape(n, oc, r, r, h, w).permute(0, 1, 4, 2, 5, 3)
    return x.reshape(n, oc, h * r, w * r)


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    n, c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"spatial dims ({h}, {w}) not divisible by r ({r})")
    x = x.reshape(n, c, h // r, r, w // r, r).permute(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * r * r, h // r, w // r)


def dynamic_filter(x: torch.Tensor, kernels: torch.Tensor, groups: int = 1) -> torch.Tensor:
    """Per-pixel filtering with spatially varying kernels.

    Args:
        x: features ``(N, C, H, W)``.
        kernels: ``(N, groups * k * k, H, W)``; each channel group of ``x``
            shares one ``k x k`` kernel per pixel (row-major window order).
        groups: number of channel groups; must divide ``C``.

    Borders are zero-padded.
    """
    n, c, h, w = x.shape
    kn, kc, kh, kw = kernels.shape
    if (kn, kh, kw) != (n, h, w):
        raise ValueError(f"kernel field {tuple(kernels.shape)} does not match features {tuple(x.shape)}")
    if c % groups or kc % groups:
        raise ValueError(f"groups={groups} must divide channels ({c}) and kernel channels ({kc})")
    taps = kc // groups
    k = math.isqrt(taps)
    if k * k != taps or k % 2 == 0:
        raise ValueError(f"kernel field must hold odd k*k taps per group, got {taps}")
    cols = F.unfold(x, k, padding=k // 2).view(n, groups, c // groups, taps, h, w)
    out = (cols * kernels.view(n, groups, 1, taps, h, w)).sum(dim=3)
    return out.reshape(n, c, h, w)


def _bilinear_gather(x: torch.Tensor, py: torch.Tensor, px: torch.Tensor) -> torch.Tensor:
    """Sample ``x (N, G, Cg, H, W)`` at float positions ``(N, G, S)``.

    Corners falling outside the image read as zero. Returns ``(N, G, Cg, S)``.
    """
    n, g, cg, h, w = x.shape
    flat = x.reshape(n, g, cg, h * w)
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    ly, lx = py - y0, px - x0
    y0, x0 = y0.long(), x0.long()
    out = 0
    for dy, wy in ((0, 1 - ly), (1, ly)):
        for dx, wx in ((0, 1 - lx), (1, lx)):
            yy, xx = y0 + dy, x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1))
            vals = torch.gather(flat, 3, idx.unsqueeze(2).expand(n, g, cg, idx.shape[-1]))
            out = out + vals * (wy * wx * inside).unsqueeze(2)
    return out


def deformable_sample(x: torch.Tensor, offsets: torch.Tensor, modulation: torch.Tensor,
                      weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Modulated deformable convolution (stride 1, 'same' padding).

    Args:
        x: ``(N, C, H, W)``.
        offsets: ``(N, 2 * G * K, H, W)`` holding ``(dy, dx)`` pairs for each
            deformable group ``G`` and kernel tap ``K = kh * kw`` in that order.
        modulation: ``(N, G * K, H, W)``, expected in ``[0, 1]``.
        weight: ``(C_out, C, kh, kw)`` with odd ``kh``, ``kw``.
        bias: optional ``(C_out,)``.

    Tap ``(ky, kx)`` of output pixel ``(i, j)`` reads ``x`` bilinearly at
    ``(i + ky - kh//2 + dy, j + kx - kw//2 + dx)``; out-of-bounds reads are 0.
    """
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    taps = kh * kw
    if cin != c:
        raise ValueError(f"weight expects {cin} input channels, got {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("deformable kernel size must be odd")
    if offsets.shape[0] != n or offsets.shape[-2:] != (h, w) or offsets.shape[1] % (2 * taps):
        raise ValueError(f"offset field {tuple(offsets.shape)} inconsistent with input {tuple(x.shape)} and {taps} taps")
    g = offsets.shape[1] // (2 * taps)
    if modulation.shape != (n, g * taps, h, w):
        raise ValueError(f"modulation must have shape {(n, g * taps, h, w)}, got {tuple(modulation.shape)}")
    if c % g:
        raise ValueError(f"deformable groups ({g}) must divide channels ({c})")

    dtype, dev = x.dtype, x.device
    ky, kx = torch.meshgrid(torch.arange(kh, dtype=dtype, device=dev) - kh // 2,
                            torch.arange(kw, dtype=dtype, device=dev) - kw // 2, indexing="ij")
    gy, gx = torch.meshgrid(torch.arange(h, dtype=dtype, device=dev),
                            torch.arange(w, dtype=dtype, device=dev), indexing="ij")
    off = offsets.view(n, g, taps, 2, h, w)
    py = gy + ky.reshape(taps, 1, 1) + off[:, :, :, 0]
    px = gx + kx.reshape(taps, 1, 1) + off[:, :, :, 1]
    samples = _bilinear_gather(x.view(n, g, c // g, h, w),
                               py.reshape(n, g, -1), px.reshape(n, g, -1))
    samples = samples.view(n, g, c // g, taps, h * w) * modulation.view(n, g, 1, taps, h * w)
    cols = samples.reshape(n, c * taps, h * w)
    out = torch.matmul(weight.reshape(cout, c * taps), cols).view(n, cout, h, w)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class ConvBlock(nn.Module):
    """'Same'-padded conv with an optional LeakyReLU(0.1)."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, act=True):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride, kernel_size // 2)
        self.act = nn.LeakyReLU(0.1) if act else nn.Identity()

    def forward(self, x):
        if x.shape[1] != self.conv.in_channels:
            raise ValueError(f"ConvBlock expects {self.conv.in_channels} channels, got {x.shape[1]}")
        return self.act(self.conv(x))

    @torch.no_grad()
    def zero_(self):
        self.conv.weight.zero_()
        self.conv.bias.zero_()
        return self

    @torch.no_grad()
    def pass_through_(self, start: int = 0):
        """Initialize to copy input channels ``start:start+out`` unchanged."""
        conv = self.conv
        self.zero_()
        k = conv.kernel_size[0] // 2
        for o in range(conv.out_channels):
            conv.weight[o, start + o, k, k] = 1.0
        return self


class ResidualBlock(nn.Module):
    """conv-LReLU-conv with identity skip."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(channels, channels, 3, 1, 1),
        )

    def forward(self, x):
        return x + self.body(x)


def fuse_layer(in_channels, out_channels, n_blocks=0):
    """Fusion conv (no activation) followed by ``n_blocks`` residual blocks."""
    layers = [ConvBlock(in_channels, out_channels, 3, act=False)]
    layers += [ResidualBlock(out_channels) for _ in range(n_blocks)]
    return nn.Sequential(*layers)
