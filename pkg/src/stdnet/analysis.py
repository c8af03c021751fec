"""Long-tail statistics of spatial and temporal depth differences.

Differences are divided by a normalization scale (by default the clip's
largest valid depth) and histogrammed over ``[0, 1]``; values past 1 fall in
the last bin. Passing ``scale=1.0`` with a wider ``value_range`` gives
absolute centimeters instead.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .data import DepthVideo
from .numerics import bicubic_resize


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                writer.writerow([f"{lo:.6g}", f"{hi:.6g}", int(c)])


def _histogram(values, bins, value_range):
    lo, hi = value_range
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return Histogram(counts.astype(np.int64), edges)


def _norm(video: DepthVideo, scale):
    if scale is not None:
        return float(scale)
    return float(video.depth[video.mask].max()) if video.mask.any() else 1.0


def upsample_depth(lr: DepthVideo, s: int) -> np.ndarray:
    up = bicubic_resize(torch.from_numpy(lr.depth.astype(np.float64)), s)
    return up.numpy()


def spatial_longtail_hist(d_gt: DepthVideo, d_lr: DepthVideo, s: int, bins: int = 100,
                          scale: float | None = None, value_range=(0.0, 1.0)):
    """Histogram of ``|GT - bicubic(LR)| / scale`` over valid GT pixels.

    Returns ``(Histogram, difference map (T, H, W))``; invalid pixels are NaN
    in the map.
    """
    if d_gt.size != (d_lr.size[0] * s, d_lr.size[1] * s) or d_gt.frames != d_lr.frames:
        raise ValueError(f"GT {d_gt.depth.shape} is not {s}x LR {d_lr.depth.shape}")
    diff = np.abs(d_gt.depth - upsample_depth(d_lr, s)) / _norm(d_gt, scale)
    diff = np.where(d_gt.mask, diff, np.nan)
    return _histogram(diff[d_gt.mask], bins, value_range), diff


def temporal_differences(d: DepthVideo, stride: int, scale: float | None = None):
    """``|D^t - D^{t+stride}| / scale`` and the pair-valid mask."""
    if d.frames <= stride or stride < 1:
        raise ValueError(f"stride {stride} needs more than {stride} frames, got {d.frames}")
    diff = np.abs(d.depth[:-stride].astype(np.float64) - d.depth[stride:]) / _norm(d, scale)
    return diff, d.mask[:-stride] & d.mask[stride:]


def temporal_longtail_hist(d: DepthVideo, stride: int = 1, bins: int = 100,
                           scale: float | None = None, value_range=(0.0, 1.0)) -> Histogram:
    diff, valid = temporal_differences(d, stride, scale)
    return _histogram(diff[valid], bins, value_range)


def longtail_mass(hist: Histogram, threshold: float) -> float:
    """Fraction of the population in bins starting at or above ``threshold``."""
    if hist.total == 0:
        return 0.0
    tail = hist.edges[:-1] >= threshold - 1e-9 * max(1.0, abs(threshold))
    return float(hist.counts[tail].sum() / hist.total)


def depth_edges(d: DepthVideo, jump: float) -> np.ndarray:
    """Pixels on either side of a 4-neighbour depth jump larger than ``jump`` cm."""
    depth = d.depth.astype(np.float64)
    edges = np.zeros(depth.shape, bool)
    for axis in (1, 2):
        step = np.abs(np.diff(depth, axis=axis)) > jump
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis], hi[axis] = slice(None, -1), slice(1, None)
        edges[tuple(lo)] |= step
        edges[tuple(hi)] |= step
    return edges


def edge_band(d: DepthVideo, radius: int, jump: float) -> np.ndarray:
    """Pixels within Chebyshev distance ``radius`` of a depth edge, per frame."""
    edges = depth_edges(d, jump)
    if radius <= 0:
        return edges
    square = np.ones((1, 2 * radius + 1, 2 * radius + 1), bool)
    return ndimage.binary_dilation(edges, structure=square)


def tail_locality(diff: np.ndarray, band: np.ndarray, mask: np.ndarray, threshold: float) -> dict:
    """How much of the population is in the tail, and how much of the tail sits in ``band``."""
    tail = mask & (diff >= threshold)
    n_tail = int(tail.sum())
    return {
        "tail_fraction": n_tail / max(int(mask.sum()), 1),
        "tail_in_band": float((tail & band).sum() / n_tail) if n_tail else 1.0,
    }


def xt_slice(d: DepthVideo, row: int) -> np.ndarray:
    """Row ``row`` of every frame stacked into a ``(T, W)`` image."""
    if not 0 <= row < d.size[0]:
        raise ValueError(f"row {row} outside [0, {d.size[0]})")
    return d.depth[:, row, :].copy()


def save_gray_png(image: np.ndarray, path, lo=None, hi=None):
    """Min-max scaled 8-bit grayscale PNG; NaNs are written black."""
    img = np.asarray(image, dtype=np.float64)
    finite = np.isfinite(img)
    lo = np.nanmin(img) if lo is None else lo
    hi = np.nanmax(img) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    out = np.where(finite, (img - lo) / span, 0.0)
    Image.fromarray(np.rint(np.clip(out, 0, 1) * 255).astype(np.uint8)).save(path)


def analyze_clip(lr: DepthVideo, gt: DepthVideo | None, s: int, out_dir, threshold=0.1,
                 bins=100, scale=None, row=None) -> dict:
    """Write histograms (CSV), the first difference map and an x-t slice (PNG).

    Without GT only the temporal statistics of the bicubic-upsampled LR clip
    are produced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    up = DepthVideo(upsample_depth(lr, s))
    summary = {"threshold": threshold, "bins": bins}
    if gt is not None:
        hist, diff = spatial_longtail_hist(gt, lr, s, bins, scale)
        hist.to_csv(out / "spatial_hist.csv")
        save_gray_png(diff[0], out / "spatial_diff_000000.png", 0.0)
        summary["spatial_tail_mass"] = longtail_mass(hist, threshold)
        band = edge_band(gt, 2 * s, jump=threshold * _norm(gt, scale))
        summary["spatial_tail_in_edge_band"] = tail_locality(diff, band, gt.mask, threshold)["tail_in_band"]
    video = gt if gt is not None else up
    for stride in (1, 2):
        if video.frames > stride:
            hist = temporal_longtail_hist(video, stride, bins, scale)
            hist.to_csv(out / f"temporal_hist_stride{stride}.csv")
            summary[f"temporal_tail_mass_stride{stride}"] = longtail_mass(hist, threshold)
    row = video.size[0] // 2 if row is None else row
    save_gray_png(xt_slice(video, row), out / "xt_slice.png")
    summary["xt_row"] = row
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
