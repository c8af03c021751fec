"""RMSE, MAE and TEPE in centimeters, plus per-clip tables.

TEPE (temporal end-point error) is the mean absolute error of the
frame-to-frame depth change::

    mean_{t, p valid at t and t+1} |(HR[t+1] - HR[t]) - (GT[t+1] - GT[t])|

Cross-paper TEPE numbers depend on this definition.
"""

from __future__ import annotations

import csv
import io

import numpy as np


def _prep(d_hr, d_gt, mask):
    d_hr = np.asarray(d_hr, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    mask = np.ones(d_gt.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if not d_hr.shape == d_gt.shape == mask.shape:
        raise ValueError(f"shape mismatch: {d_hr.shape}, {d_gt.shape}, {mask.shape}")
    return d_hr, d_gt, mask


def rmse(d_hr, d_gt, mask=None) -> float:
    d_hr, d_gt, mask = _prep(d_hr, d_gt, mask)
    if not mask.any():
        raise ValueError("RMSE needs at least one valid pixel")
    return float(np.sqrt(np.mean((d_hr - d_gt)[mask] ** 2)))


def mae(d_hr, d_gt, mask=None) -> float:
    d_hr, d_gt, mask = _prep(d_hr, d_gt, mask)
    if not mask.any():
        raise ValueError("MAE needs at least one valid pixel")
    return float(np.mean(np.abs(d_hr - d_gt)[mask]))


def tepe(d_hr, d_gt, mask=None) -> float:
    """Time is the leading axis: arrays are ``(T, ...)``."""
    d_hr, d_gt, mask = _prep(d_hr, d_gt, mask)
    if d_gt.shape[0] < 2:
        raise ValueError(f"TEPE needs T >= 2, got {d_gt.shape[0]}")
    joint = mask[1:] & mask[:-1]
    if not joint.any():
        raise ValueError("TEPE needs a pixel valid in two consecutive frames")
    err = np.abs(np.diff(d_hr, axis=0) - np.diff(d_gt, axis=0))
    return float(np.mean(err[joint]))


METRICS = {"rmse": rmse, "mae": mae, "tepe": tepe}


def clip_metrics(d_hr, d_gt, mask=None) -> dict:
    return {name: fn(d_hr, d_gt, mask) for name, fn in METRICS.items()}


def pooled_metrics(clips) -> dict:
    """Pixel-pooled metrics over ``(d_hr, d_gt, mask)`` triples."""
    sq = ab = te = 0.0
    n = nt = 0
    for d_hr, d_gt, mask in clips:
        d_hr, d_gt, mask = _prep(d_hr, d_gt, mask)
        err = (d_hr - d_gt)[mask]
        sq += float(np.sum(err ** 2))
        ab += float(np.sum(np.abs(err)))
        n += err.size
        joint = mask[1:] & mask[:-1]
        te += float(np.sum(np.abs(np.diff(d_hr, axis=0) - np.diff(d_gt, axis=0))[joint]))
        nt += int(joint.sum())
    if n == 0 or nt == 0:
        raise ValueError("no valid pixels to pool")
    return {"rmse": float(np.sqrt(sq / n)), "mae": ab / n, "tepe": te / nt}


class MetricsTable:
    """Rows of ``(method, clip, rmse, mae, tepe)`` with per-method summaries."""

    FIELDS = ("method", "clip", "rmse", "mae", "tepe")

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, method: str, clip: str, values: dict):
        self.rows.append({"method": method, "clip": clip, **{k: float(values[k]) for k in METRICS}})

    def methods(self):
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def average(self, method: str) -> dict:
        """Per-clip metrics averaged over clips."""
        rows = [r for r in self.rows if r["method"] == method]
        return {k: float(np.mean([r[k] for r in rows])) for k in METRICS}

    def to_csv(self, path=None, include_mean=True) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        if include_mean:
            for method in self.methods():
                avg = self.average(method)
                writer.writerow({"method": method, "clip": "mean", **{k: f"{v:.6f}" for k, v in avg.items()}})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        lines = [f"{'method':<10} {'RMSE':>10} {'MAE':>10} {'TEPE':>10}  (cm, mean over clips)"]
        for method in self.methods():
            avg = self.average(method)
            lines.append(f"{method:<10} {avg['rmse']:>10.3f} {avg['mae']:>10.3f} {avg['tepe']:>10.3f}")
        return "\n".join(lines)
