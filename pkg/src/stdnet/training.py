"""Training, evaluation and inference on clip collections.

A checkpoint is a ``torch.save`` dict with the model and loss-module state,
the Adam state, the full config, the step count and the data-sampling RNG
state, so a resumed run continues exactly where it left off.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analysis import save_gray_png, upsample_depth, xt_slice
from .config import Config
from .data import (DepthVideo, RGBVideo, augment_clip, cutmix_clip, find_clips, load_clip, make_synthetic_clip,
                   random_crop_pair, random_scene, read_manifest, synthesize_lr, to_batch,
                   write_depth_frames)
from .losses import STDNetLoss
from .metrics import MetricsTable, clip_metrics
from .model import STDNet

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "total", "rec", "sd", "td")


def deterministic_mode() -> bool:
    return os.environ.get("STDNET_DETERMINISTIC", "") not in ("", "0")


@dataclass
class Clip:
    name: str
    rgb: RGBVideo
    lr: DepthVideo
    gt: DepthVideo | None

    @property
    def scale(self) -> int:
        return self.rgb.size[0] // self.lr.size[0]


def synthetic_clips(n_clips=1, frames=8, height=64, width=64, scale=4, seed=0, **scene_kw) -> list[Clip]:
    """Random synthetic clips with bicubic LR, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        spec = random_scene(rng, frames, height, width, **scene_kw)
        rgb, gt = make_synthetic_clip(spec, rng)
        clips.append(Clip(f"synthetic_{seed}_{i:03d}", rgb, synthesize_lr(gt, scale), gt))
    return clips


def load_clips(paths) -> list[Clip]:
    clips = []
    for path in paths:
        for clip_dir in find_clips(path):
            rgb, lr, gt = load_clip(clip_dir)
            clips.append(Clip(read_manifest(clip_dir)["id"], rgb, lr, gt))
    return clips


def dataset_from_config(cfg: Config) -> list[Clip]:
    clips = load_clips(list(cfg.data.clips) + ([cfg.data.root] if cfg.data.root else []))
    if cfg.data.synthetic:
        syn = {"scale": cfg.model.scale, **cfg.data.synthetic}
        clips += synthetic_clips(**syn)
    return clips


def sample_batch(clips: list[Clip], cfg: Config, rng: np.random.Generator):
    """Random clip, temporal window and spatial crop for each batch element."""
    t = cfg.train.frames
    items = []
    for _ in range(cfg.train.batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        if clip.gt is None:
            raise ValueError(f"training clip {clip.name} has no ground truth")
        if clip.rgb.frames < t:
            raise ValueError(f"clip {clip.name} has {clip.rgb.frames} frames, training needs {t}")
        t0 = int(rng.integers(clip.rgb.frames - t + 1))
        win = slice(t0, t0 + t)
        rgb, gt, lr = random_crop_pair(RGBVideo(clip.rgb.rgb[win]),
                                       DepthVideo(clip.gt.depth[win], clip.gt.mask[win]),
                                       DepthVideo(clip.lr.depth[win], clip.lr.mask[win]),
                                       cfg.train.hr_crop, rng)
        if cfg.train.augment and rng.random() < cfg.train.augment:
            rgb, gt, lr = augment_clip(rgb, gt, lr, rng)
        if cfg.train.cutmix and rng.random() < cfg.train.cutmix:
            rgb, gt, lr = cutmix_clip(rgb, gt, lr, rng)
        items.append(to_batch(rgb, lr, gt))
    return tuple(torch.cat(parts, dim=0) for parts in zip(*items))


@dataclass
class TrainState:
    model: STDNet
    loss_fn: STDNetLoss
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(cfg: Config) -> TrainState:
    model = STDNet(cfg.model)
    loss_fn = STDNetLoss(cfg.loss, cfg.model.channels, cfg.model.scale, cfg.model.depth_scale_cm, cfg.model.seed)
    params = list(model.parameters()) + list(loss_fn.parameters())
    opt = torch.optim.Adam(params, lr=cfg.train.lr, betas=cfg.train.betas)
    return TrainState(model, loss_fn, opt, np.random.default_rng(cfg.train.seed))


def save_checkpoint(state: TrainState, cfg: Config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "step": state.step,
        "model": state.model.state_dict(),
        "loss_module": state.loss_fn.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "config": cfg.to_dict(),
        "rng": state.rng.bit_generator.state,
        "history": state.history,
    }, path)
    return path


def load_checkpoint(path, cfg: Config | None = None) -> tuple[TrainState, Config]:
    """Restore a full training state; ``cfg`` overrides the stored training section."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    stored = Config.from_dict(ckpt["config"])
    if cfg is None:
        cfg = stored
    elif cfg.model != stored.model:
        raise ValueError(f"checkpoint {path} was trained with a different model config")
    state = init_state(cfg)
    state.model.load_state_dict(ckpt["model"])
    state.loss_fn.load_state_dict(ckpt["loss_module"])
    state.optimizer.load_state_dict(ckpt["optimizer"])
    state.rng.bit_generator.state = ckpt["rng"]
    state.step = ckpt["step"]
    state.history = list(ckpt.get("history", []))
    return state, cfg


def load_model(path) -> STDNet:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    model = STDNet(Config.from_dict(ckpt["config"]).model)
    model.load_state_dict(ckpt["model"])
    return model.eval()


def train_step(state: TrainState, cfg: Config, clips: list[Clip]) -> dict:
    rgb, d_lr, d_gt, mask = sample_batch(clips, cfg, state.rng)
    state.model.train()
    out = state.model(d_lr, rgb)
    try:
        total, parts = state.loss_fn(out, d_gt, mask)
    except FloatingPointError as exc:
        raise FloatingPointError(f"step {state.step + 1}: {exc}") from exc
    for group in state.optimizer.param_groups:
        group["lr"] = cfg.train.lr_at(state.step)
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    if cfg.train.grad_clip:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.train.grad_clip)
    state.optimizer.step()
    state.step += 1
    row = {"step": state.step, "total": total.item()}
    row.update({k: v.item() for k, v in parts.items()})
    state.history.append(row)
    return row


def _write_log(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def train(cfg: Config, clips: list[Clip] | None = None, *, out_dir=None, state: TrainState | None = None,
          callback=None) -> TrainState:
    """Run Adam until ``cfg.train.steps`` total steps.

    Writes ``loss_log.csv``, ``last.pt`` and periodic ``ckpt_XXXXXX.pt`` to
    ``out_dir`` (defaults to ``cfg.train.out_dir``; ``False`` disables disk
    output). Resumes from ``cfg.train.resume`` when set.
    """
    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
    clips = dataset_from_config(cfg) if clips is None else clips
    if not clips:
        raise ValueError("training dataset is empty")
    for clip in clips:
        if clip.scale != cfg.model.scale:
            raise ValueError(f"clip {clip.name} has scale {clip.scale}, model expects {cfg.model.scale}")
    if state is None:
        state = load_checkpoint(cfg.train.resume, cfg)[0] if cfg.train.resume else init_state(cfg)
    out = Path(cfg.train.out_dir if out_dir is None else out_dir) if out_dir is not False else None
    while state.step < cfg.train.steps:
        row = train_step(state, cfg, clips)
        if callback is not None:
            callback(row)
        if cfg.train.log_every and state.step % cfg.train.log_every == 0:
            log.info("step %d total %.4f rec %.4f", row["step"], row["total"], row["rec"])
        if out is not None and cfg.train.checkpoint_every and state.step % cfg.train.checkpoint_every == 0:
            save_checkpoint(state, cfg, out / f"ckpt_{state.step:06d}.pt")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, cfg, out / "last.pt")
        _write_log(state.history, out / "loss_log.csv")
    return state


@torch.no_grad()
def predict(model: STDNet, rgb: RGBVideo, lr: DepthVideo) -> np.ndarray:
    """Full-frame HR prediction ``(T, s*h, s*w)`` in cm, clamped at 0."""
    model.eval()
    t_rgb, t_lr, _, _ = to_batch(rgb, lr)
    return model(t_lr, t_rgb).d_hr[0, :, 0].clamp(min=0).numpy()


def bicubic_baseline(lr: DepthVideo, s: int) -> np.ndarray:
    return np.clip(upsample_depth(lr, s), 0, None)


def evaluate(model: STDNet, clips: list[Clip]) -> MetricsTable:
    """Per-clip RMSE/MAE/TEPE for the model and the bicubic baseline."""
    table = MetricsTable()
    for clip in clips:
        if clip.gt is None:
            raise ValueError(f"clip {clip.name} has no ground truth to evaluate against")
        if clip.scale != model.scale:
            raise ValueError(f"clip {clip.name} has scale {clip.scale}, checkpoint expects {model.scale}")
        pred = predict(model, clip.rgb, clip.lr)
        table.add("stdnet", clip.name, clip_metrics(pred, clip.gt.depth, clip.gt.mask))
        table.add("bicubic", clip.name, clip_metrics(bicubic_baseline(clip.lr, clip.scale),
                                                     clip.gt.depth, clip.gt.mask))
    return table


def infer(model: STDNet, clip_dir, out_dir, xt_row: int | None = None) -> DepthVideo:
    """Predict a clip and write it as ``out_dir/pred/%06d.png`` with a manifest."""
    clip_dir, out_dir = Path(clip_dir), Path(out_dir)
    manifest = read_manifest(clip_dir)
    rgb, lr, _ = load_clip(clip_dir)
    if manifest["scale"] != model.scale:
        raise ValueError(f"clip {clip_dir} has scale {manifest['scale']}, checkpoint expects {model.scale}")
    pred = DepthVideo(predict(model, rgb, lr))
    out_dir.mkdir(parents=True, exist_ok=True)
    for key in ("rgb", "lr"):
        shutil.copytree(clip_dir / key, out_dir / key, dirs_exist_ok=True)
    unit = float(manifest["depth_unit_cm"])
    names = write_depth_frames(out_dir / "pred", pred, unit)
    out_manifest = {**manifest, "gt": [], "pred": names}
    (out_dir / "manifest.json").write_text(json.dumps(out_manifest, indent=2))
    if xt_row is not None:
        save_gray_png(xt_slice(pred, xt_row), out_dir / "xt_slice.png")
    return pred
