"""Depth/RGB clips: containers, LR synthesis, cropping, synthetic scenes and disk I/O.

Arrays are numpy and frame-major: depth ``(T, H, W)`` float32 centimeters with
a boolean mask of the same shape, RGB ``(T, H, W, 3)`` float32 in ``[0, 1]``.

Clip directory layout::

    manifest.json      {"id", "frames", "scale", "depth_unit_cm", "rgb", "lr", "gt"}
    rgb/000000.png     8-bit RGB
    lr/000000.png      16-bit depth, stored = round(cm / depth_unit_cm), 0 = invalid
    gt/000000.png      16-bit depth (optional; "gt" may be an empty list)

Prediction directories written by inference add a ``"pred"`` list and a
``pred/`` folder in the same 16-bit format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import SCALES
from .numerics import bicubic_resize

DEFAULT_DEPTH_UNIT_CM = 0.1
MAX_STORED = 65535


class ClipFormatError(OSError):
    """A clip directory is missing files or disagrees with its manifest."""


@dataclass
class DepthVideo:
    depth: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.depth.ndim != 3:
            raise ValueError(f"depth must be (T, H, W), got {self.depth.shape}")
        if self.mask is None:
            self.mask = np.isfinite(self.depth)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.depth.shape:
            raise ValueError(f"mask {self.mask.shape} does not match depth {self.depth.shape}")

    @property
    def frames(self) -> int:
        return self.depth.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape[1:]


@dataclass
class RGBVideo:
    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        if self.rgb.ndim != 4 or self.rgb.shape[-1] != 3:
            raise ValueError(f"RGB must be (T, H, W, 3), got {self.rgb.shape}")

    @property
    def frames(self) -> int:
        return self.rgb.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.shape[1:3]


def to_batch(rgb: RGBVideo, lr: DepthVideo, gt: DepthVideo | None = None, dtype=torch.float32):
    """Model-ready ``(1, T, C, H, W)`` tensors: ``(rgb, d_lr, d_gt, mask)``."""
    t_rgb = torch.as_tensor(rgb.rgb, dtype=dtype).permute(0, 3, 1, 2).unsqueeze(0)
    t_lr = torch.as_tensor(lr.depth, dtype=dtype)[None, :, None]
    if gt is None:
        return t_rgb, t_lr, None, None
    return (t_rgb, t_lr, torch.as_tensor(gt.depth, dtype=dtype)[None, :, None],
            torch.as_tensor(gt.mask)[None, :, None])


def synthesize_lr(gt: DepthVideo, s: int) -> DepthVideo:
    """Bicubic ``1/s`` downsampling per frame.

    An LR pixel is valid only if every GT pixel of its ``s x s`` block is valid;
    invalid LR pixels read 0.
    """
    t, h, w = gt.depth.shape
    if s < 1 or h % s or w % s:
        raise ValueError(f"GT size {(h, w)} not divisible by scale {s}")
    src = np.where(gt.mask, gt.depth, 0.0)
    lr = bicubic_resize(torch.from_numpy(src.astype(np.float64)), size=(h // s, w // s)).numpy()
    lr = np.clip(lr, 0.0, None)
    mask = gt.mask.reshape(t, h // s, s, w // s, s).all(axis=(2, 4))
    return DepthVideo(np.where(mask, lr, 0.0), mask)


def random_crop_pair(rgb: RGBVideo, gt: DepthVideo, lr: DepthVideo, hr_crop: int, rng: np.random.Generator):
    """Crop the same window from every frame; the HR corner sits on the LR grid."""
    h, w = gt.size
    lh, lw = lr.size
    s = h // lh
    if s * lh != h or s * lw != w or rgb.size != (h, w):
        raise ValueError(f"inconsistent clip sizes: rgb {rgb.size}, gt {gt.size}, lr {lr.size}")
    if hr_crop % s:
        raise ValueError(f"crop {hr_crop} not divisible by scale {s}")
    if hr_crop > h or hr_crop > w:
        raise ValueError(f"crop {hr_crop} larger than frame {(h, w)}")
    c = hr_crop // s
    y = int(rng.integers(0, lh - c + 1))
    x = int(rng.integers(0, lw - c + 1))
    hr = (slice(None), slice(y * s, y * s + hr_crop), slice(x * s, x * s + hr_crop))
    lo = (slice(None), slice(y, y + c), slice(x, x + c))
    return (RGBVideo(rgb.rgb[hr]), DepthVideo(gt.depth[hr], gt.mask[hr]),
            DepthVideo(lr.depth[lo], lr.mask[lo]))


def augment_clip(rgb: RGBVideo, gt: DepthVideo, lr: DepthVideo, rng: np.random.Generator,
                 depth_gain=(0.6, 1.4), depth_shift_cm=(-100.0, 100.0)):
    """Label-preserving augmentation of an aligned triple.

    Applies one random dihedral transform and optional time reversal to all
    three videos, permutes/inverts/scales the RGB channels, and maps depth
    through ``d -> gain * d + shift`` (valid because LR synthesis is linear).
    Depths stay non-negative.
    """
    def geo(a, k, flip, rev):
        a = np.rot90(a, k, axes=(1, 2))
        if flip:
            a = a[:, :, ::-1]
        if rev:
            a = a[::-1]
        return np.ascontiguousarray(a)

    k, flip, rev = int(rng.integers(4)), bool(rng.integers(2)), bool(rng.integers(2))
    if gt.size[0] != gt.size[1] and k % 2:
        k = 0
    color = rgb.rgb[..., rng.permutation(3)]
    if rng.random() < 0.5:
        color = 1.0 - color
    color = np.clip(color * rng.uniform(0.7, 1.3, size=3), 0, 1)
    lo = min(float(gt.depth[gt.mask].min(initial=np.inf)), float(lr.depth[lr.mask].min(initial=np.inf)))
    gain = float(rng.uniform(*depth_gain))
    shift = float(rng.uniform(*depth_shift_cm))
    if np.isfinite(lo):
        shift = max(shift, -gain * lo)

    def dmap(v):
        moved = np.where(v.mask, gain * v.depth + shift, 0.0)
        return DepthVideo(geo(moved, k, flip, rev), geo(v.mask, k, flip, rev))

    return RGBVideo(geo(color, k, flip, rev)), dmap(gt), dmap(lr)


def cutmix_clip(rgb: RGBVideo, gt: DepthVideo, lr: DepthVideo, rng: np.random.Generator,
                n_patches=(1, 3), size=(0.25, 0.5)):
    """Paste augmented rectangles of the clip into itself and re-synthesize the LR input.

    Each patch comes from an independently :func:`augment_clip`-ed copy, so
    its border is a new depth edge with a matching RGB edge. The rectangle is
    fixed over time and its content moves with the source. LR is rebuilt
    with :func:`synthesize_lr`, so the triple stays consistent.
    """
    t, h, w = gt.depth.shape
    s = h // lr.size[0]
    color, depth, mask = rgb.rgb.copy(), gt.depth.copy(), gt.mask.copy()
    for _ in range(int(rng.integers(n_patches[0], n_patches[1] + 1))):
        src_rgb, src_gt, _ = augment_clip(rgb, gt, lr, rng)
        ph, pw = (int(rng.integers(max(1, round(size[0] * n)), max(2, round(size[1] * n)) + 1)) for n in (h, w))
        sy, sx = int(rng.integers(h - ph + 1)), int(rng.integers(w - pw + 1))
        dy, dx = int(rng.integers(h - ph + 1)), int(rng.integers(w - pw + 1))
        color[:, dy:dy + ph, dx:dx + pw] = src_rgb.rgb[:, sy:sy + ph, sx:sx + pw]
        depth[:, dy:dy + ph, dx:dx + pw] = src_gt.depth[:, sy:sy + ph, sx:sx + pw]
        mask[:, dy:dy + ph, dx:dx + pw] = src_gt.mask[:, sy:sy + ph, sx:sx + pw]
    mixed = DepthVideo(depth, mask)
    return RGBVideo(color), mixed, synthesize_lr(mixed, s)


# --- synthetic scenes -------------------------------------------------------

@dataclass
class SceneObject:
    shape: str = "disk"                 # "disk" or "rect"
    center: tuple[float, float] = (32.0, 32.0)
    size: tuple[float, float] = (10.0, 10.0)   # disk: (radius, radius); rect: (height, width)
    depth: float = 150.0
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels per frame (dy, dx)
    color: tuple[float, float, float] = (0.8, 0.3, 0.2)
    texture_period: float = 7.0

    def __post_init__(self):
        if self.shape not in ("disk", "rect"):
            raise ValueError(f"unknown object shape {self.shape!r}")

    def coverage(self, t: int, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        """Pixels whose centers lie inside the object at frame ``t``."""
        cy = self.center[0] + self.velocity[0] * t
        cx = self.center[1] + self.velocity[1] * t
        if self.shape == "disk":
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= self.size[0] ** 2
        return (np.abs(yy - cy) <= self.size[0] / 2) & (np.abs(xx - cx) <= self.size[1] / 2)

    def origin(self, t: int):
        return self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t


@dataclass
class SceneSpec:
    """Background plane (optionally split into two planes) plus moving objects.

    Background depth is ``depth + gy*y + gx*x + ripple`` where ``ripple`` is a
    smooth sinusoid; columns ``x >= step_column`` add ``step_depth``.
    """

    frames: int = 8
    height: int = 64
    width: int = 64
    depth: float = 400.0
    gradient: tuple[float, float] = (0.0, 0.0)
    ripple_amplitude: float = 0.0
    ripple_period: float = 32.0
    step_column: float | None = None
    step_depth: float = 0.0
    background_color: tuple[float, float, float] = (0.35, 0.45, 0.55)
    texture_amplitude: float = 0.15
    objects: list[SceneObject] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "SceneSpec":
        raw = dict(raw)
        objs = [SceneObject(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                for o in raw.pop("objects", [])]
        raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(objects=objs, **raw)


def _texture(yy, xx, period, phase):
    return np.sin(2 * np.pi * yy / period + phase) * np.cos(2 * np.pi * xx / (1.3 * period) + phase)


def make_synthetic_clip(spec: SceneSpec, rng: np.random.Generator | None = None):
    """Render ``(RGBVideo, DepthVideo)`` at full resolution.

    Objects are painted far to near, so nearer ones occlude. Each surface gets
    its own color and a texture that moves with it, which places RGB edges on
    depth edges. ``rng`` only draws texture phases.
    """
    if spec.frames < 3:
        raise ValueError(f"synthetic clips need at least 3 frames, got {spec.frames}")
    rng = np.random.default_rng(0) if rng is None else rng
    h, w, amp = spec.height, spec.width, spec.texture_amplitude
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = spec.depth + spec.gradient[0] * yy + spec.gradient[1] * xx
    if spec.ripple_amplitude:
        bg = bg + spec.ripple_amplitude * np.sin(2 * np.pi * xx / spec.ripple_period) \
            * np.cos(2 * np.pi * yy / spec.ripple_period)
    bg_color = np.asarray(spec.background_color)
    bg_phase = rng.uniform(0, 2 * np.pi)
    bg_tex = 1 + amp * _texture(yy, xx, 9.0, bg_phase)
    bg_rgb = bg_color * bg_tex[..., None]
    if spec.step_column is not None:
        right = xx >= spec.step_column
        bg = np.where(right, bg + spec.step_depth, bg)
        bg_rgb = np.where(right[..., None], bg_rgb[..., ::-1], bg_rgb)
    phases = rng.uniform(0, 2 * np.pi, size=len(spec.objects))
    order = sorted(range(len(spec.objects)), key=lambda i: -spec.objects[i].depth)

    depth = np.empty((spec.frames, h, w))
    rgb = np.empty((spec.frames, h, w, 3))
    for t in range(spec.frames):
        d, c = bg.copy(), bg_rgb.copy()
        for i in order:
            obj = spec.objects[i]
            inside = obj.coverage(t, yy, xx)
            oy, ox = obj.origin(t)
            tex = 1 + amp * _texture(yy - oy, xx - ox, obj.texture_period, phases[i])
            d[inside] = obj.depth
            c[inside] = (np.asarray(obj.color) * tex[..., None])[inside]
        depth[t], rgb[t] = d, c
    return RGBVideo(np.clip(rgb, 0, 1)), DepthVideo(np.clip(depth, 0, None))


def _distinct_color(rng, lo, hi, others, min_contrast, tries=1000):
    """Uniform color whose largest channel difference to each of ``others`` is >= ``min_contrast``."""
    for _ in range(tries):
        color = rng.uniform(lo, hi, size=3)
        if all(np.abs(color - np.asarray(o)).max() >= min_contrast for o in others):
            return color
    raise ValueError(f"no color in [{lo}, {hi}] keeps contrast {min_contrast} to {len(others)} others")


def random_scene(rng: np.random.Generator, frames=8, height=64, width=64, n_objects=(1, 3),
                 max_speed=2.0, min_contrast=0.3) -> SceneSpec:
    """A random scene: tilted two-plane background plus moving disks and rectangles.

    Colors are drawn so every surface differs from every other (and the two
    background halves from each other) by at least ``min_contrast`` in some
    channel; a depth edge is then always visible in the RGB guide.
    """
    if not 0 <= min_contrast <= 0.5:
        raise ValueError(f"min_contrast must lie in [0, 0.5], got {min_contrast}")
    k = int(rng.integers(n_objects[0], n_objects[1] + 1))
    base = float(rng.uniform(300, 500))
    bg_color = rng.uniform(0.2, 0.8, size=3)
    while abs(bg_color[0] - bg_color[2]) < min_contrast:
        bg_color = rng.uniform(0.2, 0.8, size=3)
    palette = [bg_color, bg_color[::-1]]
    spec = SceneSpec(
        frames=frames, height=height, width=width, depth=base,
        gradient=tuple(rng.uniform(-0.5, 0.5, size=2)),
        step_column=float(rng.uniform(0.3, 0.7) * width) if rng.random() < 0.5 else None,
        step_depth=float(rng.uniform(-80, 80)),
        background_color=tuple(float(v) for v in bg_color),
    )
    lo = min(height, width)
    for _ in range(k):
        shape = "disk" if rng.random() < 0.5 else "rect"
        if shape == "disk":
            r = float(rng.uniform(0.1, 0.22) * lo)
            size = (r, r)
        else:
            size = tuple(float(v) for v in rng.uniform(0.2, 0.45, size=2) * lo)
        color = _distinct_color(rng, 0.05, 0.95, palette, min_contrast)
        palette.append(color)
        spec.objects.append(SceneObject(
            shape=shape,
            center=(float(rng.uniform(0.2, 0.8) * height), float(rng.uniform(0.2, 0.8) * width)),
            size=size,
            depth=float(rng.uniform(80, base - 60)),
            velocity=tuple(float(v) for v in rng.uniform(-max_speed, max_speed, size=2)),
            color=tuple(float(v) for v in color),
            texture_period=float(rng.uniform(4, 10)),
        ))
    return spec


# --- disk I/O ---------------------------------------------------------------

def _frame_names(t):
    return [f"{i:06d}.png" for i in range(t)]


def _encode_depth(video: DepthVideo, unit: float) -> np.ndarray:
    stored = np.clip(np.rint(video.depth / unit), 1, MAX_STORED)
    return np.where(video.mask, stored, 0).astype(np.uint16)


def write_depth_frames(folder: Path, video: DepthVideo, unit: float) -> list[str]:
    folder.mkdir(parents=True, exist_ok=True)
    names = _frame_names(video.frames)
    for name, frame in zip(names, _encode_depth(video, unit)):
        Image.fromarray(frame).save(folder / name)
    return names


def save_clip(path, rgb: RGBVideo, lr: DepthVideo, gt: DepthVideo | None = None, *,
              clip_id: str | None = None, depth_unit_cm: float = DEFAULT_DEPTH_UNIT_CM) -> dict:
    """Write a clip directory and return its manifest."""
    path = Path(path)
    s = rgb.size[0] // lr.size[0]
    if s not in SCALES or rgb.size != (lr.size[0] * s, lr.size[1] * s):
        raise ValueError(f"RGB size {rgb.size} is not a supported multiple of LR size {lr.size}")
    if rgb.frames != lr.frames or (gt is not None and (gt.frames != rgb.frames or gt.size != rgb.size)):
        raise ValueError("RGB, LR and GT must share frame count, and GT must match RGB size")
    (path / "rgb").mkdir(parents=True, exist_ok=True)
    rgb_names = _frame_names(rgb.frames)
    for name, frame in zip(rgb_names, rgb.rgb):
        Image.fromarray(np.rint(np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(path / "rgb" / name)
    manifest = {
        "id": clip_id or path.name,
        "frames": rgb.frames,
        "scale": s,
        "depth_unit_cm": depth_unit_cm,
        "rgb": rgb_names,
        "lr": write_depth_frames(path / "lr", lr, depth_unit_cm),
        "gt": write_depth_frames(path / "gt", gt, depth_unit_cm) if gt is not None else [],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.is_file():
        raise ClipFormatError(f"missing manifest: {mf}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"unreadable manifest {mf}: {exc}") from exc
    missing = {"id", "frames", "scale", "depth_unit_cm", "rgb", "lr", "gt"} - set(manifest)
    if missing:
        raise ClipFormatError(f"manifest {mf} lacks keys {sorted(missing)}")
    if manifest["scale"] not in SCALES:
        raise ClipFormatError(f"manifest {mf}: scale {manifest['scale']} not in {SCALES}")
    n = manifest["frames"]
    for key in ("rgb", "lr", "gt"):
        names = manifest[key]
        if key == "gt" and not names:
            continue
        if len(names) != n:
            raise ClipFormatError(f"manifest {mf}: {len(names)} {key} frames, expected {n}")
        for name in names:
            if not (path / key / name).is_file():
                raise ClipFormatError(f"missing frame file: {path / key / name}")
    return manifest


def read_depth_frames(folder: Path, names, unit: float) -> DepthVideo:
    stored = np.stack([np.asarray(Image.open(folder / n), dtype=np.float64) for n in names])
    return DepthVideo((stored * unit).astype(np.float32), stored > 0)


def load_clip(path):
    """Read ``(RGBVideo, lr DepthVideo, gt DepthVideo or None)`` from a clip directory."""
    path = Path(path)
    manifest = read_manifest(path)
    unit = float(manifest["depth_unit_cm"])
    rgb = RGBVideo(np.stack([np.asarray(Image.open(path / "rgb" / n).convert("RGB"), dtype=np.float32) / 255
                             for n in manifest["rgb"]]))
    lr = read_depth_frames(path / "lr", manifest["lr"], unit)
    gt = read_depth_frames(path / "gt", manifest["gt"], unit) if manifest["gt"] else None
    s = manifest["scale"]
    if rgb.size != (lr.size[0] * s, lr.size[1] * s):
        raise ClipFormatError(f"{path}: RGB size {rgb.size} is not {s}x LR size {lr.size}")
    if gt is not None and gt.size != rgb.size:
        raise ClipFormatError(f"{path}: GT size {gt.size} does not match RGB size {rgb.size}")
    return rgb, lr, gt


def find_clips(root) -> list[Path]:
    """``root`` itself if it is a clip, otherwise its clip subdirectories (sorted)."""
    root = Path(root)
    if (root / "manifest.json").is_file():
        return [root]
    clips = sorted(p.parent for p in root.glob("*/manifest.json"))
    if not clips:
        raise ClipFormatError(f"no clips found under {root}")
    return clips
