import json

import numpy as np
import pytest
import torch

from stdnet.data import (ClipFormatError, DepthVideo, RGBVideo, SceneObject, SceneSpec, augment_clip,
                         cutmix_clip, load_clip, make_synthetic_clip, random_crop_pair, random_scene, read_manifest,
                         save_clip, synthesize_lr, to_batch)
from stdnet.numerics import bicubic_resize, cubic_kernel


def plane(value, t=3, h=16, w=16):
    return DepthVideo(np.full((t, h, w), value))


def test_constant_plane_lr_is_constant():
    lr = synthesize_lr(plane(100.0), 4)
    assert lr.depth.shape == (3, 4, 4)
    np.testing.assert_allclose(lr.depth, 100.0, atol=1e-4)
    assert lr.mask.all()


def test_step_edge_lr():
    a, b = 200.0, 300.0
    gt = np.full((1, 16, 32), a)
    gt[..., 30:] = b
    lr = synthesize_lr(DepthVideo(gt), 4).depth[0]
    # LR column j samples source x = 4j + 1.5 with taps 4j-1 .. 4j+4 (Keys weights at distances
    # 2.5, 1.5, 0.5, 0.5, 1.5, 2.5 -> only the middle four are nonzero)
    taps = cubic_kernel(np.array([1.5, 0.5, 0.5, 1.5]))
    edge_col = 7
    row = np.array([a, a, b, b])
    assert lr[0, edge_col] == pytest.approx(float(taps @ row), abs=1e-4)
    assert a < lr[0, edge_col] < b
    for j in range(8):
        if j != edge_col:
            assert lr[0, j] == pytest.approx(a if j < edge_col else b, abs=1e-6 * b)


def test_synthesize_rejects_indivisible():
    with pytest.raises(ValueError):
        synthesize_lr(plane(1.0, h=255, w=255), 4)


def test_lr_mask_is_block_and():
    gt = plane(50.0, t=1, h=8, w=8)
    gt.mask[0, 5, 6] = False
    lr = synthesize_lr(gt, 4)
    assert lr.mask.tolist() == [[[True, True], [True, False]]]
    assert lr.depth[0, 1, 1] == 0


def test_smooth_scene_round_trip_within_one_percent():
    yy, xx = np.mgrid[0:64, 0:64]
    gt = 300 + 40 * np.sin(2 * np.pi * xx / 48) * np.cos(2 * np.pi * yy / 64) + 0.5 * yy
    lr = synthesize_lr(DepthVideo(gt[None]), 4)
    back = bicubic_resize(torch.from_numpy(lr.depth.astype(np.float64)), 4).numpy()[0]
    inner = (slice(8, -8), slice(8, -8))
    assert np.max(np.abs(back - gt)[inner] / gt[inner]) < 0.01


# --- cropping ---------------------------------------------------------------

def clip_triple(t=3, h=32, w=48, s=4, seed=0):
    r = np.random.default_rng(seed)
    gt = DepthVideo(r.uniform(100, 200, size=(t, h, w)))
    return RGBVideo(r.uniform(size=(t, h, w, 3))), gt, synthesize_lr(gt, s)


def test_full_frame_crop_is_identity():
    rgb, gt, lr = clip_triple(h=32, w=32)
    c_rgb, c_gt, c_lr = random_crop_pair(rgb, gt, lr, 32, np.random.default_rng(0))
    assert np.array_equal(c_rgb.rgb, rgb.rgb)
    assert np.array_equal(c_gt.depth, gt.depth) and np.array_equal(c_lr.depth, lr.depth)


def test_crop_is_seed_deterministic():
    rgb, gt, lr = clip_triple()
    a = random_crop_pair(rgb, gt, lr, 16, np.random.default_rng(7))
    b = random_crop_pair(rgb, gt, lr, 16, np.random.default_rng(7))
    assert all(np.array_equal(getattr(x, f), getattr(y, f))
               for x, y, f in zip(a, b, ("rgb", "depth", "depth")))


@pytest.mark.parametrize("crop", [255, 30, 64])
def test_crop_rejects_bad_sizes(crop):
    rgb, gt, lr = clip_triple()
    with pytest.raises(ValueError):
        random_crop_pair(rgb, gt, lr, crop, np.random.default_rng(0))


def test_crop_windows_align_on_coordinate_ramp():
    h, w, s = 64, 64, 4
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    gt = DepthVideo(np.stack([1000 + 3 * yy + 7 * xx] * 3))
    lr = synthesize_lr(gt, s)
    rgb = RGBVideo(np.zeros((3, h, w, 3)))
    rng = np.random.default_rng(3)
    for _ in range(5):
        _, c_gt, c_lr = random_crop_pair(rgb, gt, lr, 32, rng)
        up = bicubic_resize(torch.from_numpy(c_lr.depth.astype(np.float64)), s).numpy()
        inner = (slice(None), slice(6, -6), slice(6, -6))
        np.testing.assert_allclose(up[inner], c_gt.depth[inner], atol=1e-2)


def test_augment_keeps_lr_consistent_with_gt():
    rgb, gt, lr = clip_triple(h=32, w=32)
    for seed in range(6):
        a_rgb, a_gt, a_lr = augment_clip(rgb, gt, lr, np.random.default_rng(seed))
        np.testing.assert_allclose(synthesize_lr(a_gt, 4).depth, a_lr.depth, atol=1e-3)
        assert a_rgb.rgb.min() >= 0 and a_rgb.rgb.max() <= 1
        assert (a_gt.depth >= 0).all()


def test_cutmix_rebuilds_lr_and_keeps_shapes():
    rgb, gt, lr = clip_triple(h=32, w=32)
    for seed in range(6):
        m_rgb, m_gt, m_lr = cutmix_clip(rgb, gt, lr, np.random.default_rng(seed))
        assert m_rgb.rgb.shape == rgb.rgb.shape and m_gt.depth.shape == gt.depth.shape
        np.testing.assert_array_equal(synthesize_lr(m_gt, 4).depth, m_lr.depth)
        assert (m_gt.depth >= 0).all() and m_rgb.rgb.min() >= 0 and m_rgb.rgb.max() <= 1
    assert not np.array_equal(m_gt.depth, gt.depth)


def test_cutmix_patch_is_static_rectangle():
    # a constant clip: every pasted patch is a constant plane over a fixed rectangle
    gt = DepthVideo(np.full((3, 32, 32), 250.0))
    rgb = RGBVideo(np.full((3, 32, 32, 3), 0.5))
    _, m_gt, _ = cutmix_clip(rgb, gt, synthesize_lr(gt, 4), np.random.default_rng(3), n_patches=(1, 1))
    changed = m_gt.depth != 250.0
    assert (changed == changed[0]).all()
    rows, cols = np.nonzero(changed[0])
    assert changed[0, rows.min():rows.max() + 1, cols.min():cols.max() + 1].all()


# --- synthetic scenes -------------------------------------------------------

def test_static_scene_frames_identical():
    spec = SceneSpec(frames=4, height=32, width=32, objects=[SceneObject(center=(16, 16), velocity=(0, 0))])
    rgb, gt = make_synthetic_clip(spec)
    assert (np.diff(gt.depth, axis=0) == 0).all()
    assert (np.diff(rgb.rgb, axis=0) == 0).all()


def test_moving_disk_difference_matches_swept_region():
    spec = SceneSpec(frames=3, height=40, width=40, depth=400.0,
                     objects=[SceneObject(center=(20, 12), size=(6, 6), depth=150.0, velocity=(0, 2))])
    _, gt = make_synthetic_clip(spec)
    yy, xx = np.mgrid[0:40, 0:40]
    inside = [(yy - 20) ** 2 + (xx - 12 - 2 * t) ** 2 <= 36 for t in range(3)]
    for t in range(2):
        changed = gt.depth[t] != gt.depth[t + 1]
        assert np.array_equal(changed, inside[t] ^ inside[t + 1])


def test_rgb_edges_align_with_depth_edges():
    spec = SceneSpec(frames=3, height=32, width=32, texture_amplitude=0.0,
                     objects=[SceneObject(shape="rect", center=(16, 16), size=(10, 10), depth=100.0)])
    rgb, gt = make_synthetic_clip(spec)
    depth_edge = np.diff(gt.depth[0], axis=1) != 0
    rgb_edge = np.abs(np.diff(rgb.rgb[0], axis=1)).sum(-1) > 0
    assert np.array_equal(depth_edge, rgb_edge)


def test_short_clip_rejected():
    with pytest.raises(ValueError):
        make_synthetic_clip(SceneSpec(frames=2))


def test_random_scene_reproducible():
    a = make_synthetic_clip(random_scene(np.random.default_rng(5)), np.random.default_rng(1))
    b = make_synthetic_clip(random_scene(np.random.default_rng(5)), np.random.default_rng(1))
    assert np.array_equal(a[1].depth, b[1].depth) and np.array_equal(a[0].rgb, b[0].rgb)


@pytest.mark.parametrize("seed", range(20))
def test_random_scene_surfaces_are_distinguishable(seed):
    spec = random_scene(np.random.default_rng(seed), min_contrast=0.3)
    bg = np.asarray(spec.background_color)
    colors = [bg, bg[::-1]] + [np.asarray(o.color) for o in spec.objects]
    for i in range(len(colors)):
        for j in range(i + 1, len(colors)):
            assert np.abs(colors[i] - colors[j]).max() >= 0.3


def test_random_scene_contrast_range():
    with pytest.raises(ValueError):
        random_scene(np.random.default_rng(0), min_contrast=0.7)


def test_to_batch_shapes():
    rgb, gt, lr = clip_triple(t=3, h=16, w=16)
    t_rgb, t_lr, t_gt, mask = to_batch(rgb, lr, gt)
    assert t_rgb.shape == (1, 3, 3, 16, 16)
    assert t_lr.shape == (1, 3, 1, 4, 4)
    assert t_gt.shape == mask.shape == (1, 3, 1, 16, 16)


# --- disk round trip ----------------------------------------------------------

@pytest.fixture
def saved_clip(tmp_path):
    spec = SceneSpec(frames=3, height=32, width=32, objects=[SceneObject(center=(16, 16), velocity=(1, 1))])
    rgb, gt = make_synthetic_clip(spec)
    lr = synthesize_lr(gt, 4)
    save_clip(tmp_path / "clip", rgb, lr, gt, clip_id="demo")
    return tmp_path / "clip", rgb, lr, gt


def test_save_load_round_trip(saved_clip):
    path, rgb, lr, gt = saved_clip
    rgb2, lr2, gt2 = load_clip(path)
    assert np.abs(gt2.depth - gt.depth).max() <= 0.5 * 0.1 + 1e-4
    assert np.abs(lr2.depth - lr.depth).max() <= 0.5 * 0.1 + 1e-4
    assert np.abs(rgb2.rgb - rgb.rgb).max() <= 0.5 / 255 + 1e-6
    assert read_manifest(path)["id"] == "demo"


def test_invalid_pixels_round_trip(tmp_path):
    gt = plane(120.0, t=3, h=8, w=8)
    gt.mask[1, 2, 3] = False
    lr = synthesize_lr(gt, 4)
    save_clip(tmp_path / "c", RGBVideo(np.zeros((3, 8, 8, 3))), lr, gt)
    _, lr2, gt2 = load_clip(tmp_path / "c")
    assert np.array_equal(gt2.mask, gt.mask) and np.array_equal(lr2.mask, lr.mask)


def test_missing_frame_names_file(saved_clip):
    path = saved_clip[0]
    (path / "gt" / "000001.png").unlink()
    with pytest.raises(ClipFormatError, match="000001.png"):
        load_clip(path)


def test_mismatched_counts_rejected(saved_clip):
    path = saved_clip[0]
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["lr"] = manifest["lr"][:2]
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ClipFormatError, match="lr"):
        load_clip(path)


def test_bad_scale_rejected(saved_clip):
    path = saved_clip[0]
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["scale"] = 3
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ClipFormatError, match="scale"):
        read_manifest(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ClipFormatError, match="manifest"):
        load_clip(tmp_path)
