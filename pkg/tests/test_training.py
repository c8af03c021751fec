import math

import numpy as np
import pytest
import torch

from stdnet.config import Config, TrainConfig
from stdnet.data import DepthVideo
from stdnet.training import (Clip, bicubic_baseline, evaluate, init_state, load_checkpoint, load_model,
                             sample_batch, synthetic_clips, train, train_step)


def tiny(steps=4, **train_kw):
    raw = {"model": {"channels": 4, "depth_layers": 2, "rgb_layers": 2, "fuse_blocks": 0, "seed": 5},
           "train": {"hr_crop": 16, "frames": 3, "steps": steps, "lr": 1e-3, "checkpoint_every": 0,
                     "seed": 9, **train_kw}}
    return Config.from_dict(raw)


@pytest.fixture(scope="module")
def clips():
    return synthetic_clips(2, frames=4, height=32, width=32, seed=2)


def test_runs_are_deterministic(clips):
    a = train(tiny(), clips, out_dir=False).history
    b = train(tiny(), clips, out_dir=False).history
    assert a == b


def test_resume_is_bit_identical(clips, tmp_path):
    full = train(tiny(6), clips, out_dir=False)
    train(tiny(3), clips, out_dir=tmp_path)
    state, cfg = load_checkpoint(tmp_path / "last.pt", tiny(6))
    resumed = train(cfg, clips, out_dir=False, state=state)
    assert resumed.history == full.history
    for p, q in zip(resumed.model.parameters(), full.model.parameters()):
        assert torch.equal(p, q)


def test_resume_through_config(clips, tmp_path):
    train(tiny(2), clips, out_dir=tmp_path / "a")
    cfg = tiny(4, resume=str(tmp_path / "a" / "last.pt"))
    assert train(cfg, clips, out_dir=False).history == train(tiny(4), clips, out_dir=False).history


def test_zero_lr_leaves_parameters(clips):
    cfg = tiny(3, lr=0.0)
    before = [p.detach().clone() for p in init_state(cfg).model.parameters()]
    after = list(train(cfg, clips, out_dir=False).model.parameters())
    assert all(torch.equal(p, q) for p, q in zip(before, after))


def test_overfits_one_clip():
    # one 8-frame 64x64 clip at x4, 200 steps
    cfg = Config.from_dict({"model": {"channels": 64, "depth_norm": "clip", "seed": 5},
                            "train": {"hr_crop": 64, "frames": 8, "steps": 200, "lr": 2e-3, "warmup": 60,
                                      "checkpoint_every": 0, "seed": 9}})
    state = train(cfg, synthetic_clips(1, seed=0), out_dir=False)
    assert state.history[-1]["rec"] < 0.2 * state.history[0]["rec"]


def test_nan_aborts_with_component_name(clips):
    cfg = tiny(1)
    state = init_state(cfg)
    bad = [Clip(c.name, c.rgb, c.lr, DepthVideo(np.where(c.gt.mask, np.nan, 0.0), c.gt.mask)) for c in clips]
    with pytest.raises(FloatingPointError, match="'rec'"):
        train_step(state, cfg, bad)
    assert state.step == 0


def test_checkpoint_reproduces_metrics(clips, tmp_path):
    state = train(tiny(2), clips, out_dir=tmp_path)
    live = evaluate(state.model, clips)
    restored = evaluate(load_model(tmp_path / "last.pt"), clips)
    assert live.rows == restored.rows


def test_untrained_model_matches_bicubic_row(clips):
    table = evaluate(init_state(tiny()).model, clips)
    ours, bic = table.average("stdnet"), table.average("bicubic")
    for key in ("rmse", "mae", "tepe"):
        assert ours[key] == pytest.approx(bic[key], abs=1e-3)


def test_ground_truth_scores_zero(clips):
    clip = clips[0]
    from stdnet.metrics import clip_metrics
    m = clip_metrics(clip.gt.depth, clip.gt.depth, clip.gt.mask)
    assert m == {"rmse": 0.0, "mae": 0.0, "tepe": 0.0}
    assert bicubic_baseline(clip.lr, 4).shape == clip.gt.depth.shape


def test_scale_mismatch(clips):
    cfg = Config.from_dict({**tiny().to_dict(), "model": {**tiny().to_dict()["model"], "scale": 8}})
    with pytest.raises(ValueError, match="scale"):
        train(cfg, clips, out_dir=False)
    with pytest.raises(ValueError, match="scale"):
        evaluate(init_state(cfg).model, clips)


def test_checkpoint_rejects_other_model(clips, tmp_path):
    train(tiny(1), clips, out_dir=tmp_path)
    other = Config.from_dict({**tiny().to_dict(), "model": {**tiny().to_dict()["model"], "channels": 8}})
    with pytest.raises(ValueError, match="different model"):
        load_checkpoint(tmp_path / "last.pt", other)


def test_checkpoints_and_log_written(clips, tmp_path):
    train(tiny(4, checkpoint_every=2), clips, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.pt")) == ["ckpt_000002.pt", "ckpt_000004.pt", "last.pt"]
    rows = (tmp_path / "loss_log.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[0] == "step,total,rec,sd,td"


def test_cosine_schedule():
    cfg = TrainConfig(lr=1e-3, steps=100, lr_schedule="cosine", lr_floor=0.1)
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(50) == pytest.approx(1e-3 * (0.1 + 0.9 * 0.5))
    assert cfg.lr_at(100) == pytest.approx(1e-4)
    lrs = [cfg.lr_at(s) for s in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert TrainConfig(lr=2e-4).lr_at(77) == 2e-4


def test_warmup_ramp():
    cfg = TrainConfig(lr=1e-3, steps=100, warmup=10)
    assert cfg.lr_at(0) == pytest.approx(1e-4)
    assert cfg.lr_at(4) == pytest.approx(5e-4)
    assert cfg.lr_at(9) == cfg.lr_at(50) == 1e-3
    cos = TrainConfig(lr=1e-3, steps=100, warmup=10, lr_schedule="cosine", lr_floor=0.0)
    assert cos.lr_at(4) == pytest.approx(0.5 * TrainConfig(lr=1e-3, steps=100, lr_schedule="cosine",
                                                            lr_floor=0.0).lr_at(4))


def test_grad_clip_bounds_the_update(clips):
    # with plain SGD the first update is lr * clipped gradient, lr = 1e-3
    def first_update(clip_norm):
        cfg = tiny(1, grad_clip=clip_norm)
        state = init_state(cfg)
        state.optimizer = torch.optim.SGD(state.model.parameters(), lr=1.0)
        before = [p.detach().clone() for p in state.model.parameters()]
        train_step(state, cfg, clips)
        return torch.sqrt(sum(((p - q) ** 2).sum() for p, q in zip(state.model.parameters(), before)))

    assert first_update(0.0) > 1e-3
    assert first_update(1e-3).item() == pytest.approx(1e-6, rel=1e-4)


def test_schedule_reaches_optimizer(clips):
    cfg = tiny(3, lr_schedule="cosine", lr_floor=0.0)
    state = train(cfg, clips, out_dir=False)
    assert state.optimizer.param_groups[0]["lr"] == pytest.approx(cfg.train.lr_at(2))
    assert math.isclose(cfg.train.lr_at(3), 0.0, abs_tol=1e-12)


@pytest.mark.parametrize("kw", [{"augment": 1.5}, {"cutmix": -0.1}, {"lr_schedule": "step"}, {"frames": 2},
                                {"lr": -1.0}, {"warmup": -5}, {"grad_clip": -1.0}])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_augmentation_probability(clips):
    cfg = tiny(augment=0.0)
    plain = sample_batch(clips, cfg, np.random.default_rng(0))
    again = sample_batch(clips, cfg, np.random.default_rng(0))
    assert all(torch.equal(a, b) for a, b in zip(plain, again))
    aug = sample_batch(clips, tiny(augment=1.0), np.random.default_rng(0))
    assert [a.shape for a in aug] == [a.shape for a in plain]
    assert not torch.equal(aug[0], plain[0])
    assert (aug[2][aug[3]] >= 0).all()


def test_batch_shapes(clips):
    cfg = tiny(batch_size=2)
    rgb, lr, gt, mask = sample_batch(clips, cfg, np.random.default_rng(1))
    assert rgb.shape == (2, 3, 3, 16, 16)
    assert lr.shape == (2, 3, 1, 4, 4)
    assert gt.shape == mask.shape == (2, 3, 1, 16, 16)
