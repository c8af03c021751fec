"""Super-resolve a synthetic clip with a freshly built network.

An untrained model returns the bicubic upsampling exactly (its residual
head starts at zero), so both rows of the table match. After training,
the first row is the one that moves.

    python demos/quickstart.py
"""

from stdnet import ModelConfig, STDNet, param_count
from stdnet.training import evaluate, predict, synthetic_clips

cfg = ModelConfig(scale=4, channels=32)
model = STDNet(cfg)
print(f"STDNet x{cfg.scale}, {param_count(cfg):,} parameters")

clips = synthetic_clips(n_clips=2, frames=8, height=64, width=64, scale=4, seed=0)
clip = clips[0]
pred = predict(model, clip.rgb, clip.lr)
print(f"LR {clip.lr.depth.shape} -> HR {pred.shape}, depth range {pred.min():.0f}..{pred.max():.0f} cm")

print(evaluate(model, clips).summary())
