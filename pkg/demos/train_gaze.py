"""Teach the vision head where to look.

The gaze stub pays +1 while the focal point sits in the top-left quadrant.
A few thousand sequential steps are enough for the visual policy to drift
there; the heat map of an evaluation run shows where it settled.
"""
import numpy as np

from foarl.config import ExperimentConfig, model_roi
from foarl.policynet import NetConfig, init_params
from foarl.trainer import evaluate, run_training

name = "Constant 50x50, sub2"
cfg = ExperimentConfig(
    env_name="gaze", model_name=name, roi=model_roi(name),
    net=NetConfig(conv_specs=((8, 8, 4), (16, 4, 2)), lstm_size=64),
    mode="sequential", workers=4, T_max=20_000, lr=1e-3, checkpoint_every=0,
)

before = evaluate(init_params(cfg.net, cfg.seed), cfg, 10)
res = run_training(cfg)
after = evaluate(res.params, cfg, 10)


def quadrant_share(heat):
    return heat[:40, :40].sum() / heat.sum()


print(f"trained {res.T} steps in {res.seconds:.0f}s over {len(res.episodes)} episodes")
print(f"time in the rewarded quadrant: {quadrant_share(before.heatmap):.2f} -> {quadrant_share(after.heatmap):.2f}")
print(f"mean episode score: {np.mean(before.scores):.1f} -> {np.mean(after.scores):.1f}")

# a coarse 8x8 view of where the focal point spent its time
coarse = after.heatmap.reshape(8, 10, 8, 10).sum(axis=(1, 3))
for row in coarse / coarse.max():
    print("".join(" .:-=+*#%@"[int(v * 9)] for v in row))
