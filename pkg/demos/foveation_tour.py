"""Walk through the catalog models on one toy Breakout frame.

Writes one PGM per model into ./fovea_tour so the views can be compared
side by side, and prints how many pixel values each model exposes.
"""
from pathlib import Path

import numpy as np

from foarl.config import CATALOG, model_roi
from foarl.envkit import EnvConfig, ToyBreakout
from foarl.fovea import FocalPoint, apply_roi, visible_pixel_count, write_pgm

out = Path("fovea_tour")
out.mkdir(exist_ok=True)

# a few steps in, so the ball has left the paddle
env = ToyBreakout(EnvConfig(noop_range=(0, 0)), seed=0)
frame = env.reset()
for _ in range(6):
    frame = env.step(0).frame
write_pgm(out / "raw.pgm", frame)

# look at the lower half of the screen, where the paddle lives
fp = FocalPoint(40, 60)
for name in CATALOG:
    cfg = model_roi(name)
    view = apply_roi(frame, cfg, fp)
    fname = name.lower().replace(" ", "_").replace(",", "").replace("(", "").replace(")", "")
    write_pgm(out / f"{fname}.pgm", view)
    print(f"{name:<26} {visible_pixel_count(cfg):>5} values, {len(np.unique(view)):>5} distinct in this view")

# a corner focal point: the default edge mode slides the whole stack back on screen
cfg = model_roi("Decreasing(P) 30-50-70")
write_pgm(out / "corner_shift.pgm", apply_roi(frame, cfg, FocalPoint(0, 0)))
crop = model_roi("Decreasing(P) 30-50-70", edge_mode="crop")
write_pgm(out / "corner_crop.pgm", apply_roi(frame, crop, FocalPoint(0, 0)))
print("views written to", out.resolve())
