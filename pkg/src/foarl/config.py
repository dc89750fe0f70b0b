"""Experiment configuration and the catalog of foveation models."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .advantage import Hyper
from .envkit import EnvConfig
from .fovea import RoiConfig
from .policynet import NetConfig

MODES = ("async-lockfree", "async-mutex", "sequential")
ENVS = ("breakout", "bandit", "gaze")

_DECREASING = ((30, 30, 1), (50, 50, 2), (70, 70, 4))

CATALOG: dict[str, tuple[tuple[tuple[int, int, int], ...], bool]] = {
    "Non-FoA, sub1": (((80, 80, 1),), False),
    "Constant 50x50, sub1": (((50, 50, 1),), False),
    "Constant 50x50, sub2": (((50, 50, 2),), False),
    "Constant 70x70, sub2": (((70, 70, 2),), False),
    "Decreasing 30-50-70": (_DECREASING, False),
    "Constant(P) 70x70, sub2": (((70, 70, 2),), True),
    "Decreasing(P) 30-50-70": (_DECREASING, True),
}

# reference pixel counts each catalog model exposes
CATALOG_PIXELS = {
    "Non-FoA, sub1": 6400,
    "Constant 50x50, sub1": 2500,
    "Constant 50x50, sub2": 625,
    "Constant 70x70, sub2": 1225,
    "Decreasing 30-50-70": 1450,
    "Constant(P) 70x70, sub2": 1241,
    "Decreasing(P) 30-50-70": 1466,
}

CUSTOM = "custom"


def slug(name: str) -> str:
    s = name.lower().replace("(p)", " p")
    return re.sub(r"[^a-z0-9]+", "_", s).strip("_")


_BY_SLUG = {slug(name): name for name in CATALOG}


def canonical_model_name(name: str) -> str:
    name = name.strip()
    if name in CATALOG or name == CUSTOM:
        return name
    try:
        return _BY_SLUG[slug(name)]
    except KeyError:
        raise ValueError(f"unknown model name {name!r}") from None


def model_roi(name: str, peripheral_grid: int = 5, edge_mode: str = "shift") -> RoiConfig:
    layers, peripheral = CATALOG[canonical_model_name(name)]
    return RoiConfig(layers, peripheral, peripheral_grid, edge_mode)


def catalog_name_for(roi: RoiConfig) -> str:
    for name, (layers, peripheral) in CATALOG.items():
        if roi.layers == layers and roi.peripheral == peripheral:
            return name
    return CUSTOM


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str = "Non-FoA, sub1"
    env_name: str = "breakout"
    env: EnvConfig = field(default_factory=EnvConfig)
    roi: RoiConfig = field(default_factory=lambda: model_roi("Non-FoA, sub1"))
    net: NetConfig = field(default_factory=NetConfig)
    hyper: Hyper = field(default_factory=Hyper)
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0
    t_max: int = 20
    T_max: int = 1_000_000
    workers: int = 8
    seed: int = 0
    mode: str = "async-lockfree"
    visual_step: int = 5
    checkpoint_every: int = 100_000
    log_every: int = 1
    target_score: float | None = None
    eval_greedy: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.env_name not in ENVS:
            raise ValueError(f"env must be one of {ENVS}, got {self.env_name!r}")
        if self.model_name != CUSTOM:
            expected = model_roi(self.model_name, self.roi.peripheral_grid, self.roi.edge_mode)
            if expected != self.roi:
                raise ValueError(f"focal layers do not match model {self.model_name!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.t_max < 1 or self.T_max < 0 or self.workers < 1:
            raise ValueError("t_max and workers must be >= 1, T_max >= 0")
        if self.visual_step < 0:
            raise ValueError("visual_step must be >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ValueError("checkpoint_every must be >= 0 and log_every >= 1")
