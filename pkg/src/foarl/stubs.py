"""Tiny environments with known optimal behaviour, for learning sanity checks."""
from __future__ import annotations

import numpy as np

from .envkit import SCREEN, StepResult, natural_action_count
from .fovea import FocalPoint
from .tensorcore import ContractViolation


class BanditStub:
    """Two alternating screens; one natural action pays +1 in both."""

    n_actions = natural_action_count()

    def __init__(self, seed: int = 0, rewarded_action: int = 2, episode_length: int = 20):
        self.rng = np.random.default_rng(seed)
        self.rewarded_action = rewarded_action
        self.episode_length = episode_length
        self.screens = np.zeros((2, SCREEN, SCREEN))
        self.screens[0, : SCREEN // 2] = 1.0
        self.screens[1, SCREEN // 2:] = 1.0
        self.terminal = True
        self.steps = 0
        self.score = 0.0
        self.phase = 0

    def reset(self) -> np.ndarray:
        self.terminal = False
        self.steps = 0
        self.score = 0.0
        self.phase = int(self.rng.integers(2))
        return self.screens[self.phase].copy()

    def step(self, action: int) -> StepResult:
        if self.terminal:
            raise ContractViolation("step() on a terminal environment; call reset()")
        reward = 1.0 if action == self.rewarded_action else 0.0
        self.score += reward
        self.steps += 1
        self.phase ^= 1
        self.terminal = self.steps >= self.episode_length
        return StepResult(self.screens[self.phase].copy(), reward, self.terminal,
                          {"lives": 1, "raw_score": self.score})


class GazeStub:
    """Pays +1 whenever the focal point sits in the target quadrant.

    The screen is a static diagonal ramp so a focal window reveals where it
    is. Natural actions have no effect.
    """

    n_actions = natural_action_count()

    def __init__(self, seed: int = 0, target: tuple[int, int] = (0, 0), episode_length: int = 40):
        self.rng = np.random.default_rng(seed)
        self.target = target
        self.episode_length = episode_length
        yy, xx = np.mgrid[0:SCREEN, 0:SCREEN]
        self.screen = (xx + yy) / (2.0 * (SCREEN - 1))
        self.focal_point = FocalPoint(SCREEN // 2, SCREEN // 2)
        self.terminal = True
        self.steps = 0
        self.score = 0.0

    def in_target(self, fp: FocalPoint) -> bool:
        half = SCREEN // 2
        return (fp.fx // half, fp.fy // half) == self.target

    def set_focal_point(self, fp: FocalPoint) -> None:
        self.focal_point = fp

    def reset(self) -> np.ndarray:
        self.terminal = False
        self.steps = 0
        self.score = 0.0
        return self.screen.copy()

    def step(self, action: int) -> StepResult:
        if self.terminal:
            raise ContractViolation("step() on a terminal environment; call reset()")
        reward = 1.0 if self.in_target(self.focal_point) else 0.0
        self.score += reward
        self.steps += 1
        self.terminal = self.steps >= self.episode_length
        return StepResult(self.screen.copy(), reward, self.terminal, {"lives": 1, "raw_score": self.score})
