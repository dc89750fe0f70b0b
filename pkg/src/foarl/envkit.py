"""Deterministic toy Breakout rendered straight to 80x80 grayscale.

The game runs on an integer pixel grid: a 6x10 brick wall near the top, a
paddle on the bottom rows and a 2x2 ball. :class:`ToyBreakout` wraps the raw
game in the usual Atari preprocessing: frame skip with max-pooling over the
last two ticks, random no-op starts, reward clipping, life loss as terminal
and FIRE on reset.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .tensorcore import ContractViolation

SCREEN = 80

BRICK_ROWS = 6
BRICK_COLS = 10
BRICK_W = 8
BRICK_H = 3
BRICK_TOP = 12
ROW_SHADES = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)

PADDLE_W = 16
PADDLE_H = 2
PADDLE_Y = 74
PADDLE_SPEED = 4
PADDLE_SHADE = 0.75

BALL = 2
BALL_SHADE = 1.0

START_LIVES = 3


class Action(enum.IntEnum):
    NOOP = 0
    FIRE = 1
    LEFT = 2
    RIGHT = 3


def natural_action_count() -> int:
    return len(Action)


@dataclass
class GameState:
    paddle_x: int
    ball_pos: tuple[int, int]
    ball_vel: tuple[int, int]
    bricks: np.ndarray
    lives: int = START_LIVES
    score: int = 0
    awaiting_fire: bool = True

    def copy(self) -> "GameState":
        return replace(self, bricks=self.bricks.copy())


def initial_state() -> GameState:
    paddle_x = (SCREEN - PADDLE_W) // 2
    return GameState(
        paddle_x=paddle_x,
        ball_pos=_ball_on_paddle(paddle_x),
        ball_vel=(0, 0),
        bricks=np.ones((BRICK_ROWS, BRICK_COLS), dtype=bool),
    )


def _ball_on_paddle(paddle_x: int) -> tuple[int, int]:
    return paddle_x + (PADDLE_W - BALL) // 2, PADDLE_Y - BALL


def render_frame(state: GameState) -> np.ndarray:
    """Rasterize a game state; off-canvas parts are clipped away."""
    frame = np.zeros((SCREEN, SCREEN))
    shades = np.asarray(ROW_SHADES)[:, None] * state.bricks
    wall = np.repeat(np.repeat(shades, BRICK_H, axis=0), BRICK_W, axis=1)
    frame[BRICK_TOP:BRICK_TOP + BRICK_ROWS * BRICK_H, :BRICK_COLS * BRICK_W] = wall
    _fill(frame, state.paddle_x, PADDLE_Y, PADDLE_W, PADDLE_H, PADDLE_SHADE)
    bx, by = state.ball_pos
    _fill(frame, bx, by, BALL, BALL, BALL_SHADE)
    return frame


def _fill(frame, x, y, w, h, value):
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, SCREEN), min(y + h, SCREEN)
    if x0 < x1 and y0 < y1:
        frame[y0:y1, x0:x1] = value


def preprocess(frame: np.ndarray) -> np.ndarray:
    """Crop, grayscale and normalize.

    The toy game already renders a normalized 80x80 grayscale canvas, so the
    crop and color conversion are identities; only the range is enforced.
    """
    return np.clip(frame[:SCREEN, :SCREEN], 0.0, 1.0)


def tick(state: GameState, action: int, rng: np.random.Generator) -> int:
    """Advance the game by one frame in place; returns the raw reward."""
    if action == Action.LEFT:
        state.paddle_x = max(state.paddle_x - PADDLE_SPEED, 0)
    elif action == Action.RIGHT:
        state.paddle_x = min(state.paddle_x + PADDLE_SPEED, SCREEN - PADDLE_W)

    if state.awaiting_fire:
        state.ball_pos = _ball_on_paddle(state.paddle_x)
        if action == Action.FIRE:
            state.awaiting_fire = False
            state.ball_vel = (int(rng.choice((-1, 1))), -1)
        return 0

    x, y = state.ball_pos
    dx, dy = state.ball_vel
    nx = x + dx
    if nx < 0 or nx + BALL > SCREEN:
        dx = -dx
        nx = x + dx
    ny = y + dy
    if ny < 0:
        dy = -dy
        ny = y + dy

    reward = 0
    hit = _brick_hits(state.bricks, nx, ny)
    if hit:
        for r, c in hit:
            state.bricks[r, c] = False
        reward = len(hit)
        dy = -dy
        ny = y
    elif dy > 0 and ny + BALL > PADDLE_Y and y + BALL <= PADDLE_Y:
        if nx + BALL > state.paddle_x and nx < state.paddle_x + PADDLE_W:
            # paddle quarters send the ball off at -2, -1, +1, +2 px/tick
            quarter = (nx + BALL // 2 - state.paddle_x) * 4 // PADDLE_W
            dx = (-2, -1, 1, 2)[min(max(quarter, 0), 3)]
            dy = -1
            ny = PADDLE_Y - BALL

    state.ball_pos = (nx, ny)
    state.ball_vel = (dx, dy)
    state.score += reward
    if ny >= SCREEN:
        state.lives -= 1
        state.awaiting_fire = True
        state.ball_vel = (0, 0)
        state.ball_pos = _ball_on_paddle(state.paddle_x)
    return reward


def _brick_hits(bricks: np.ndarray, x: int, y: int) -> list[tuple[int, int]]:
    top, bottom = BRICK_TOP, BRICK_TOP + BRICK_ROWS * BRICK_H
    if y + BALL <= top or y >= bottom:
        return []
    rows = range(max((y - top) // BRICK_H, 0), min((y + BALL - 1 - top) // BRICK_H, BRICK_ROWS - 1) + 1)
    cols = range(max(x // BRICK_W, 0), min((x + BALL - 1) // BRICK_W, BRICK_COLS - 1) + 1)
    return [(r, c) for r in rows for c in cols if bricks[r, c]]


@dataclass(frozen=True)
class EnvConfig:
    frame_skip: int = 4
    max_pool_screens: bool = True
    noop_range: tuple[int, int] = (0, 30)
    clip_rewards: bool = True
    life_loss_terminal: bool = True
    fire_on_reset: bool = True
    episode_cap: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noop_range", tuple(int(v) for v in self.noop_range))
        lo, hi = self.noop_range
        if self.frame_skip < 1:
            raise ValueError("frame_skip must be >= 1")
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid noop_range {self.noop_range}")
        if self.episode_cap < 1:
            raise ValueError("episode_cap must be >= 1")


@dataclass
class StepResult:
    frame: np.ndarray
    reward: float
    terminal: bool
    info: dict = field(default_factory=dict)


class ToyBreakout:
    """Preprocessed Breakout environment; one instance per worker."""

    n_actions = natural_action_count()

    def __init__(self, cfg: EnvConfig | None = None, seed: int | None = None):
        self.cfg = cfg or EnvConfig()
        self.rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        self.state = initial_state()
        self.terminal = True
        self.steps = 0
        self.tick_frames: list[np.ndarray] = []

    def reset(self) -> np.ndarray:
        self.state = initial_state()
        self.terminal = False
        self.steps = 0
        lo, hi = self.cfg.noop_range
        frame = preprocess(render_frame(self.state))
        for _ in range(int(self.rng.integers(lo, hi + 1))):
            frame = self._skip(Action.NOOP)[0]
        if self.cfg.fire_on_reset:
            frame = self._skip(Action.FIRE)[0]
        self.steps = 0
        return frame

    def _skip(self, action: int) -> tuple[np.ndarray, int]:
        total = 0
        self.tick_frames = []
        for _ in range(self.cfg.frame_skip):
            total += tick(self.state, action, self.rng)
            self.tick_frames.append(render_frame(self.state))
        last = self.tick_frames[-1]
        if self.cfg.max_pool_screens and len(self.tick_frames) > 1:
            last = np.maximum(self.tick_frames[-2], last)
        return preprocess(last), total

    def step(self, action: int) -> StepResult:
        if self.terminal:
            raise ContractViolation("step() on a terminal environment; call reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid natural action {action}")
        lives = self.state.lives
        frame, raw = self._skip(action)
        self.steps += 1
        reward = float(np.sign(raw)) if self.cfg.clip_rewards else float(raw)
        lost = self.state.lives < lives
        terminal = (
            (lost and self.cfg.life_loss_terminal)
            or self.state.lives <= 0
            or not self.state.bricks.any()
            or self.steps >= self.cfg.episode_cap
        )
        self.terminal = terminal
        info = {"lives": self.state.lives, "raw_score": self.state.score, "raw_reward": raw}
        return StepResult(frame, reward, terminal, info)


def random_policy_scores(cfg: EnvConfig | None = None, episodes: int = 1000, seed: int = 0) -> np.ndarray:
    """Raw episode scores of a uniform-random natural policy."""
    env = ToyBreakout(cfg, seed=seed)
    rng = np.random.default_rng([seed, 1])
    scores = np.zeros(episodes)
    for i in range(episodes):
        env.reset()
        while not env.terminal:
            env.step(int(rng.integers(env.n_actions)))
        scores[i] = env.state.score
    return scores
