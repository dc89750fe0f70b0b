"""Dual-head A3C-LSTM network.

A shared convolutional torso and LSTM feed two heads. The natural head picks
game actions, the vision head picks gaze moves; each head has a softmax
policy and a scalar value output. The heads differ only in their final
affine layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .envkit import natural_action_count
from .fovea import N_VISUAL_ACTIONS, SCREEN

HEADS = ("nat_pi", "nat_v", "vis_pi", "vis_v")


@dataclass(frozen=True)
class NetConfig:
    conv_specs: tuple[tuple[int, int, int], ...] = ((16, 8, 4), (32, 4, 2))
    lstm_size: int = 256
    n_nat_actions: int = field(default_factory=natural_action_count)
    n_vis_actions: int = N_VISUAL_ACTIONS
    input_size: int = SCREEN

    def __post_init__(self):
        object.__setattr__(self, "conv_specs", tuple(tuple(int(v) for v in s) for s in self.conv_specs))
        if self.n_vis_actions != N_VISUAL_ACTIONS:
            raise ValueError(f"vision head must have {N_VISUAL_ACTIONS} actions")
        if self.n_nat_actions < 2:
            raise ValueError("need at least two natural actions")
        if self.lstm_size < 1:
            raise ValueError("lstm_size must be positive")
        self.torso_shape()

    def torso_shape(self) -> tuple[int, int, int]:
        channels, size = 1, self.input_size
        for out, kernel, stride in self.conv_specs:
            if kernel > size or stride < 1:
                raise ValueError(f"conv layer {(out, kernel, stride)} does not fit a {size}x{size} input")
            channels, size = out, (size - kernel) // stride + 1
        return channels, size, size


@dataclass
class NetOutput:
    pi_nat: np.ndarray
    v_nat: float
    pi_vis: np.ndarray
    v_vis: float
    lstm_state: tuple[np.ndarray, np.ndarray]
    nodes: dict = field(default_factory=dict, repr=False)


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    channels = 1
    for i, (out, kernel, _) in enumerate(cfg.conv_specs):
        shapes[f"conv{i}.w"] = (out, channels, kernel, kernel)
        shapes[f"conv{i}.b"] = (out,)
        channels = out
    flat = int(np.prod(cfg.torso_shape()))
    n = cfg.lstm_size
    shapes["lstm.w_ih"] = (4 * n, flat)
    shapes["lstm.w_hh"] = (4 * n, n)
    shapes["lstm.b"] = (4 * n,)
    widths = {"nat_pi": cfg.n_nat_actions, "nat_v": 1, "vis_pi": cfg.n_vis_actions, "vis_v": 1}
    for head in HEADS:
        shapes[f"{head}.w"] = (widths[head], n)
        shapes[f"{head}.b"] = (widths[head],)
    return shapes


def _orthogonal(shape, gain, rng):
    rows, cols = shape[0], int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols].reshape(shape)


def init_params(cfg: NetConfig, seed: int = 0) -> tc.ParamVector:
    rng = np.random.default_rng(seed)
    params = tc.ParamVector(param_shapes(cfg))
    for i in range(len(cfg.conv_specs)):
        params[f"conv{i}.w"][...] = _orthogonal(params[f"conv{i}.w"].shape, np.sqrt(2.0), rng)
    params["lstm.w_ih"][...] = _orthogonal(params["lstm.w_ih"].shape, 1.0, rng)
    params["lstm.w_hh"][...] = _orthogonal(params["lstm.w_hh"].shape, 1.0, rng)
    n = cfg.lstm_size
    params["lstm.b"][n:2 * n] = 1.0
    for head in HEADS:
        gain = 0.01 if head.endswith("_pi") else 1.0
        params[f"{head}.w"][...] = _orthogonal(params[f"{head}.w"].shape, gain, rng)
    return params


def initial_lstm_state(cfg: NetConfig) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(cfg.lstm_size), np.zeros(cfg.lstm_size)


def forward(frame, lstm_state, params: tc.ParamVector, cfg: NetConfig, tape: tc.Tape | None = None) -> NetOutput:
    """Run one step of the network.

    With a ``tape`` the computation is recorded for a later backward pass;
    ``params`` are watched on first use and ``lstm_state`` may hold nodes
    from an earlier step on the same tape, so a rollout unrolls through time.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (cfg.input_size, cfg.input_size):
        raise tc.InvalidShape(f"frame shape {frame.shape} != {(cfg.input_size,) * 2}")
    tape = tape if tape is not None else tc.Tape()
    p = tape.params if tape.params else tape.watch(params)
    h, c = (s if isinstance(s, tc.Node) else tape.constant(s) for s in lstm_state)
    if h.value.shape != (cfg.lstm_size,) or c.value.shape != (cfg.lstm_size,):
        raise tc.InvalidShape(f"lstm state must have length {cfg.lstm_size}")

    x = tape.constant(frame[None])
    for i, (_, _, stride) in enumerate(cfg.conv_specs):
        x = tc.relu(tc.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride))
    x = tc.reshape(x, (-1,))
    h, c = tc.lstm_cell(x, h, c, p["lstm.w_ih"], p["lstm.w_hh"], p["lstm.b"])

    pi_nat = tc.softmax(tc.affine(h, p["nat_pi.w"], p["nat_pi.b"]))
    v_nat = tc.affine(h, p["nat_v.w"], p["nat_v.b"])
    pi_vis = tc.softmax(tc.affine(h, p["vis_pi.w"], p["vis_pi.b"]))
    v_vis = tc.affine(h, p["vis_v.w"], p["vis_v.b"])
    return NetOutput(
        pi_nat=pi_nat.value,
        v_nat=float(v_nat.value[0]),
        pi_vis=pi_vis.value,
        v_vis=float(v_vis.value[0]),
        lstm_state=(h.value, c.value),
        nodes={"pi_nat": pi_nat, "v_nat": v_nat, "pi_vis": pi_vis, "v_vis": v_vis, "h": h, "c": c},
    )


def sample_actions(out: NetOutput, rng: np.random.Generator) -> tuple[int, int]:
    """Independent categorical draws from the two policies."""
    return _draw(out.pi_nat, rng), _draw(out.pi_vis, rng)


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF on one uniform keeps the draw count per step fixed
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def greedy_actions(out: NetOutput) -> tuple[int, int]:
    return int(np.argmax(out.pi_nat)), int(np.argmax(out.pi_vis))
