"""Asynchronous actor-learners around a shared network and AMSGrad optimizer.

Every worker owns an environment, a private copy of the parameters, an LSTM
state and a focal point. It repeatedly copies the global parameters, plays
up to ``t_max`` steps through the focal layer, builds the dual-head loss,
backpropagates through the unrolled rollout and applies the gradient to the
shared parameters.

Three execution modes are supported:

``async-lockfree``
    one process per worker, Hogwild-style in-place updates of shared memory;
``async-mutex``
    same, but each optimizer step holds a global lock;
``sequential``
    workers time-sliced round-robin in the calling process, bit-reproducible.
"""
from __future__ import annotations

import contextlib
import csv
import logging
import math
import multiprocessing as mp
import queue
import time
import traceback
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import advantage as adv
from . import policynet as pn
from . import tensorcore as tc
from .config import ExperimentConfig
from .envkit import ToyBreakout
from .fovea import SCREEN, FocalPoint, apply_roi, center_point, move_focal_point
from .stubs import BanditStub, GazeStub

log = logging.getLogger(__name__)

EPISODE_FIELDS = ("episode", "worker", "steps", "raw_score", "clipped_return", "wall_ms")
UPDATE_FIELDS = ("update", "T", "L_total", "L_policy_nat", "L_value_nat", "L_policy_vis", "L_value_vis")


class TrainingError(RuntimeError):
    pass


def make_env(cfg: ExperimentConfig, seed: int):
    if cfg.env_name == "breakout":
        return ToyBreakout(cfg.env, seed=seed)
    if cfg.env_name == "bandit":
        return BanditStub(seed=seed)
    return GazeStub(seed=seed)


def worker_seeds(seed: int, worker_id: int) -> tuple[int, int]:
    env_ss, act_ss = np.random.SeedSequence([seed, worker_id]).spawn(2)
    return int(env_ss.generate_state(1)[0]), int(act_ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# shared state


class _LocalValue:
    def __init__(self, value=0):
        self.value = value

    def get_lock(self):
        return contextlib.nullcontext()


class GlobalState:
    """Global parameters, AMSGrad moments and counters.

    With a multiprocessing context the arrays live in shared memory and the
    object can be handed to worker processes.
    """

    def __init__(self, params: tc.ParamVector, ctx=None, locked: bool = False, T_max: int = 0):
        self.shapes = params.shapes
        self.T_max = T_max
        n = params.size
        if ctx is None:
            self._raw = None
            self.T = _LocalValue(0)
            self.step = _LocalValue(0)
            self.stop = _LocalValue(0)
            self.lock = None
        else:
            self._raw = [ctx.RawArray("d", n) for _ in range(4)]
            self.T = ctx.Value("q", 0)
            self.step = ctx.Value("q", 0)
            self.stop = ctx.Value("b", 0)
            self.lock = ctx.Lock() if locked else None
        self._bind()
        self.theta.flat[:] = params.flat

    def _bind(self):
        if self._raw is None:
            self.theta = tc.ParamVector(self.shapes)
            n = self.theta.size
            self.m, self.v, self.vhat = np.zeros(n), np.zeros(n), np.zeros(n)
        else:
            self.theta = tc.ParamVector(self.shapes, self._raw[0])
            self.m, self.v, self.vhat = (np.frombuffer(r, dtype=np.float64) for r in self._raw[1:])

    def __getstate__(self):
        state = self.__dict__.copy()
        for key in ("theta", "m", "v", "vhat"):
            state.pop(key)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._bind()

    def guard(self):
        return self.lock if self.lock is not None else contextlib.nullcontext()

    def advance(self, steps: int) -> int:
        with self.T.get_lock():
            self.T.value += steps
            return self.T.value

    def should_stop(self) -> bool:
        return self.T.value >= self.T_max or bool(self.stop.value)


def update_global(
    g: GlobalState,
    grads: np.ndarray,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip: float = 0.0,
) -> None:
    """One bias-corrected AMSGrad step on the shared parameters, in place."""
    if grads.shape != g.theta.flat.shape:
        raise tc.ContractViolation(f"gradient shape {grads.shape} != parameter shape {g.theta.flat.shape}")
    if clip > 0:
        norm = float(np.linalg.norm(grads))
        if norm > clip:
            grads = grads * (clip / norm)
    with g.guard():
        with g.step.get_lock():
            g.step.value += 1
            s = g.step.value
        np.multiply(g.m, beta1, out=g.m)
        g.m += (1.0 - beta1) * grads
        np.multiply(g.v, beta2, out=g.v)
        g.v += (1.0 - beta2) * (grads * grads)
        np.maximum(g.vhat, g.v, out=g.vhat)
        denom = np.sqrt(g.vhat)
        denom /= math.sqrt(1.0 - beta2 ** s)
        denom += eps
        g.theta.flat -= (lr / (1.0 - beta1 ** s)) * g.m / denom
        g.theta.version += 1


# --------------------------------------------------------------------------
# workers


@dataclass
class Rollout:
    buffer: adv.RolloutBuffer
    steps: list[dict]
    tape: tc.Tape
    episodes: list[dict] = field(default_factory=list)


class Worker:
    def __init__(self, worker_id: int, cfg: ExperimentConfig, glob: GlobalState, clock=None):
        self.id = worker_id
        self.cfg = cfg
        self.glob = glob
        env_seed, act_seed = worker_seeds(cfg.seed, worker_id)
        self.env = make_env(cfg, env_seed)
        self.rng = np.random.default_rng(act_seed)
        self.theta = tc.ParamVector(glob.shapes)
        self.clock = clock
        self.frame = None
        self.lstm = pn.initial_lstm_state(cfg.net)
        self.focal_point = center_point()
        self._ep = None

    def sync(self) -> None:
        # lock-free mode may observe a torn snapshot; that is accepted
        self.theta.flat[:] = self.glob.theta.flat

    def start_episode(self) -> None:
        self.frame = self.env.reset()
        self.lstm = pn.initial_lstm_state(self.cfg.net)
        self.focal_point = center_point()
        self._ep = {"steps": 0, "clipped_return": 0.0, "raw_score": 0.0}

    def observe(self, frame=None) -> np.ndarray:
        return apply_roi(self.frame if frame is None else frame, self.cfg.roi, self.focal_point)

    def collect_rollout(self) -> Rollout:
        cfg = self.cfg
        if self.frame is None:
            self.start_episode()
        tape = tc.Tape()
        tape.watch(self.theta)
        buf = adv.RolloutBuffer()
        steps: list[dict] = []
        episodes: list[dict] = []
        state = self.lstm
        for _ in range(cfg.t_max):
            obs = self.observe()
            out = pn.forward(obs, state, self.theta, cfg.net, tape)
            a_nat, a_vis = pn.sample_actions(out, self.rng)
            if hasattr(self.env, "set_focal_point"):
                self.env.set_focal_point(self.focal_point)
            res = self.env.step(a_nat)
            self.focal_point = move_focal_point(self.focal_point, a_vis, cfg.visual_step)
            buf.append(
                a_nat, a_vis, res.reward, out.v_nat, out.v_vis,
                math.log(out.pi_nat[a_nat]), math.log(out.pi_vis[a_vis]),
                adv.entropy(out.pi_nat), adv.entropy(out.pi_vis), frame=obs,
            )
            steps.append(out.nodes)
            state = (out.nodes["h"], out.nodes["c"])
            self.lstm = out.lstm_state
            self.frame = res.frame
            self._ep["steps"] += 1
            self._ep["clipped_return"] += res.reward
            self._ep["raw_score"] = float(res.info.get("raw_score", self._ep["clipped_return"]))
            if res.terminal:
                buf.terminal = True
                episodes.append(self._finish_episode())
                break
        if not buf.terminal:
            boot = pn.forward(self.observe(), self.lstm, self.theta, self.cfg.net)
            buf.boot_nat, buf.boot_vis = boot.v_nat, boot.v_vis
        return Rollout(buf, steps, tape, episodes)

    def _finish_episode(self) -> dict:
        rec = dict(self._ep, worker=self.id, wall_ms=self.clock() if self.clock else 0)
        self.frame = None
        self._ep = None
        return rec

    def train_once(self) -> tuple[adv.LossParts, int, list[dict]]:
        cfg = self.cfg
        self.sync()
        ro = self.collect_rollout()
        loss, parts = adv.tape_loss(ro.buffer, ro.steps, cfg.hyper)
        grads = tc.backward(ro.tape, loss, self.theta)
        update_global(self.glob, grads, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.grad_clip)
        T = self.glob.advance(ro.buffer.k)
        return parts, T, ro.episodes


def collect_rollout(worker: Worker) -> Rollout:
    return worker.collect_rollout()


# --------------------------------------------------------------------------
# run bookkeeping


class RunLog:
    """Episode and update logs, periodic checkpoints and early stopping."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path | None, glob: GlobalState):
        self.cfg = cfg
        self.glob = glob
        self.out_dir = out_dir
        self.episodes: list[dict] = []
        self.updates: list[dict] = []
        self.recent: deque[float] = deque(maxlen=100)
        self.n_updates = 0
        self.next_checkpoint = cfg.checkpoint_every or None
        self._files = []
        self._ep_writer = self._up_writer = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._ep_writer = self._open(out_dir / "episodes.csv", EPISODE_FIELDS)
            self._up_writer = self._open(out_dir / "updates.csv", UPDATE_FIELDS)

    def _open(self, path: Path, fields):
        fh = open(path, "w", newline="", buffering=1)
        self._files.append(fh)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        return writer

    def close(self):
        for fh in self._files:
            fh.close()
        self._files = []

    def episode(self, rec: dict) -> None:
        row = {
            "episode": len(self.episodes),
            "worker": rec["worker"],
            "steps": rec["steps"],
            "raw_score": rec["raw_score"],
            "clipped_return": rec["clipped_return"],
            "wall_ms": int(rec["wall_ms"]),
        }
        self.episodes.append(row)
        if self._ep_writer:
            self._ep_writer.writerow([_fmt(row[k]) for k in EPISODE_FIELDS])
        self.recent.append(row["raw_score"])
        target = self.cfg.target_score
        if target is not None and len(self.recent) == self.recent.maxlen and np.mean(self.recent) >= target:
            self.glob.stop.value = 1

    def update(self, parts: adv.LossParts, T: int) -> None:
        self.n_updates += 1
        if not all(math.isfinite(v) for v in (parts.total, parts.policy_nat, parts.value_nat, parts.policy_vis, parts.value_vis)):
            log.warning("non-finite loss at update %d", self.n_updates)
        if (self.n_updates - 1) % self.cfg.log_every == 0:
            row = {
                "update": self.n_updates - 1, "T": T, "L_total": parts.total,
                "L_policy_nat": parts.policy_nat, "L_value_nat": parts.value_nat,
                "L_policy_vis": parts.policy_vis, "L_value_vis": parts.value_vis,
            }
            self.updates.append(row)
            if self._up_writer:
                self._up_writer.writerow([_fmt(row[k]) for k in UPDATE_FIELDS])
        if self.next_checkpoint is not None and self.out_dir is not None and T >= self.next_checkpoint:
            tc.save_checkpoint(self.glob.theta, self.out_dir / "checkpoint.fvrl")
            while self.next_checkpoint <= T:
                self.next_checkpoint += self.cfg.checkpoint_every


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if not v.is_integer() else str(int(v)) if abs(v) < 1e15 else repr(v)
    return str(v)


@dataclass
class TrainingResult:
    params: tc.ParamVector
    T: int
    episodes: list[dict]
    updates: list[dict]
    seconds: float
    stopped_early: bool = False


def run_training(cfg: ExperimentConfig, out_dir: str | Path | None = None, init: tc.ParamVector | None = None) -> TrainingResult:
    """Train until the shared step counter reaches ``cfg.T_max``.

    Writes ``episodes.csv``, ``updates.csv``, periodic ``checkpoint.fvrl``
    and ``final.fvrl`` when ``out_dir`` is given.
    """
    out = Path(out_dir) if out_dir is not None else None
    params = init if init is not None else pn.init_params(cfg.net, cfg.seed)
    if not params.same_layout(tc.ParamVector(pn.param_shapes(cfg.net))):
        raise tc.InvalidCheckpoint("initial parameters do not match the network configuration")
    start = time.perf_counter()
    if cfg.mode == "sequential":
        glob = GlobalState(params, T_max=cfg.T_max)
        runlog = RunLog(cfg, out, glob)
        try:
            _run_sequential(cfg, glob, runlog)
        except Exception as exc:
            _save_partial(glob, out)
            raise TrainingError(f"sequential training failed: {exc}") from exc
        finally:
            runlog.close()
    else:
        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
        glob = GlobalState(params, ctx=ctx, locked=cfg.mode == "async-mutex", T_max=cfg.T_max)
        runlog = RunLog(cfg, out, glob)
        try:
            _run_async(cfg, glob, runlog, ctx, start)
        finally:
            runlog.close()
    final = glob.theta.copy()
    if out is not None:
        tc.save_checkpoint(final, out / "final.fvrl")
    return TrainingResult(final, glob.T.value, runlog.episodes, runlog.updates,
                          time.perf_counter() - start, bool(glob.stop.value))


def _run_sequential(cfg: ExperimentConfig, glob: GlobalState, runlog: RunLog) -> None:
    workers = [Worker(i, cfg, glob) for i in range(cfg.workers)]
    while not glob.should_stop():
        for w in workers:
            if glob.should_stop():
                break
            parts, T, episodes = w.train_once()
            for rec in episodes:
                runlog.episode(rec)
            runlog.update(parts, T)


def _save_partial(glob: GlobalState, out: Path | None) -> None:
    if out is not None:
        with contextlib.suppress(OSError):
            tc.save_checkpoint(glob.theta, out / "partial.fvrl")


def _worker_main(worker_id: int, cfg: ExperimentConfig, glob: GlobalState, q, start: float) -> None:
    try:
        w = Worker(worker_id, cfg, glob, clock=lambda: (time.perf_counter() - start) * 1000.0)
        while not glob.should_stop():
            parts, T, episodes = w.train_once()
            for rec in episodes:
                q.put(("episode", rec))
            q.put(("update", parts, T))
        q.put(("done", worker_id))
    except BaseException:
        q.put(("error", worker_id, traceback.format_exc()))
        raise SystemExit(1)


def _run_async(cfg: ExperimentConfig, glob: GlobalState, runlog: RunLog, ctx, start: float) -> None:
    q = ctx.Queue()
    procs = [
        ctx.Process(target=_worker_main, args=(i, cfg, glob, q, start), name=f"learner-{i}", daemon=True)
        for i in range(cfg.workers)
    ]
    for p in procs:
        p.start()
    done: set[int] = set()
    failure = None
    try:
        while len(done) < len(procs) and failure is None:
            try:
                msg = q.get(timeout=0.5)
            except queue.Empty:
                for i, p in enumerate(procs):
                    if i not in done and not p.is_alive() and p.exitcode not in (0, None):
                        failure = f"learner {i} died with exit code {p.exitcode}"
                continue
            kind = msg[0]
            if kind == "episode":
                runlog.episode(msg[1])
            elif kind == "update":
                runlog.update(msg[1], msg[2])
            elif kind == "done":
                done.add(msg[1])
            elif kind == "error":
                failure = f"learner {msg[1]} crashed:\n{msg[2]}"
    finally:
        if failure is not None:
            glob.stop.value = 1
            for p in procs:
                p.terminate()
        for p in procs:
            p.join(timeout=10)
    if failure is not None:
        _save_partial(glob, runlog.out_dir)
        raise TrainingError(failure)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    scores: list[float]
    lengths: list[int]
    heatmap: np.ndarray

    @property
    def stats(self) -> dict:
        if not self.scores:
            return {"episodes": 0, "mean": None, "min": None, "max": None}
        s = np.asarray(self.scores)
        return {"episodes": len(s), "mean": float(s.mean()), "min": float(s.min()), "max": float(s.max())}


def evaluate(
    checkpoint,
    cfg: ExperimentConfig,
    episodes: int,
    seed: int | None = None,
    greedy: bool | None = None,
    force_visual_action: int | None = None,
) -> EvalResult:
    """Play ``episodes`` episodes without learning and count focal point visits."""
    params = checkpoint if isinstance(checkpoint, tc.ParamVector) else tc.load_checkpoint(checkpoint)
    if not params.same_layout(tc.ParamVector(pn.param_shapes(cfg.net))):
        raise tc.InvalidCheckpoint("checkpoint does not match the network configuration")
    greedy = cfg.eval_greedy if greedy is None else greedy
    env_seed, act_seed = worker_seeds(cfg.seed if seed is None else seed, 10_000)
    env = make_env(cfg, env_seed)
    rng = np.random.default_rng(act_seed)
    heat = np.zeros((SCREEN, SCREEN), dtype=np.int64)
    scores: list[float] = []
    lengths: list[int] = []
    for _ in range(episodes):
        frame = env.reset()
        state = pn.initial_lstm_state(cfg.net)
        fp = center_point()
        n = 0
        score = 0.0
        while True:
            heat[fp.fy, fp.fx] += 1
            out = pn.forward(apply_roi(frame, cfg.roi, fp), state, params, cfg.net)
            a_nat, a_vis = pn.greedy_actions(out) if greedy else pn.sample_actions(out, rng)
            if force_visual_action is not None:
                a_vis = force_visual_action
            if hasattr(env, "set_focal_point"):
                env.set_focal_point(fp)
            res = env.step(a_nat)
            fp = move_focal_point(fp, a_vis, cfg.visual_step)
            state = out.lstm_state
            frame = res.frame
            n += 1
            score = float(res.info.get("raw_score", score + res.reward))
            if res.terminal:
                break
        scores.append(score)
        lengths.append(n)
    return EvalResult(scores, lengths, heat)


def focal_point_of(worker: Worker) -> FocalPoint:
    return worker.focal_point
