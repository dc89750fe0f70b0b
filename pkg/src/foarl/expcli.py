"""Command-line harness: config files, training, evaluation and learning curves.

Config files are flat ``key=value`` text, one key per line, ``#`` starts a
comment. Every key has a default, so an empty file is a complete config.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .advantage import Hyper
from .config import CATALOG, CUSTOM, ExperimentConfig, canonical_model_name, catalog_name_for, model_roi
from .envkit import EnvConfig
from .fovea import InvalidConfig, RoiConfig, write_pgm
from .policynet import NetConfig, init_params
from .trainer import TrainingError, evaluate, run_training

log = logging.getLogger("foarl")

CURVE_WINDOW = 100
EXIT_ERROR = 1
EXIT_IO = 2
EXIT_BAD_CSV = 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# value codecs


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _int(s: str) -> int:
    s = s.strip().replace("_", "")
    try:
        return int(s)
    except ValueError:
        f = float(s)
        if not f.is_integer():
            raise ValueError(f"expected an integer, got {s!r}") from None
        return int(f)


def _optional_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _triples(s: str) -> tuple[tuple[int, int, int], ...]:
    # "30x30/1, 50x50/2" for focal layers, "16x8/4" for conv layers
    out = []
    for part in s.split(","):
        part = part.strip()
        size, _, third = part.partition("/")
        a, _, b = size.partition("x")
        if not (a and b and third):
            raise ValueError(f"expected AxB/C, got {part!r}")
        out.append((_int(a), _int(b), _int(third)))
    return tuple(out)


def _fmt_triples(t) -> str:
    return ", ".join(f"{a}x{b}/{c}" for a, b, c in t)


def _pair(s: str) -> tuple[int, int]:
    lo, _, hi = s.partition(",")
    return _int(lo), _int(hi)


# key -> (parser, getter from ExperimentConfig, formatter)
KEYS = {
    "model_name": (str.strip, lambda c: c.model_name, str),
    "env": (str.strip, lambda c: c.env_name, str),
    "roi_layers": (_triples, lambda c: c.roi.layers, _fmt_triples),
    "roi_peripheral": (_bool, lambda c: c.roi.peripheral, str),
    "peripheral_grid": (_int, lambda c: c.roi.peripheral_grid, str),
    "edge_mode": (str.strip, lambda c: c.roi.edge_mode, str),
    "gamma": (float, lambda c: c.hyper.gamma, repr),
    "lambda": (float, lambda c: c.hyper.lam, repr),
    "beta": (float, lambda c: c.hyper.beta, repr),
    "value_coef": (float, lambda c: c.hyper.value_coef, repr),
    "vis_bootstrap_exponent": (str.strip, lambda c: c.hyper.vis_bootstrap_exponent, str),
    "lr": (float, lambda c: c.lr, repr),
    "adam_beta1": (float, lambda c: c.adam_beta1, repr),
    "adam_beta2": (float, lambda c: c.adam_beta2, repr),
    "adam_eps": (float, lambda c: c.adam_eps, repr),
    "grad_clip": (float, lambda c: c.grad_clip, repr),
    "t_max": (_int, lambda c: c.t_max, str),
    "T_max": (_int, lambda c: c.T_max, str),
    "workers": (_int, lambda c: c.workers, str),
    "seed": (_int, lambda c: c.seed, str),
    "mode": (str.strip, lambda c: c.mode, str),
    "visual_step": (_int, lambda c: c.visual_step, str),
    "checkpoint_every": (_int, lambda c: c.checkpoint_every, str),
    "log_every": (_int, lambda c: c.log_every, str),
    "target_score": (_optional_float, lambda c: c.target_score, lambda v: "none" if v is None else repr(v)),
    "eval_greedy": (_bool, lambda c: c.eval_greedy, str),
    "conv_layers": (_triples, lambda c: c.net.conv_specs, _fmt_triples),
    "lstm_size": (_int, lambda c: c.net.lstm_size, str),
    "frame_skip": (_int, lambda c: c.env.frame_skip, str),
    "max_pool_screens": (_bool, lambda c: c.env.max_pool_screens, str),
    "noop_range": (_pair, lambda c: c.env.noop_range, lambda v: f"{v[0]},{v[1]}"),
    "clip_rewards": (_bool, lambda c: c.env.clip_rewards, str),
    "life_loss_terminal": (_bool, lambda c: c.env.life_loss_terminal, str),
    "fire_on_reset": (_bool, lambda c: c.env.fire_on_reset, str),
    "episode_cap": (_int, lambda c: c.env.episode_cap, str),
}


def build_config(values: dict, partial: bool = False) -> ExperimentConfig:
    """Assemble a validated config from already-parsed key values.

    With ``partial`` a custom model may still be waiting for its layers.
    """
    d = ExperimentConfig()
    get = lambda key: values.get(key, KEYS[key][1](d))  # noqa: E731

    if "roi_layers" in values or "roi_peripheral" in values:
        layers = values.get("roi_layers")
        peripheral = values.get("roi_peripheral")
        if "model_name" in values and values["model_name"] != CUSTOM:
            base = model_roi(values["model_name"])
            layers = base.layers if layers is None else layers
            peripheral = base.peripheral if peripheral is None else peripheral
        layers = d.roi.layers if layers is None else layers
        peripheral = False if peripheral is None else peripheral
        roi = RoiConfig(layers, peripheral, get("peripheral_grid"), get("edge_mode"))
        model = values.get("model_name", catalog_name_for(roi))
    else:
        model = canonical_model_name(get("model_name"))
        if model == CUSTOM:
            if not partial:
                raise ConfigError("model_name=custom needs roi_layers")
            values = {k: v for k, v in values.items() if k != "model_name"}
            model = d.model_name
        roi = model_roi(model, get("peripheral_grid"), get("edge_mode"))
    if model != CUSTOM:
        model = canonical_model_name(model)

    hyper = Hyper(get("gamma"), get("lambda"), get("beta"), get("value_coef"), get("vis_bootstrap_exponent"))
    env = EnvConfig(
        frame_skip=get("frame_skip"), max_pool_screens=get("max_pool_screens"), noop_range=get("noop_range"),
        clip_rewards=get("clip_rewards"), life_loss_terminal=get("life_loss_terminal"),
        fire_on_reset=get("fire_on_reset"), episode_cap=get("episode_cap"),
    )
    net = NetConfig(conv_specs=tuple((o, k, s) for o, k, s in get("conv_layers")), lstm_size=get("lstm_size"))
    return ExperimentConfig(
        model_name=model, env_name=get("env"), env=env, roi=roi, net=net, hyper=hyper,
        lr=get("lr"), adam_beta1=get("adam_beta1"), adam_beta2=get("adam_beta2"), adam_eps=get("adam_eps"),
        grad_clip=get("grad_clip"), t_max=get("t_max"), T_max=get("T_max"), workers=get("workers"),
        seed=get("seed"), mode=get("mode"), visual_step=get("visual_step"),
        checkpoint_every=get("checkpoint_every"), log_every=get("log_every"),
        target_score=get("target_score"), eval_greedy=get("eval_greedy"),
    )


def parse_config_text(text: str, source: str = "<config>", env: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            parsed = KEYS[key][0](value)
            # catch range errors here so they carry the line number
            build_config({**values, key: parsed}, partial=True)
        except (ValueError, InvalidConfig, KeyError) as exc:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key}: {exc}") from None
        values[key] = parsed

    env = os.environ if env is None else env
    if env.get("FOVEA_SEED"):
        try:
            values["seed"] = _int(env["FOVEA_SEED"])
        except ValueError:
            raise ConfigError(f"FOVEA_SEED is not an integer: {env['FOVEA_SEED']!r}") from None
    try:
        return build_config(values)
    except (ValueError, InvalidConfig) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path: str | Path, env: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path), env)


def emit_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, (_, getter, fmt) in KEYS.items():
        if key in ("roi_layers", "roi_peripheral") and cfg.model_name != CUSTOM:
            continue
        lines.append(f"{key}={fmt(getter(cfg))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands


def _writable_dir(out_dir: Path) -> bool:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError:
        return False
    return os.access(out_dir, os.W_OK | os.X_OK)


def cmd_train(config_path, out_dir) -> int:
    out = Path(out_dir)
    try:
        cfg = parse_config(config_path)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    if not _writable_dir(out):
        log.error("output directory %s is not writable", out)
        return EXIT_IO
    (out / "config.txt").write_text(emit_config(cfg))
    if cfg.T_max == 0:
        tc.save_checkpoint(init_params(cfg.net, cfg.seed), out / "checkpoint.fvrl")
    try:
        res = run_training(cfg, out)
    except TrainingError as exc:
        log.error("training aborted: %s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    log.info("trained %d steps, %d episodes in %.1fs", res.T, len(res.episodes), res.seconds)
    return 0


def cmd_eval(config_path, checkpoint, episodes: int, out_dir, seed: int | None = None) -> int:
    out = Path(out_dir)
    try:
        cfg = parse_config(config_path)
        if episodes < 0:
            raise ConfigError("episodes must be >= 0")
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    if not _writable_dir(out):
        log.error("output directory %s is not writable", out)
        return EXIT_IO
    try:
        res = evaluate(checkpoint, cfg, episodes, seed=seed)
    except (tc.InvalidCheckpoint, OSError) as exc:
        log.error("cannot evaluate %s: %s", checkpoint, exc)
        return EXIT_ERROR
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "score", "steps"])
        for i, (s, n) in enumerate(zip(res.scores, res.lengths)):
            w.writerow([i, s, n])
    np.savetxt(out / "heatmap.csv", res.heatmap, fmt="%d", delimiter=",")
    write_pgm(out / "heatmap.pgm", heatmap_image(res.heatmap))
    st = res.stats
    if st["episodes"]:
        log.info("%d episodes: mean %.2f min %.0f max %.0f", st["episodes"], st["mean"], st["min"], st["max"])
    return 0


def heatmap_image(counts: np.ndarray) -> np.ndarray:
    """Counts rescaled linearly to [0, 1]; an empty grid stays black."""
    top = counts.max()
    return counts / top if top > 0 else np.zeros(counts.shape)


def sliding_mean(scores, window: int = CURVE_WINDOW) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return scores
    if len(scores) < window:
        return np.array([scores.mean()])
    c = np.concatenate([[0.0], np.cumsum(scores)])
    return (c[window:] - c[:-window]) / window


def read_scores(path: Path) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "raw_score" not in rows[0]:
        raise ValueError("missing header with raw_score column")
    col = rows[0].index("raw_score")
    scores = []
    for i, row in enumerate(rows[1:], 2):
        if len(row) != len(rows[0]):
            raise ValueError(f"line {i}: expected {len(rows[0])} fields, got {len(row)}")
        v = float(row[col])
        if not math.isfinite(v):
            raise ValueError(f"line {i}: non-finite score")
        scores.append(v)
    return scores


def cmd_curve(run_dir) -> int:
    run = Path(run_dir)
    try:
        scores = read_scores(run / "episodes.csv")
    except OSError as exc:
        log.error("cannot read episode log: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("malformed episode log: %s", exc)
        return EXIT_BAD_CSV
    curve = sliding_mean(scores)
    # a curve point is indexed by the last episode in its window
    first = min(len(scores), CURVE_WINDOW) - 1
    try:
        with open(run / "curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "mean_score"])
            for i, v in enumerate(curve):
                w.writerow([first + i, repr(float(v))])
    except OSError as exc:
        log.error("cannot write curve: %s", exc)
        return EXIT_IO
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="foarl", description="Foveated A3C agents on a toy Breakout.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("train", help="train a model and write logs and checkpoints")
    p.add_argument("config")
    p.add_argument("out_dir")
    p = sub.add_parser("eval", help="evaluate a checkpoint and write scores and a heat map")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("episodes", type=int)
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("curve", help="sliding-window learning curve from a run directory")
    p.add_argument("run_dir")
    p = sub.add_parser("models", help="list the catalog models")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.cmd == "train":
        return cmd_train(args.config, args.out_dir)
    if args.cmd == "eval":
        return cmd_eval(args.config, args.checkpoint, args.episodes, args.out_dir, args.seed)
    if args.cmd == "curve":
        return cmd_curve(args.run_dir)
    for name, (layers, peripheral) in CATALOG.items():
        print(f"{name:28s} layers={_fmt_triples(layers)} peripheral={peripheral}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
