import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foarl import tensorcore as tc
from foarl.config import CATALOG, CATALOG_PIXELS, ExperimentConfig, canonical_model_name, slug
from foarl.expcli import (
    ConfigError, cmd_curve, cmd_eval, cmd_train, emit_config, main, parse_config, parse_config_text, sliding_mean,
)
from foarl.fovea import read_pgm, visible_pixel_count

TINY = "conv_layers=4x8/4, 4x4/2\nlstm_size=8\n"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""), env={})
    assert cfg == ExperimentConfig()
    assert (cfg.hyper.gamma, cfg.hyper.lam, cfg.hyper.beta, cfg.lr, cfg.t_max) == (0.99, 0.92, 0.01, 1e-4, 20)
    assert cfg.env.frame_skip == 4 and cfg.env.noop_range == (0, 30) and cfg.workers == 8


def test_model_name_expands():
    cfg = parse_config_text("model_name=Constant 70x70, sub2", env={})
    assert cfg.roi.layers == ((70, 70, 2),) and not cfg.roi.peripheral
    cfg = parse_config_text("model_name = decreasing_p_30_50_70  # slug form", env={})
    assert cfg.model_name == "Decreasing(P) 30-50-70"
    assert cfg.roi.layers == ((30, 30, 1), (50, 50, 2), (70, 70, 4)) and cfg.roi.peripheral


def test_custom_layers():
    cfg = parse_config_text("roi_layers=20x20/1, 60x40/2\nroi_peripheral=yes", env={})
    assert cfg.model_name == "custom" and cfg.roi.layers == ((20, 20, 1), (60, 40, 2)) and cfg.roi.peripheral
    cfg = parse_config_text("roi_layers=70x70/2", env={})
    assert cfg.model_name == "Constant 70x70, sub2"


@pytest.mark.parametrize("text, line", [
    ("gamma=1.5", 1), ("# c\n\nlr=0.1\nbogus=3", 4), ("t_max=abc", 1), ("model_name=Square 10", 1),
    ("mode=threads", 1), ("roi_layers=50x50/0", 1), ("just words", 1), ("lambda=0.5\nworkers=0", 2),
    ("model_name=Constant 70x70, sub2\nroi_layers=50x50/1", 2),
])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f":{line}:"):
        parse_config_text(text, env={})


def test_gamma_range_message():
    with pytest.raises(ConfigError, match="gamma"):
        parse_config_text("gamma=1.5", env={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")


def test_seed_override(tmp_path):
    assert parse_config_text("seed=3", env={"FOVEA_SEED": "11"}).seed == 11
    assert parse_config_text("seed=3", env={}).seed == 3


def test_catalog_fidelity():
    for name in CATALOG:
        for form in (name, slug(name)):
            cfg = parse_config_text(f"model_name={form}", env={})
            assert visible_pixel_count(cfg.roi) == CATALOG_PIXELS[name]
        assert canonical_model_name(slug(name)) == name


configs = st.builds(
    lambda name, gamma, lam, lr, T, workers, mode, seed, target, grid, lstm, noop: parse_config_text(
        f"model_name={name}\ngamma={gamma!r}\nlambda={lam!r}\nlr={lr!r}\nT_max={T}\nworkers={workers}\n"
        f"mode={mode}\nseed={seed}\ntarget_score={target}\nperipheral_grid={grid}\nlstm_size={lstm}\n"
        f"noop_range=0,{noop}", env={}),
    st.sampled_from(list(CATALOG)), st.floats(0, 1), st.floats(0, 1), st.floats(1e-8, 1),
    st.integers(0, 10**7), st.integers(1, 64), st.sampled_from(["sequential", "async-mutex", "async-lockfree"]),
    st.integers(0, 2**31), st.sampled_from(["none", "4.2", "10"]), st.sampled_from([1, 2, 4, 5, 8]),
    st.integers(1, 512), st.integers(0, 40),
)


@settings(max_examples=60, deadline=None)
@given(configs)
def test_emit_parse_roundtrip(cfg):
    assert parse_config_text(emit_config(cfg), env={}) == cfg


def test_roundtrip_custom():
    cfg = parse_config_text("roi_layers=10x10/1, 30x20/3\nedge_mode=crop", env={})
    assert parse_config_text(emit_config(cfg), env={}) == cfg


# ---- commands ---------------------------------------------------------------------


def test_train_zero_budget(tmp_path):
    cfg = write(tmp_path, TINY + "T_max=0\nmode=sequential\nworkers=1")
    assert cmd_train(cfg, tmp_path / "out") == 0
    assert (tmp_path / "out" / "checkpoint.fvrl").exists() and (tmp_path / "out" / "final.fvrl").exists()


def test_train_twice_identical(tmp_path):
    cfg = write(tmp_path, TINY + "env=bandit\nT_max=200\nmode=sequential\nworkers=1\nseed=4\nlr=1e-3")
    assert cmd_train(cfg, tmp_path / "a") == 0
    assert cmd_train(cfg, tmp_path / "b") == 0
    assert (tmp_path / "a/episodes.csv").read_bytes() == (tmp_path / "b/episodes.csv").read_bytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_train_unwritable(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    assert cmd_train(write(tmp_path, TINY + "T_max=0"), ro / "out") == 2


def test_train_out_dir_is_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cmd_train(write(tmp_path, TINY + "T_max=0"), blocker / "out") == 2


def test_train_bad_config_nonzero(tmp_path):
    assert cmd_train(write(tmp_path, "gamma=2"), tmp_path / "out") != 0


@pytest.fixture
def trained(tmp_path):
    cfg = write(tmp_path, TINY + "env=gaze\nT_max=0\nmode=sequential\nworkers=1\nmodel_name=Constant 50x50, sub2")
    cmd_train(cfg, tmp_path / "run")
    return cfg, tmp_path / "run" / "final.fvrl"


def test_eval_zero_episodes(tmp_path, trained):
    cfg, ckpt = trained
    assert cmd_eval(cfg, ckpt, 0, tmp_path / "ev") == 0
    assert (tmp_path / "ev/scores.csv").read_text() == "episode,score,steps\n"
    assert not np.loadtxt(tmp_path / "ev/heatmap.csv", delimiter=",").any()


def test_eval_conservation_and_dispersion(tmp_path, trained):
    cfg, ckpt = trained
    assert cmd_eval(cfg, ckpt, 3, tmp_path / "ev") == 0
    counts = np.loadtxt(tmp_path / "ev/heatmap.csv", delimiter=",", dtype=np.int64)
    rows = np.loadtxt(tmp_path / "ev/scores.csv", delimiter=",", skiprows=1, ndmin=2)
    assert counts.shape == (80, 80) and counts.sum() == rows[:, 2].sum()
    # a near-uniform visual policy random-walks away from the start cell
    assert np.count_nonzero(counts) > 1
    img = read_pgm(tmp_path / "ev/heatmap.pgm")
    assert img.max() == 1.0 and np.array_equal(np.round(img * 255), np.round(counts / counts.max() * 255))


def test_eval_mismatched_checkpoint(tmp_path, trained):
    cfg, _ = trained
    tc.save_checkpoint(tc.ParamVector({"a": (2,)}), tmp_path / "bad.fvrl")
    assert cmd_eval(cfg, tmp_path / "bad.fvrl", 1, tmp_path / "ev") != 0


def write_episodes(run, scores):
    run.mkdir(exist_ok=True)
    lines = ["episode,worker,steps,raw_score,clipped_return,wall_ms"]
    lines += [f"{i},0,10,{s},{s},0" for i, s in enumerate(scores)]
    (run / "episodes.csv").write_text("\n".join(lines) + "\n")


def read_curve(run):
    return np.loadtxt(run / "curve.csv", delimiter=",", skiprows=1, ndmin=2)


def test_curve_examples(tmp_path):
    write_episodes(tmp_path / "a", [3.0] * 150)
    assert cmd_curve(tmp_path / "a") == 0
    c = read_curve(tmp_path / "a")
    assert np.all(c[:, 1] == 3.0) and len(c) == 51 and c[0, 0] == 99

    write_episodes(tmp_path / "b", [1, 2, 3, 6])
    assert cmd_curve(tmp_path / "b") == 0
    assert read_curve(tmp_path / "b").tolist() == [[3.0, 3.0]]

    write_episodes(tmp_path / "c", range(1, 201))
    assert cmd_curve(tmp_path / "c") == 0
    assert read_curve(tmp_path / "c")[-1, 1] == 150.5


@given(st.lists(st.integers(0, 50), min_size=1, max_size=300))
@settings(max_examples=40, deadline=None)
def test_sliding_mean_matches_direct(scores):
    got = sliding_mean(scores)
    if len(scores) < 100:
        assert got.tolist() == pytest.approx([np.mean(scores)])
    else:
        ref = [np.mean(scores[i - 99:i + 1]) for i in range(99, len(scores))]
        assert np.allclose(got, ref, atol=1e-9)


@pytest.mark.parametrize("body", ["episode,worker\n0,1\n", "episode,worker,steps,raw_score,clipped_return,wall_ms\n0,0,1,abc,0,0\n",
                                  "episode,worker,steps,raw_score,clipped_return,wall_ms\n0,0,1\n", ""])
def test_curve_malformed(tmp_path, body):
    (tmp_path / "episodes.csv").write_text(body)
    assert cmd_curve(tmp_path) == 3


def test_main_dispatch(tmp_path, capsys):
    assert main(["models"]) == 0
    assert "Decreasing(P) 30-50-70" in capsys.readouterr().out
    write_episodes(tmp_path, [1.0] * 5)
    assert main(["curve", str(tmp_path)]) == 0
