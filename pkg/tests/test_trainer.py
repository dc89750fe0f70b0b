import numpy as np
import pytest

from foarl import policynet as pn
from foarl import tensorcore as tc
from foarl import trainer
from foarl.config import ExperimentConfig, model_roi
from foarl.fovea import VisualAction
from foarl.stubs import BanditStub
from foarl.trainer import GlobalState, TrainingError, Worker, evaluate, run_training, update_global

TINY = pn.NetConfig(conv_specs=((4, 8, 4), (4, 4, 2)), lstm_size=16)


def cfg_for(**kw):
    base = dict(env_name="bandit", net=TINY, mode="sequential", workers=1, T_max=200, checkpoint_every=0, lr=1e-3)
    base.update(kw)
    return ExperimentConfig(**base)


def one_param(x):
    p = tc.ParamVector({"x": (len(x),)})
    p["x"][...] = x
    return p


# ---- optimizer ---------------------------------------------------------------


def test_zero_gradient_fresh_moments():
    g = GlobalState(one_param([1.0, -2.0]))
    update_global(g, np.zeros(2))
    assert g.theta.flat.tolist() == [1.0, -2.0]
    assert not g.m.any() and not g.v.any()


def test_zero_gradient_decays_moments():
    g = GlobalState(one_param([1.0, -2.0]))
    update_global(g, np.array([0.5, -1.0]))
    m, v, vhat = g.m.copy(), g.v.copy(), g.vhat.copy()
    update_global(g, np.zeros(2))
    assert np.allclose(g.m, 0.9 * m, rtol=0, atol=1e-18)
    assert np.allclose(g.v, 0.999 * v, rtol=0, atol=1e-18)
    assert np.array_equal(g.vhat, vhat)


def test_first_step_is_lr():
    # f(x) = x^2 / 2 at x = 1 has gradient 1
    g = GlobalState(one_param([1.0]))
    update_global(g, np.array([1.0]), lr=1e-4)
    assert 1.0 - g.theta.flat[0] == pytest.approx(1e-4, rel=1e-6)


def test_vhat_monotone():
    rng = np.random.default_rng(0)
    g = GlobalState(one_param(rng.normal(size=6)))
    prev = g.vhat.copy()
    for _ in range(50):
        update_global(g, rng.normal(size=6) * rng.uniform(0, 3))
        assert np.all(g.vhat >= prev)
        prev = g.vhat.copy()


def test_clipping_and_shape_check():
    g = GlobalState(one_param([0.0, 0.0]))
    update_global(g, np.array([300.0, 400.0]), clip=40.0)
    assert np.allclose(g.m, 0.1 * np.array([24.0, 32.0]))
    with pytest.raises(tc.ContractViolation):
        update_global(g, np.zeros(3))


# ---- rollouts -------------------------------------------------------------------


def make_worker(cfg, wid=0):
    glob = GlobalState(pn.init_params(cfg.net, cfg.seed), T_max=cfg.T_max)
    w = Worker(wid, cfg, glob)
    w.sync()
    return w


def test_terminal_first_step_gives_length_one():
    w = make_worker(cfg_for())
    w.env = BanditStub(seed=0, episode_length=1)
    ro = w.collect_rollout()
    assert ro.buffer.k == 1 and ro.buffer.terminal
    assert ro.buffer.boot_nat == 0 and ro.buffer.boot_vis == 0
    assert len(ro.episodes) == 1


def test_full_rollout_bootstraps_from_forward():
    w = make_worker(cfg_for(env_name="gaze"))
    ro = w.collect_rollout()
    assert ro.buffer.k == 20 and not ro.buffer.terminal
    out = pn.forward(w.observe(), w.lstm, w.theta, TINY)
    assert ro.buffer.boot_nat == out.v_nat and ro.buffer.boot_vis == out.v_vis
    assert ro.buffer.overlap_ok()


def test_rollout_reproducible():
    bufs = [make_worker(cfg_for(env_name="gaze", seed=3)).collect_rollout().buffer for _ in range(2)]
    assert bufs[0].a_nat == bufs[1].a_nat and bufs[0].a_vis == bufs[1].a_vis
    assert bufs[0].v_vis == bufs[1].v_vis


def test_focal_point_and_lstm_reset_at_episode_start():
    cfg = cfg_for(env_name="gaze", model_name="Constant 50x50, sub2", roi=model_roi("Constant 50x50, sub2"))
    w = make_worker(cfg)
    w.env.episode_length = 30
    w.collect_rollout()
    lstm_mid = w.lstm
    assert np.any(lstm_mid[0] != 0)
    w.collect_rollout()  # finishes the 30-step episode
    assert w.frame is None
    w.start_episode()
    assert (w.focal_point.fx, w.focal_point.fy) == (40, 40)
    assert not w.lstm[0].any()


def test_lstm_state_carried_across_rollouts(monkeypatch):
    w = make_worker(cfg_for(env_name="gaze"))
    w.collect_rollout()
    carried = w.lstm
    seen = []
    orig = pn.forward

    def spy(frame, state, *a, **k):
        seen.append(state)
        return orig(frame, state, *a, **k)

    monkeypatch.setattr(trainer.pn, "forward", spy)
    w.collect_rollout()
    assert np.array_equal(seen[0][0], carried[0])


# ---- training runs ----------------------------------------------------------------


def test_zero_budget_returns_initialization(tmp_path):
    cfg = cfg_for(T_max=0)
    res = run_training(cfg, tmp_path)
    init = pn.init_params(cfg.net, cfg.seed)
    assert res.T == 0 and not res.updates
    assert np.array_equal(tc.load_checkpoint(tmp_path / "final.fvrl").flat, init.flat)


def test_sequential_runs_are_bit_identical(tmp_path):
    cfg = cfg_for(env_name="gaze", T_max=400, workers=2, model_name="Constant 50x50, sub2",
                  roi=model_roi("Constant 50x50, sub2"))
    run_training(cfg, tmp_path / "a")
    run_training(cfg, tmp_path / "b")
    for name in ("final.fvrl", "episodes.csv", "updates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("mode", ["sequential", "async-mutex", "async-lockfree"])
def test_step_accounting(tmp_path, mode):
    cfg = cfg_for(mode=mode, workers=3, T_max=310, t_max=7)
    res = run_training(cfg, tmp_path)
    assert cfg.T_max <= res.T < cfg.T_max + cfg.workers * cfg.t_max
    assert {e["worker"] for e in res.episodes} <= {0, 1, 2}
    assert [e["episode"] for e in res.episodes] == list(range(len(res.episodes)))
    assert all(np.isfinite(u["L_total"]) for u in res.updates)
    header = (tmp_path / "episodes.csv").read_text().splitlines()[0]
    assert header == "episode,worker,steps,raw_score,clipped_return,wall_ms"
    header = (tmp_path / "updates.csv").read_text().splitlines()[0]
    assert header == "update,T,L_total,L_policy_nat,L_value_nat,L_policy_vis,L_value_vis"


def test_periodic_checkpoint(tmp_path):
    run_training(cfg_for(T_max=100, checkpoint_every=40), tmp_path)
    assert (tmp_path / "checkpoint.fvrl").exists()


def test_worker_crash_aborts_with_partial_checkpoint(tmp_path, monkeypatch):
    calls = {"n": 0}
    orig = Worker.train_once

    def flaky(self):
        calls["n"] += 1
        if calls["n"] > 2:
            raise RuntimeError("boom")
        return orig(self)

    monkeypatch.setattr(Worker, "train_once", flaky)
    with pytest.raises(TrainingError, match="boom"):
        run_training(cfg_for(mode="async-lockfree", workers=2, T_max=10_000), tmp_path)
    assert tc.load_checkpoint(tmp_path / "partial.fvrl").size == pn.init_params(TINY).size


def test_target_score_stops_early():
    # every bandit episode scores about 5 under a uniform policy
    res = run_training(cfg_for(T_max=100_000, target_score=1.0))
    assert res.stopped_early and res.T < 100_000 and len(res.episodes) >= 100


# ---- evaluation -------------------------------------------------------------------


def test_evaluate_zero_episodes():
    res = evaluate(pn.init_params(TINY), cfg_for(), 0)
    assert res.stats == {"episodes": 0, "mean": None, "min": None, "max": None}
    assert res.heatmap.shape == (80, 80) and not res.heatmap.any()


def test_evaluate_grid_total_and_stay():
    cfg = cfg_for(env_name="gaze")
    res = evaluate(pn.init_params(TINY), cfg, 3)
    assert res.heatmap.sum() == sum(res.lengths) == 120
    assert res.heatmap.dtype.kind == "i"
    assert np.count_nonzero(res.heatmap) > 1
    res = evaluate(pn.init_params(TINY), cfg, 2, force_visual_action=VisualAction.STAY)
    assert np.count_nonzero(res.heatmap) == 1 and res.heatmap[40, 40] == sum(res.lengths)


def test_evaluate_layout_mismatch(tmp_path):
    tc.save_checkpoint(pn.init_params(pn.NetConfig(lstm_size=8)), tmp_path / "c.fvrl")
    with pytest.raises(tc.InvalidCheckpoint):
        evaluate(tmp_path / "c.fvrl", cfg_for(), 1)


def test_bandit_learns_quickly():
    res = run_training(cfg_for(T_max=3000, workers=2))
    scores = [e["raw_score"] for e in res.episodes]
    assert np.mean(scores[-10:]) > np.mean(scores[:10])
