import json
import os
import subprocess
import sys

import numpy as np
import pytest

from covplan import _kernels_py, kernels
from covplan.agent import EpisodeRow
from covplan.cli import main
from covplan.harness import (
    ConfigError,
    ExperimentConfig,
    emit_plotdata,
    load_config,
    milestone_episode,
    read_metrics_csv,
    run,
    smooth,
    summarize,
    sweep_combos,
)

TINY_AGENT = {"batch_size": 4, "buffer_capacity": 128, "train_start": 8, "conv1": 2,
              "conv2": 2, "fc": 8, "target_sync": 20, "eps_decay_steps": 50}


def write_toml(path, text):
    path.write_text(text)
    return path


def row(ep, cov, ovl=0.0, ret=0.0):
    return EpisodeRow(ep, 10, cov, ovl, ret, 0.0, 0.0)


# -- config ------------------------------------------------------------------


def test_load_config_overrides(tmp_path):
    cfg_path = write_toml(tmp_path / "c.toml", 'mode = "train"\nepisodes = 7\n[env]\neta = 0.8\n')
    cfg = load_config(cfg_path, noise=0.1, seeds=[3, 4], step_cap=50)
    assert cfg.agent["episodes"] == 7 and cfg.env["eta"] == 0.8
    assert cfg.env["noise"] == 0.1 and cfg.seeds == [3, 4] and cfg.env["step_cap"] == 50


@pytest.mark.parametrize("text", ['mode = "fly"\n', 'colour = 1\n', '[agent]\ngama = 0.9\n',
                                  '[env]\neta = 1.5\n', '[map]\nfile = "nope.txt"\n', 'mode = \n'])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write_toml(tmp_path / "bad.toml", text))


def test_config_hash_stable():
    a, b = ExperimentConfig(), ExperimentConfig()
    assert a.config_hash() == b.config_hash()
    b.seeds = [1]
    assert a.config_hash() != b.config_hash()


# -- summaries and plot data -------------------------------------------------


def test_milestone_and_summary():
    rows = [row(0, 50.0), row(1, 90.0, 30.0), row(2, 90.0, 10.0), row(3, 92.5, 5.0)]
    assert milestone_episode(rows) == 1
    assert milestone_episode(rows, overlap=25.0) == 2
    assert milestone_episode(rows, overlap=25.0, window=2) == 2
    assert milestone_episode(rows, overlap=15.0, window=2) == 3
    assert milestone_episode(rows, coverage=99.0) is None
    s = summarize(rows, tail_fraction=0.5)
    assert s["mean_coverage_pct"] == pytest.approx(91.25) and s["episodes_to_threshold"] == 1


def test_smooth_identity_and_mean():
    v = [1.0, 3.0, 5.0, 7.0]
    assert np.array_equal(smooth(v, 1), v)
    np.testing.assert_allclose(smooth(v, 2), [1.0, 2.0, 4.0, 6.0])


def test_plotdata_band(tmp_path):
    rng = np.random.default_rng(0)
    rows = {s: [row(i, float(rng.uniform(0, 100)), float(rng.uniform(0, 50)), float(rng.normal()))
                for i in range(30)] for s in range(3)}
    paths = emit_plotdata(rows, tmp_path, window=5)
    assert [p.name for p in paths] == ["coverage.csv", "overlap.csv", "return.csv"]
    data = np.loadtxt(paths[0], delimiter=",", skiprows=1)
    assert data.shape == (30, 4)
    assert np.all(data[:, 2] <= data[:, 1] + 1e-12) and np.all(data[:, 1] <= data[:, 3] + 1e-12)
    expected = np.mean([smooth([r.coverage_pct for r in rows[s]], 5) for s in range(3)], axis=0)
    np.testing.assert_allclose(data[:, 1], expected)


def test_sweep_combos():
    assert sweep_combos({"combos": [{"gamma": 0.9}]}) == [{"gamma": 0.9}]
    grid = {"gamma": [0.9, 0.99], "learning_rate": [1e-3, 1e-4, 1e-5]}
    assert len(sweep_combos({"grid": grid})) == 6
    picks = sweep_combos({"grid": grid, "max_combos": 4}, seed=1)
    assert len(picks) == 4 and picks == sweep_combos({"grid": grid, "max_combos": 4}, seed=1)
    with pytest.raises(ConfigError):
        sweep_combos({})


# -- runs --------------------------------------------------------------------


def test_zigzag_eval_on_empty_map(tmp_path):
    (tmp_path / "empty.txt").write_text("S....\n.....\n.....\n.....\n.....\n")
    cfg = load_config(None, mode="eval", method="zigzag", map=str(tmp_path / "empty.txt"),
                      out=str(tmp_path / "run"))
    cfg.env["eta"] = 1.0
    rec = run(cfg)
    assert rec.summary["mean_coverage_pct"] == 100.0 and rec.summary["mean_overlap_pct"] == 0.0
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["config_hash"] == rec.config_hash


def test_train_run_is_byte_deterministic(tmp_path):
    outs = []
    for i in range(2):
        cfg = ExperimentConfig(mode="train", seeds=[0, 1], out=str(tmp_path / f"r{i}"),
                               map={"file": "maze7.txt"}, env={"step_cap": 30},
                               agent={**TINY_AGENT, "episodes": 4, "eval_every": 2}).validate()
        run(cfg)
        outs.append(tmp_path / f"r{i}")
    for rel in ("seed_0/metrics.csv", "seed_1/metrics.csv", "seed_0/evals.csv", "plotdata/overlap.csv"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    rows = read_metrics_csv(outs[0] / "seed_0" / "metrics.csv")
    assert len(rows) == 4 and all(r.steps <= 30 for r in rows)
    assert (outs[0] / "seed_1" / "checkpoint.npz").exists()


def test_eval_from_checkpoint(tmp_path):
    train_cfg = ExperimentConfig(mode="train", out=str(tmp_path / "t"), env={"step_cap": 20},
                                 agent={**TINY_AGENT, "episodes": 2}).validate()
    run(train_cfg)
    cfg = ExperimentConfig(mode="eval", out=str(tmp_path / "e"), env={"step_cap": 20},
                           agent=dict(TINY_AGENT),
                           eval={"checkpoint": str(tmp_path / "t" / "seed_0" / "checkpoint.npz"),
                                 "episodes": 2}).validate()
    rec = run(cfg)
    assert len(rec.rows[0]) == 2
    bad = ExperimentConfig(mode="eval", out=str(tmp_path / "x"),
                           eval={"checkpoint": str(tmp_path / "t" / "seed_0" / "checkpoint.npz")}).validate()
    with pytest.raises(ConfigError):
        run(bad)


def test_bench_rows(tmp_path):
    cfg = ExperimentConfig(mode="bench", out=str(tmp_path / "b"), seeds=[0],
                           bench={"methods": ["zigzag", "ba_star"], "fixtures": ["maze7.txt", "maze15_a.txt"],
                                  "eval_episodes": 2}).validate()
    rec = run(cfg)
    assert len(rec.summary["rows"]) == 4
    lines = (tmp_path / "b" / "bench.csv").read_text().splitlines()
    assert lines[0] == "method,fixture,noise,coverage_pct,overlap_pct,episodes_to_threshold" and len(lines) == 5


def test_noise_study_rows(tmp_path):
    cfg = ExperimentConfig(mode="bench", out=str(tmp_path / "n"), map={"file": "maze15_a.txt"},
                           bench={"methods": ["ba_star"], "noise_levels": [0.0, 0.1],
                                  "eval_episodes": 3}).validate()
    rows = run(cfg).summary["rows"]
    assert [r["noise"] for r in rows] == [0.0, 0.1]


def test_sweep_single_combo(tmp_path):
    cfg = ExperimentConfig(mode="sweep", out=str(tmp_path / "s"), env={"step_cap": 15},
                           agent={**TINY_AGENT, "episodes": 3},
                           sweep={"combos": [{"learning_rate": 0.01}]}).validate()
    rec = run(cfg)
    assert len(rec.summary["rows"]) == 1
    assert len((tmp_path / "s" / "sweep.csv").read_text().splitlines()) == 2


def test_contraction_mode(tmp_path):
    cfg = ExperimentConfig(mode="contraction", out=str(tmp_path / "c"),
                           contraction={"mdps": 3, "iters": 400}).validate()
    rec = run(cfg)
    assert rec.summary["mdps"] == 3
    assert len((tmp_path / "c" / "rates.csv").read_text().splitlines()) == 402


# -- CLI ---------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    (tmp_path / "e.txt").write_text("S..\n...\n")
    assert main(["eval", "--method", "ba_star", "--map", str(tmp_path / "e.txt"), "--out", str(tmp_path / "o")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["out"] == str(tmp_path / "o")
    assert main(["eval", "--map", str(tmp_path / "missing.txt")]) == 2
    assert main(["eval", "--noise", "0.7", "--out", str(tmp_path / "o2")]) == 2
    assert main(["fly"]) == 2
    assert main(["train", "--seed", "x"]) == 2
    # rl eval without a checkpoint is a configuration problem
    assert main(["eval", "--method", "rl", "--out", str(tmp_path / "o3")]) == 2
    cfg = write_toml(tmp_path / "c.toml", '[sweep]\ncombos = [{learning_rate = -1.0}]\n')
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o4")]) == 2


def test_cli_runtime_failure(tmp_path, monkeypatch):
    import covplan.harness as h

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(h, "_run_eval", boom)
    monkeypatch.setitem(h.run.__globals__, "_run_eval", boom)
    assert main(["eval", "--method", "zigzag", "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "covplan", "eval", "--method", "zigzag",
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr


# -- kernel backends ---------------------------------------------------------


def test_backend_parity():
    rng = np.random.default_rng(0)
    x = rng.random((3, 5, 6, 4))
    cols = _kernels_py.im2col3x3(x)
    assert np.array_equal(kernels.im2col3x3(x), cols)
    assert np.array_equal(kernels.col2im3x3(cols, 4), _kernels_py.col2im3x3(cols, 4))
    t1, t2 = np.zeros(32), np.zeros(32)
    idx = rng.integers(0, 16, 40)
    val = rng.random(40)
    kernels.sumtree_set(t1, idx, val)
    _kernels_py.sumtree_set(t2, idx, val)
    assert np.array_equal(t1, t2)
    u = rng.random(100) * t1[1]
    assert np.array_equal(kernels.sumtree_find(t1, u), _kernels_py.sumtree_find(t2, u))


def test_pure_python_backend_selected_by_env():
    env = dict(os.environ, COVPLAN_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", "from covplan import kernels; print(kernels.BACKEND)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "python"
