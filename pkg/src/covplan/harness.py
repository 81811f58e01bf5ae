"""Experiment orchestration: configs, runs, benchmarks, sweeps, plot data.

Config files are TOML. Top-level keys pick the mode and seeds; tables
``[map]``, ``[env]``, ``[encoder]``, ``[agent]``, ``[eval]``, ``[bench]``,
``[sweep]``, ``[contraction]`` and ``[plot]`` hold the rest (see README).
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from covplan import contraction as lab
from covplan.agent import (
    EpisodeRow,
    TrainConfig,
    episode_seed,
    evaluate,
    make_agent,
    run_episode,
    train,
    write_metrics_csv,
)
from covplan.encoder import Encoder, EncoderConfig
from covplan.env import (
    ActionSet,
    CoverageEnv,
    EpisodeConfig,
    GridMap,
    MapGenParams,
    SensorModel,
    generate_map,
    load_map,
)
from covplan.net import load_checkpoint, save_checkpoint
from covplan.planners import ba_star_episode, zigzag_episode

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

MODES = ("train", "eval", "bench", "sweep", "contraction")
METHODS = ("rl", "hybrid", "zigzag", "ba_star")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "train"
    method: str = "rl"
    seeds: List[int] = field(default_factory=lambda: [0])
    out: str = "runs/default"
    map: Dict[str, Any] = field(default_factory=lambda: {"file": "maze7.txt"})
    env: Dict[str, Any] = field(default_factory=dict)
    encoder: Dict[str, Any] = field(default_factory=dict)
    agent: Dict[str, Any] = field(default_factory=dict)
    eval: Dict[str, Any] = field(default_factory=dict)
    bench: Dict[str, Any] = field(default_factory=dict)
    sweep: Dict[str, Any] = field(default_factory=dict)
    contraction: Dict[str, Any] = field(default_factory=dict)
    plot: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if "file" in self.map:
            resolve_map_path(self.map["file"])
        try:
            TrainConfig.from_dict(self.agent)
            self.episode_config()
            self.sensor_model()
            self.action_set()
            EncoderConfig(**self.encoder)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # -- builders ----------------------------------------------------------
    def episode_config(self) -> EpisodeConfig:
        e = self.env
        return EpisodeConfig(
            eta=float(e.get("eta", 0.9)),
            step_cap=int(e.get("step_cap", 1000)),
            overlap_penalty=float(e.get("overlap_penalty", 0.5)),
            bump_penalty=e.get("bump_penalty"),
        )

    def sensor_model(self, noise=None) -> SensorModel:
        rho = self.env.get("noise", 0.0) if noise is None else noise
        return SensorModel(flip_prob=float(rho), range=int(self.env.get("sensor_range", 1)))

    def action_set(self) -> ActionSet:
        cost = self.env.get("action_cost")
        if cost is not None:
            cost = {int(k): float(v) for k, v in cost.items()}
        return ActionSet(mode=self.env.get("actions", "cardinal"), action_cost=cost)

    def build_env(self, grid: Optional[GridMap] = None, noise=None) -> CoverageEnv:
        grid = grid if grid is not None else build_map(self.map)
        return CoverageEnv(grid, self.episode_config(), self.sensor_model(noise), self.action_set())

    def train_config(self, **overrides) -> TrainConfig:
        d = dict(self.agent)
        d.update(overrides)
        return TrainConfig.from_dict(d)

    def encoder_obj(self) -> Encoder:
        return Encoder(EncoderConfig(**self.encoder))

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None, **overrides) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from exc
    if "episodes" in data:
        data.setdefault("agent", {})["episodes"] = data.pop("episodes")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**data)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "episodes":
            cfg.agent["episodes"] = int(value)
        elif key == "step_cap":
            cfg.env["step_cap"] = int(value)
        elif key == "noise":
            cfg.env["noise"] = float(value)
        elif key == "map":
            cfg.map = {"file": str(value)}
        elif key == "seeds":
            cfg.seeds = [int(s) for s in value]
        else:
            setattr(cfg, key, value)
    return cfg.validate()


def resolve_map_path(name) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    packaged = resources.files("covplan") / "fixtures" / str(name)
    if packaged.is_file():
        return Path(str(packaged))
    raise ConfigError(f"map file not found: {name}")


def load_fixture(name: str) -> GridMap:
    return load_map(resolve_map_path(name).read_text())


def build_map(spec: Dict[str, Any]) -> GridMap:
    if "file" in spec:
        return load_fixture(spec["file"])
    try:
        return generate_map(MapGenParams(
            width=int(spec["width"]), height=int(spec["height"]),
            obstacle_density=float(spec.get("density", 0.2)),
            obstacle_shape=spec.get("shape", "cells"),
            max_rect_w=int(spec.get("max_rect_w", 3)), max_rect_h=int(spec.get("max_rect_h", 3)),
            seed=int(spec.get("seed", 0)),
        ))
    except KeyError as exc:
        raise ConfigError(f"map generator needs {exc}") from exc


# ---------------------------------------------------------------------------
# records and summaries


@dataclass
class RunRecord:
    config_hash: str
    rows: Dict[int, List[EpisodeRow]]
    summary: Dict[str, Any]
    extra: Dict[str, Any] = field(default_factory=dict)


def milestone_episode(rows: List[EpisodeRow], coverage: float = 90.0,
                      overlap: Optional[float] = None, window: int = 1) -> Optional[int]:
    """First episode whose trailing-window means meet the milestone."""
    cov = np.array([r.coverage_pct for r in rows])
    ovl = np.array([r.overlap_pct for r in rows])
    for i in range(window - 1, len(rows)):
        sl = slice(i - window + 1, i + 1)
        if cov[sl].mean() >= coverage - 1e-9 and (overlap is None or ovl[sl].mean() < overlap):
            return rows[i].episode
    return None


def summarize(rows: List[EpisodeRow], tail_fraction: float = 0.1) -> Dict[str, Any]:
    n = max(1, int(round(len(rows) * tail_fraction)))
    tail = rows[-n:]
    return {
        "episodes": len(rows),
        "mean_coverage_pct": float(np.mean([r.coverage_pct for r in tail])),
        "mean_overlap_pct": float(np.mean([r.overlap_pct for r in tail])),
        "mean_return": float(np.mean([r.ret for r in tail])),
        "episodes_to_threshold": milestone_episode(rows),
    }


def read_metrics_csv(path) -> List[EpisodeRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [
            EpisodeRow(int(d["episode"]), int(d["steps"]), float(d["coverage_pct"]),
                       float(d["overlap_pct"]), float(d["return"]), float(d["epsilon"]),
                       float(d["loss_mean"]))
            for d in rd
        ]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _write_rows(path: Path, header: List[str], rows: List[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------------------
# controllers


def controller_episode(method: str, env: CoverageEnv, seed, agent=None):
    state = env.reset(seed=seed)
    if method == "zigzag":
        return zigzag_episode(state)
    if method == "ba_star":
        return ba_star_episode(state)
    if agent is None:
        raise ConfigError(f"method {method!r} needs a trained agent or checkpoint")
    return run_episode(method, state, agent, training=False, eps=0.0)[0]


def result_row(ep: int, res) -> EpisodeRow:
    return EpisodeRow(ep, res.steps, res.coverage_pct, res.overlap_pct, res.total_return, 0.0, float("nan"))


def evaluate_method(method: str, env: CoverageEnv, episodes: int, seed: int, agent=None) -> List[EpisodeRow]:
    return [
        result_row(ep, controller_episode(method, env, episode_seed(seed, ep, salt=2), agent))
        for ep in range(episodes)
    ]


def train_and_eval(method: str, env: CoverageEnv, tcfg: TrainConfig, seed: int, eval_episodes: int,
                   encoder: Optional[Encoder] = None, eval_env: Optional[CoverageEnv] = None):
    """Returns (training rows, evaluation rows, agent) for rl/hybrid; for the
    scripted controllers training rows are empty."""
    if method in ("zigzag", "ba_star"):
        return [], evaluate_method(method, eval_env or env, eval_episodes, seed), None
    res = train(env, tcfg, seed=seed, method=method, encoder=encoder)
    evals = evaluate_method(method, eval_env or env, eval_episodes, seed, res.agent)
    return res.rows, evals, res.agent


# ---------------------------------------------------------------------------
# modes


def run(cfg: ExperimentConfig) -> RunRecord:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    handler = {
        "train": _run_train,
        "eval": _run_eval,
        "bench": _run_bench,
        "sweep": _run_sweep,
        "contraction": _run_contraction,
    }[cfg.mode]
    record = handler(cfg, out)
    _write_json(out / "summary.json", {"config_hash": record.config_hash, **record.summary})
    return record


def _run_train(cfg: ExperimentConfig, out: Path) -> RunRecord:
    if cfg.method not in ("rl", "hybrid"):
        raise ConfigError("train mode needs method 'rl' or 'hybrid'")
    env = cfg.build_env()
    tcfg = cfg.train_config()
    rows, per_seed, evals = {}, {}, {}
    for seed in cfg.seeds:
        log.info("training %s seed %d for %d episodes", cfg.method, seed, tcfg.episodes)
        res = train(env, tcfg, seed=seed, method=cfg.method, encoder=cfg.encoder_obj())
        sdir = out / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        write_metrics_csv(sdir / "metrics.csv", res.rows)
        if res.evals:
            _write_rows(sdir / "evals.csv", ["episode", "coverage_pct", "overlap_pct", "steps", "return"],
                        [list(e) for e in res.evals])
        save_checkpoint(sdir / "checkpoint.npz", res.agent.online, res.agent.opt)
        rows[seed] = res.rows
        per_seed[seed] = summarize(res.rows)
        evals[seed] = res.evals
    if len(cfg.seeds) == 1:
        write_metrics_csv(out / "metrics.csv", rows[cfg.seeds[0]])
    emit_plotdata(rows, out / "plotdata", int(cfg.plot.get("window", 10)))
    summary = _aggregate(per_seed)
    return RunRecord(cfg.config_hash(), rows, summary, {"evals": evals})


def _aggregate(per_seed: Dict[int, Dict[str, Any]]) -> Dict[str, Any]:
    keys = ("mean_coverage_pct", "mean_overlap_pct", "mean_return")
    agg = {k: float(np.mean([s[k] for s in per_seed.values()])) for k in keys}
    agg["per_seed"] = {str(k): v for k, v in per_seed.items()}
    return agg


def _load_agent(cfg: ExperimentConfig, env: CoverageEnv, seed: int):
    ckpt = cfg.eval.get("checkpoint")
    if ckpt is None:
        return None
    net, _ = load_checkpoint(ckpt)
    agent = make_agent(env, cfg.train_config(), seed, cfg.encoder_obj())
    if net.spec != agent.online.spec:
        raise ConfigError("checkpoint network does not match the configured map/agent")
    agent.online = net
    return agent


def _run_eval(cfg: ExperimentConfig, out: Path) -> RunRecord:
    env = cfg.build_env()
    episodes = int(cfg.eval.get("episodes", 10))
    rows, per_seed = {}, {}
    for seed in cfg.seeds:
        agent = _load_agent(cfg, env, seed) if cfg.method in ("rl", "hybrid") else None
        r = evaluate_method(cfg.method, env, episodes, seed, agent)
        sdir = out / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        write_metrics_csv(sdir / "metrics.csv", r)
        rows[seed] = r
        per_seed[seed] = summarize(r, tail_fraction=1.0)
    if len(cfg.seeds) == 1:
        write_metrics_csv(out / "metrics.csv", rows[cfg.seeds[0]])
    return RunRecord(cfg.config_hash(), rows, _aggregate(per_seed))


def _bench_fixtures(cfg: ExperimentConfig) -> List[str]:
    fx = cfg.bench.get("fixtures")
    if fx:
        for f in fx:
            resolve_map_path(f)
        return list(fx)
    return [cfg.map.get("file", "maze7.txt")]


def _run_bench(cfg: ExperimentConfig, out: Path) -> RunRecord:
    methods = cfg.bench.get("methods", ["zigzag", "ba_star"])
    bad = set(methods) - set(METHODS)
    if bad:
        raise ConfigError(f"unknown bench methods: {sorted(bad)}")
    noise_levels = cfg.bench.get("noise_levels")
    eval_episodes = int(cfg.bench.get("eval_episodes", cfg.eval.get("episodes", 10)))
    table = []
    if noise_levels:
        for fixture in _bench_fixtures(cfg):
            table.extend(noise_study(cfg, fixture, [float(r) for r in noise_levels], methods, eval_episodes))
    else:
        for fixture in _bench_fixtures(cfg):
            env = cfg.build_env(load_fixture(fixture))
            for method in methods:
                table.append(_bench_cell(cfg, env, method, fixture, env.sensor.flip_prob, eval_episodes))
    header = ["method", "fixture", "noise", "coverage_pct", "overlap_pct", "episodes_to_threshold"]
    _write_rows(out / "bench.csv", header, [[r[h] for h in header] for r in table])
    return RunRecord(cfg.config_hash(), {}, {"rows": table})


def _bench_cell(cfg, env, method, fixture, noise, eval_episodes) -> Dict[str, Any]:
    tcfg = cfg.train_config()
    covs, ovls, conv = [], [], []
    for seed in cfg.seeds:
        train_rows, evals, _ = train_and_eval(method, env, tcfg, seed, eval_episodes, cfg.encoder_obj())
        covs += [r.coverage_pct for r in evals]
        ovls += [r.overlap_pct for r in evals]
        if train_rows:
            conv.append(milestone_episode(train_rows))
    return {
        "method": method,
        "fixture": fixture,
        "noise": float(noise),
        "coverage_pct": float(np.mean(covs)),
        "overlap_pct": float(np.mean(ovls)),
        "episodes_to_threshold": (None if not conv or None in conv else float(np.mean(conv))),
    }


def noise_study(cfg: ExperimentConfig, fixture: str, rhos: List[float], methods: List[str],
                eval_episodes: int = 10) -> List[Dict[str, Any]]:
    """Overlap at the 90% coverage mark (or step cap) per method and noise level.

    Learning methods are trained under the same noise they are evaluated in.
    """
    grid = load_fixture(fixture)
    rows = []
    for method in methods:
        for rho in rhos:
            env = cfg.build_env(grid, noise=rho)
            rows.append(_bench_cell(cfg, env, method, fixture, rho, eval_episodes))
    return rows


def sweep_combos(spec: Dict[str, Any], seed: int = 0) -> List[Dict[str, Any]]:
    """Explicit ``combos`` list, or up to ``max_combos`` draws from ``grid``."""
    if spec.get("combos"):
        return [dict(c) for c in spec["combos"]]
    grid = spec.get("grid")
    if not grid:
        raise ConfigError("sweep needs 'combos' or 'grid'")
    keys = sorted(grid)
    product = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    limit = int(spec.get("max_combos", len(product)))
    if limit >= len(product):
        return product
    pick = np.random.default_rng(seed).choice(len(product), size=limit, replace=False)
    return [product[i] for i in sorted(pick)]


def sweep(cfg: ExperimentConfig, combos: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Converged reward (mean return over the last 10% of episodes) per combo,
    averaged over the shared seed list."""
    if not combos:
        raise ConfigError("sweep grid is empty")
    env = cfg.build_env()
    tcfgs = []
    for combo in combos:
        try:
            tcfgs.append(cfg.train_config(**combo))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad sweep combo {combo}: {exc}") from exc
    table = []
    for i, (combo, tcfg) in enumerate(zip(combos, tcfgs)):
        rewards = []
        for seed in cfg.seeds:
            res = train(env, tcfg, seed=seed, method=cfg.method, encoder=cfg.encoder_obj())
            rewards.append(summarize(res.rows)["mean_return"])
        table.append({"combo": i, "params": combo, "converged_reward": float(np.mean(rewards)),
                      "reward_min": float(np.min(rewards)), "reward_max": float(np.max(rewards))})
    return table


def _run_sweep(cfg: ExperimentConfig, out: Path) -> RunRecord:
    combos = sweep_combos(cfg.sweep, cfg.seeds[0])
    table = sweep(cfg, combos)
    _write_rows(out / "sweep.csv", ["combo", "params", "converged_reward", "reward_min", "reward_max"],
                [[r["combo"], json.dumps(r["params"], sort_keys=True), r["converged_reward"],
                  r["reward_min"], r["reward_max"]] for r in table])
    return RunRecord(cfg.config_hash(), {}, {"rows": table})


def _run_contraction(cfg: ExperimentConfig, out: Path) -> RunRecord:
    c = cfg.contraction
    n_mdps = int(c.get("mdps", 50))
    iters = int(c.get("iters", 5000))
    wins, table = 0, []
    for i in range(n_mdps):
        seed = cfg.seeds[0] * 100_003 + i
        mdp = lab.random_mdp(int(c.get("states", 5)), int(c.get("actions", 2)),
                             float(c.get("gamma", 0.9)), np.random.default_rng(seed))
        curves = lab.rate_experiment(mdp, iters, seed=seed, alpha_per=float(c.get("alpha_per", 0.6)),
                                     step=float(c.get("step", 0.5)), skew=float(c.get("skew", 0.02)))
        hit = curves.iterations_to(float(c.get("fraction", 1e-2)))
        u, p = hit["error_uniform"], hit["error_prioritized"]
        win = p is not None and (u is None or p < u)
        wins += win
        table.append([i, u, p, win])
        if i == 0:
            lab.write_rate_csv(out / "rates.csv", curves)
    _write_rows(out / "contraction.csv", ["mdp", "iters_uniform", "iters_prioritized", "prioritized_faster"], table)
    return RunRecord(cfg.config_hash(), {}, {"mdps": n_mdps, "prioritized_faster": int(wins)})


# ---------------------------------------------------------------------------
# plot data


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average; window 1 is the identity."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i - window + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def emit_plotdata(rows: Dict[int, List[EpisodeRow]], outdir, window: int = 10) -> List[Path]:
    """Per-metric CSVs of smoothed curves: episode, mean, min, max across seeds."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    n = min(len(r) for r in rows.values())
    written = []
    for metric, attr in (("coverage", "coverage_pct"), ("overlap", "overlap_pct"), ("return", "ret")):
        curves = np.array([smooth([getattr(r, attr) for r in rs[:n]], window) for rs in rows.values()])
        table = [[i, float(curves[:, i].mean()), float(curves[:, i].min()), float(curves[:, i].max())]
                 for i in range(n)]
        path = outdir / f"{metric}.csv"
        _write_rows(path, ["episode", "mean", "min", "max"], table)
        written.append(path)
    return written
