"""Double DQN with a dueling head and proportional prioritized replay."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Callable, List, Optional

import numpy as np

from covplan.encoder import Encoder, EncoderConfig
from covplan.env import CoverageEnv, EnvState
from covplan.net import Adam, AdamConfig, NetworkSpec, QNetwork, copy_weights
from covplan.planners import EpisodeResult, hybrid_episode
from covplan.replay import PrioritizedReplay, Transition, UniformReplay

METRICS_FIELDS = ["episode", "steps", "coverage_pct", "overlap_pct", "return", "epsilon", "loss_mean"]


@dataclass
class TrainConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 50_000
    target_sync: int = 8_000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 10_000
    prioritized: bool = True
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_eps: float = 1e-6
    train_start: int = 1_000
    train_every: int = 1
    double: bool = True
    dueling: bool = True
    conv1: int = 16
    conv2: int = 32
    fc: int = 64
    slope: float = 0.01
    episodes: int = 500
    # env steps over which the IS exponent reaches per_beta_end; None means
    # episodes * step_cap
    beta_horizon: Optional[int] = None
    eval_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.target_sync < 1 or self.train_every < 1:
            raise ValueError("target_sync and train_every must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def epsilon(t: int, cfg: TrainConfig) -> float:
    """Linear anneal from eps_start to eps_end over eps_decay_steps, then flat."""
    if t >= cfg.eps_decay_steps:
        return cfg.eps_end
    frac = t / cfg.eps_decay_steps
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def greedy_action(q: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest-index tie-break
    return int(np.argmax(q))


def act(net: QNetwork, x: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(net.spec.n_actions))
    return greedy_action(net.forward(x)[0])


def td_targets(online: QNetwork, target: QNetwork, next_x, rewards, dones, gamma: float,
               double: bool = True) -> np.ndarray:
    """Bootstrapped targets; done transitions are not bootstrapped."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if gamma == 0.0 or dones.all():
        return rewards.copy()
    q_target = target.forward(next_x)
    if double:
        a_star = np.argmax(online.forward(next_x), axis=1)
    else:
        a_star = np.argmax(q_target, axis=1)
    boot = q_target[np.arange(len(rewards)), a_star]
    return np.where(dones, rewards, rewards + gamma * boot)


class DQNAgent:
    def __init__(self, input_shape, n_actions: int, cfg: Optional[TrainConfig] = None,
                 encoder: Optional[Encoder] = None, seed=0, step_cap: int = 1000):
        self.cfg = cfg = cfg or TrainConfig()
        self.encoder = encoder or Encoder()
        self.rng = np.random.default_rng(seed)
        spec = NetworkSpec(
            height=input_shape[0], width=input_shape[1], n_actions=n_actions,
            channels=input_shape[2], conv1=cfg.conv1, conv2=cfg.conv2, fc=cfg.fc,
            dueling=cfg.dueling, slope=cfg.slope,
        )
        self.online = QNetwork.init(spec, self.rng.integers(2**63))
        self.target = self.online.copy()
        self.opt = Adam(AdamConfig(learning_rate=cfg.learning_rate))
        if cfg.prioritized:
            self.buffer = PrioritizedReplay(cfg.buffer_capacity, cfg.per_alpha, cfg.per_eps)
        else:
            self.buffer = UniformReplay(cfg.buffer_capacity)
        self.beta_horizon = cfg.beta_horizon or max(1, cfg.episodes * step_cap)
        self.steps = 0  # transitions observed (epsilon clock)
        self.updates = 0  # gradient steps (target-sync clock)
        self.losses: List[float] = []

    # -- schedules ---------------------------------------------------------
    def current_epsilon(self) -> float:
        return epsilon(self.steps, self.cfg)

    def current_beta(self) -> float:
        c = self.cfg
        frac = min(1.0, self.steps / self.beta_horizon)
        return c.per_beta_start + frac * (c.per_beta_end - c.per_beta_start)

    # -- acting ------------------------------------------------------------
    def act(self, x: np.ndarray, eps: float) -> int:
        return act(self.online, x, eps, self.rng)

    def q_values(self, x: np.ndarray) -> np.ndarray:
        return self.online.forward(x)[0]

    # -- learning ----------------------------------------------------------
    def remember(self, transition: Transition) -> Optional[float]:
        """Store a transition, advance the clocks, train when due."""
        self.buffer.push(transition)
        self.steps += 1
        c = self.cfg
        if len(self.buffer) >= max(c.train_start, c.batch_size) and self.steps % c.train_every == 0:
            loss = self.train_step()
            self.losses.append(loss)
            return loss
        return None

    def train_step(self) -> float:
        c = self.cfg
        batch = self.buffer.sample(c.batch_size, self.current_beta(), self.rng)
        ts = batch.transitions
        x = self.encoder.batch([t.obs for t in ts])
        x2 = self.encoder.batch([t.next_obs for t in ts])
        actions = np.array([t.action for t in ts], dtype=np.int64)
        rewards = np.array([t.reward for t in ts], dtype=np.float64)
        dones = np.array([t.done for t in ts], dtype=bool)
        y = td_targets(self.online, self.target, x2, rewards, dones, c.gamma, c.double)
        loss, grads, td = self.online.loss_and_grads(x, actions, y, batch.weights)
        self.opt.step(self.online.params, grads)
        self.buffer.update_priorities(batch.indices, td)
        self.updates += 1
        if self.updates % c.target_sync == 0:
            copy_weights(self.online, self.target)
        return loss


# ---------------------------------------------------------------------------
# episode loops


def rl_episode(state: EnvState, agent: DQNAgent, training: bool, eps: Optional[float] = None):
    """Pure RL control; returns (result, mean loss over the episode's updates)."""
    enc = agent.encoder
    n_losses = len(agent.losses)
    obs = enc.observe(state)
    while not state.done:
        e = agent.current_epsilon() if (training and eps is None) else (eps or 0.0)
        a = agent.act(enc.to_input(obs), e)
        outcome = state.step(a)
        nxt = enc.observe(state)
        if training:
            agent.remember(Transition(obs, a, outcome.reward, nxt, outcome.done))
        obs = nxt
    new = agent.losses[n_losses:]
    return EpisodeResult.from_state(state), (float(np.mean(new)) if new else float("nan"))


def run_episode(method: str, state: EnvState, agent: DQNAgent, training: bool, eps=None):
    if method == "hybrid":
        n_losses = len(agent.losses)
        result, _ = hybrid_episode(state, agent, training, eps)
        new = agent.losses[n_losses:]
        return result, (float(np.mean(new)) if new else float("nan"))
    return rl_episode(state, agent, training, eps)


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    coverage_pct: float
    overlap_pct: float
    ret: float
    epsilon: float
    loss_mean: float

    def as_csv(self) -> list:
        return [self.episode, self.steps, repr(self.coverage_pct), repr(self.overlap_pct),
                repr(self.ret), repr(self.epsilon), repr(self.loss_mean)]


@dataclass
class TrainResult:
    rows: List[EpisodeRow]
    evals: List[tuple]  # (episode, coverage_pct, overlap_pct, steps, return)
    agent: DQNAgent


def episode_seed(seed: int, episode: int, salt: int = 0):
    return [int(seed), int(episode), int(salt)]


def make_agent(env: CoverageEnv, cfg: TrainConfig, seed, encoder: Optional[Encoder] = None) -> DQNAgent:
    encoder = encoder or Encoder(EncoderConfig())
    shape = encoder.input_shape((env.map.height, env.map.width))
    return DQNAgent(shape, env.n_actions, cfg, encoder, seed=seed, step_cap=env.cfg.step_cap)


def train(env: CoverageEnv, cfg: TrainConfig, seed: int = 0, method: str = "rl",
          encoder: Optional[Encoder] = None,
          callback: Optional[Callable[[EpisodeRow], None]] = None) -> TrainResult:
    """Train for ``cfg.episodes`` episodes; one metrics row per episode.

    ``method`` is "rl" (pure DQN control) or "hybrid". With ``eval_every`` > 0
    a greedy episode is run every that many episodes and logged in ``evals``.
    """
    if method not in ("rl", "hybrid"):
        raise ValueError(f"unknown training method {method!r}")
    agent = make_agent(env, cfg, seed, encoder)
    rows, evals = [], []
    for ep in range(cfg.episodes):
        state = env.reset(seed=episode_seed(seed, ep))
        eps_at_start = agent.current_epsilon()
        result, loss = run_episode(method, state, agent, training=True)
        row = EpisodeRow(ep, result.steps, result.coverage_pct, result.overlap_pct,
                         result.total_return, eps_at_start, loss)
        rows.append(row)
        if callback:
            callback(row)
        if cfg.eval_every and (ep + 1) % cfg.eval_every == 0:
            st = env.reset(seed=episode_seed(seed, ep, salt=1))
            res, _ = run_episode(method, st, agent, training=False, eps=0.0)
            evals.append((ep, res.coverage_pct, res.overlap_pct, res.steps, res.total_return))
    return TrainResult(rows, evals, agent)


def evaluate(agent: DQNAgent, env: CoverageEnv, episodes: int = 1, method: str = "rl",
             seed: int = 0) -> dict:
    """Greedy (epsilon = 0) rollouts; mean coverage and overlap in percent."""
    results = []
    for ep in range(episodes):
        state = env.reset(seed=episode_seed(seed, ep, salt=2))
        res, _ = run_episode(method, state, agent, training=False, eps=0.0)
        results.append(res)
    return {
        "coverage_pct": float(np.mean([r.coverage_pct for r in results])),
        "overlap_pct": float(np.mean([r.overlap_pct for r in results])),
        "steps": float(np.mean([r.steps for r in results])),
        "episodes": [asdict(r) for r in results],
    }


def write_metrics_csv(path, rows: List[EpisodeRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_FIELDS)
        for r in rows:
            w.writerow(r.as_csv())
