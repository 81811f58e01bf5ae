"""Tabular lab for the sampled Bellman update U Q = Q + lr * D_rho (T*Q - Q).

Checks that U contracts toward Q* when every state-action pair has positive
sampling mass, compares the rho_min and rho_max rate envelopes, and pits a
fixed skewed sampling distribution against error-prioritized sampling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np


class StepTooLarge(ValueError):
    pass


@dataclass
class TabularMDP:
    transitions: np.ndarray  # (S, A, S), rows sum to one
    rewards: np.ndarray  # (S, A)
    gamma: float

    def __post_init__(self):
        t = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2] or r.shape != t.shape[:2]:
            raise ValueError("transitions must be (S, A, S) and rewards (S, A)")
        if np.any(t < 0) or np.max(np.abs(t.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be probability vectors")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.transitions, self.rewards = t, r

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator) -> TabularMDP:
    """Dirichlet(1) transition rows, rewards uniform in [0, 1]."""
    t = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    t /= t.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(t, r, gamma)


def bellman_opt(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    v = q.max(axis=1)
    return mdp.rewards + mdp.gamma * mdp.transitions @ v


def q_star(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Value iteration; stops once the sup-norm error is below tol / 2."""
    if mdp.gamma >= 1.0:
        raise ValueError("q_star needs gamma < 1")
    q = np.zeros_like(mdp.rewards)
    if mdp.gamma == 0.0:
        return bellman_opt(mdp, q)
    stop = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma)
    for _ in range(max_iter):
        nq = bellman_opt(mdp, q)
        if np.max(np.abs(nq - q)) < stop:
            return nq
        q = nq
    raise RuntimeError("value iteration did not converge")


def apply_U(q: np.ndarray, mdp: TabularMDP, rho: np.ndarray, lr: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if lr * rho.max() > 1.0 + 1e-12:
        raise StepTooLarge(f"lr * rho_max = {lr * rho.max():.6g} exceeds 1")
    return q + lr * rho * (bellman_opt(mdp, q) - q)


def beta(gamma: float, lr: float, rho_max: float) -> float:
    """Per-iteration contraction factor 1 - (1 - gamma) * lr * rho_max."""
    return 1.0 - (1.0 - gamma) * lr * rho_max


def sup_err(q: np.ndarray, qs: np.ndarray) -> float:
    return float(np.max(np.abs(q - qs)))


@dataclass
class ContractionReport:
    max_ratio: float
    beta_min: float  # guaranteed factor (uses the smallest rho entry)
    beta_max: float  # rate stated with the largest rho entry


def contraction_check(mdp: TabularMDP, rho: np.ndarray, lr: float, trials: int,
                      rng: np.random.Generator, qs: Optional[np.ndarray] = None,
                      scale: float = 10.0) -> ContractionReport:
    """Largest ||U Q - Q*|| / ||Q - Q*|| over random Q around Q*."""
    rho = np.asarray(rho, dtype=np.float64)
    qs = q_star(mdp) if qs is None else qs
    worst = 0.0
    for _ in range(trials):
        q = qs + rng.normal(0.0, scale, size=qs.shape)
        worst = max(worst, sup_err(apply_U(q, mdp, rho, lr), qs) / sup_err(q, qs))
    return ContractionReport(
        worst, beta(mdp.gamma, lr, rho.min()), beta(mdp.gamma, lr, rho.max())
    )


def skewed_distribution(shape, rng: np.random.Generator, ratio: float = 0.02) -> np.ndarray:
    """Fixed visitation law: geometric masses from 1 down to ``ratio``,
    randomly assigned to state-action pairs."""
    n = int(np.prod(shape))
    masses = ratio ** (np.arange(n) / max(n - 1, 1))
    rho = rng.permutation(masses).reshape(shape)
    return rho / rho.sum()


def prioritized_distribution(mdp: TabularMDP, q: np.ndarray, alpha: float = 0.6,
                             eps: float = 1e-6) -> np.ndarray:
    p = (np.abs(bellman_opt(mdp, q) - q) + eps) ** alpha
    return p / p.sum()


@dataclass
class RateCurves:
    error_uniform: np.ndarray
    error_prioritized: np.ndarray
    envelope_min: np.ndarray
    envelope_max: np.ndarray

    def iterations_to(self, fraction: float) -> Dict[str, Optional[int]]:
        out = {}
        for name in ("error_uniform", "error_prioritized"):
            e = getattr(self, name)
            hit = np.flatnonzero(e <= fraction * e[0])
            out[name] = int(hit[0]) if hit.size else None
        return out


def rate_experiment(mdp: TabularMDP, iters: int, seed: int = 0, alpha_per: float = 0.6,
                    step: float = 0.5, skew: float = 0.02, eps: float = 1e-6) -> RateCurves:
    """Sup-norm error curves for skewed-uniform and prioritized sampling.

    Both schedules use lr_t = step / rho_t^max, starting from Q_0 = 0. Index t
    of every curve is the error after t applications (index 0 is Q_0).
    """
    rng = np.random.default_rng(seed)
    qs = q_star(mdp)
    rho_u = skewed_distribution(mdp.rewards.shape, rng, skew)
    lr_u = step / rho_u.max()
    qu = np.zeros_like(mdp.rewards)
    qp = np.zeros_like(mdp.rewards)
    eu = np.empty(iters + 1)
    ep = np.empty(iters + 1)
    eu[0] = ep[0] = sup_err(qu, qs)
    for t in range(1, iters + 1):
        qu = apply_U(qu, mdp, rho_u, lr_u)
        rho_p = prioritized_distribution(mdp, qp, alpha_per, eps)
        qp = apply_U(qp, mdp, rho_p, step / rho_p.max())
        eu[t] = sup_err(qu, qs)
        ep[t] = sup_err(qp, qs)
    ts = np.arange(iters + 1)
    env_min = eu[0] * beta(mdp.gamma, lr_u, rho_u.min()) ** ts
    env_max = eu[0] * beta(mdp.gamma, lr_u, rho_u.max()) ** ts
    return RateCurves(eu, ep, env_min, env_max)


def envelope_run(mdp: TabularMDP, rho: np.ndarray, lr: float, iters: int,
                 q0: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Iterate U with a constant rho; return the error and both envelopes."""
    qs = q_star(mdp)
    q = np.zeros_like(mdp.rewards) if q0 is None else np.array(q0, dtype=np.float64)
    err = np.empty(iters + 1)
    err[0] = sup_err(q, qs)
    for t in range(1, iters + 1):
        q = apply_U(q, mdp, rho, lr)
        err[t] = sup_err(q, qs)
    ts = np.arange(iters + 1)
    return {
        "error": err,
        "envelope_min": err[0] * beta(mdp.gamma, lr, np.min(rho)) ** ts,
        "envelope_max": err[0] * beta(mdp.gamma, lr, np.max(rho)) ** ts,
        "q_final": q,
    }


def write_rate_csv(path, curves: RateCurves) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "error_uniform", "error_prioritized", "envelope_min", "envelope_max"])
        for t in range(len(curves.error_uniform)):
            w.writerow([t, repr(float(curves.error_uniform[t])), repr(float(curves.error_prioritized[t])),
                        repr(float(curves.envelope_min[t])), repr(float(curves.envelope_max[t]))])
