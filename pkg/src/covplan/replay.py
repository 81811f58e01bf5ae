"""Experience replay: proportional prioritized (sum-tree) and uniform."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, List, NamedTuple

import numpy as np

from covplan import kernels


class BufferTooSmall(ValueError):
    pass


class Transition(NamedTuple):
    obs: Any
    action: int
    reward: float
    next_obs: Any
    done: bool


@dataclass
class Batch:
    transitions: List[Transition]
    indices: np.ndarray
    weights: np.ndarray
    probs: np.ndarray


class SumTree:
    """Binary sum tree over ``capacity`` leaves (padded to a power of two).

    ``tree[1]`` is the root; leaf ``i`` lives at ``tree[size + i]``.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.size = size
        self.tree = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.size:self.size + self.capacity]

    def set(self, indices, values) -> None:
        idx = np.ascontiguousarray(np.atleast_1d(indices), dtype=np.int64)
        val = np.ascontiguousarray(np.atleast_1d(values), dtype=np.float64)
        if np.any(idx < 0) or np.any(idx >= self.capacity):
            raise IndexError("leaf index out of range")
        kernels.sumtree_set(self.tree, idx, val)

    def find(self, targets) -> np.ndarray:
        return kernels.sumtree_find(self.tree, np.ascontiguousarray(targets, dtype=np.float64))

    def audit(self) -> float:
        """Largest |node - (left + right)| over internal nodes."""
        t = self.tree
        i = np.arange(1, self.size)
        return float(np.max(np.abs(t[i] - (t[2 * i] + t[2 * i + 1])))) if self.size > 1 else 0.0


class PrioritizedReplay:
    """Proportional PER: P(i) = p_i^alpha / sum_j p_j^alpha, p = |delta| + eps."""

    def __init__(self, capacity: int, alpha: float = 0.6, eps: float = 1e-6):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.data: List[Transition] = [None] * capacity
        self.priorities = np.zeros(capacity)
        self.pos = 0
        self.count = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.count

    def push(self, transition: Transition, priority=None) -> int:
        p = self.max_priority if priority is None else max(float(priority), self.eps)
        i = self.pos
        self.data[i] = transition
        self.priorities[i] = p
        self.tree.set(i, p**self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        self.max_priority = max(self.max_priority, p)
        return i

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.count]
        return leaves / leaves.sum()

    def sample(self, k: int, beta: float, rng: np.random.Generator) -> Batch:
        if self.count < k or k < 1:
            raise BufferTooSmall(f"need {k} transitions, have {self.count}")
        total = self.tree.total
        seg = total / k
        targets = (np.arange(k) + rng.random(k)) * seg
        np.minimum(targets, np.nextafter(total, 0.0), out=targets)
        idx = self.tree.find(targets)
        # roundoff guard: never return an empty or unwritten slot
        bad = (idx >= self.count) | (self.tree.leaves()[np.minimum(idx, self.capacity - 1)] <= 0)
        if np.any(bad):
            idx[bad] = rng.integers(self.count, size=int(bad.sum()))
        probs = self.tree.leaves()[idx] / total
        weights = (self.count * probs) ** (-beta)
        weights /= weights.max()
        return Batch([self.data[i] for i in idx], idx, weights, probs)

    def update_priorities(self, indices, td_errors) -> None:
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps
        idx = np.asarray(indices, dtype=np.int64)
        self.priorities[idx] = p
        self.tree.set(idx, p**self.alpha)
        self.max_priority = max(self.max_priority, float(p.max()))


class UniformReplay:
    """Plain ring buffer with uniform sampling and unit importance weights."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.data: List[Transition] = [None] * capacity
        self.pos = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, transition: Transition, priority=None) -> int:
        i = self.pos
        self.data[i] = transition
        self.pos = (self.pos + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return i

    def sample(self, k: int, beta: float, rng: np.random.Generator) -> Batch:
        if self.count < k or k < 1:
            raise BufferTooSmall(f"need {k} transitions, have {self.count}")
        idx = rng.integers(self.count, size=k)
        probs = np.full(k, 1.0 / self.count)
        return Batch([self.data[i] for i in idx], idx, np.ones(k), probs)

    def update_priorities(self, indices, td_errors) -> None:
        pass
