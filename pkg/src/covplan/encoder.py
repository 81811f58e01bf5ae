"""Policy input tensors.

Three stacked H x W planes: covered cells, believed obstacles, robot position.
In unknown-area mode the discovered region is cropped and, when larger than
``n x n``, shrunk with bicubic interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from covplan.env import OBSTACLE, UNKNOWN, EnvState

KEYS_A = -0.5


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "known"  # or "unknown"
    n: int = 15

    def __post_init__(self):
        if self.mode not in ("known", "unknown"):
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.mode == "unknown" and self.n < 3:
            raise ValueError("n must be >= 3 in unknown-area mode")


@dataclass(frozen=True)
class RawSnapshot:
    """Actual-size planes kept in replay for unknown-area mode."""

    covered: np.ndarray
    obstacles: np.ndarray
    discovered: np.ndarray
    position: Tuple[int, int]


def encode_known(state: EnvState) -> np.ndarray:
    h, w = state.visit_count.shape
    out = np.zeros((h, w, 3), dtype=np.float64)
    out[..., 0] = state.visit_count > 0
    out[..., 1] = state.belief == OBSTACLE
    out[state.pose.row, state.pose.col, 2] = 1.0
    return out


def snapshot(state: EnvState) -> RawSnapshot:
    covered = state.visit_count > 0
    return RawSnapshot(
        covered=covered,
        obstacles=state.belief == OBSTACLE,
        discovered=(state.belief != UNKNOWN) | covered,
        position=state.position,
    )


def _keys_weights(t: float) -> np.ndarray:
    """Cubic convolution weights for taps at offsets -1, 0, 1, 2."""
    a = KEYS_A
    d = np.array([1.0 + t, t, 1.0 - t, 2.0 - t])
    w = np.empty(4)
    for i, x in enumerate(d):
        if x <= 1.0:
            w[i] = (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
        elif x < 2.0:
            w[i] = a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
        else:
            w[i] = 0.0
    return w


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear map (n_out x n_in) resampling one axis with cubic convolution.

    Output sample k sits at source coordinate k*(n_in-1)/(n_out-1). Taps
    beyond the edge use the boundary extrapolation f[-1] = 3f[0] - 3f[1] + f[2]
    (and its mirror), which keeps the scheme exact for linear data.
    """
    if n_in == n_out:
        return np.eye(n_in)
    m = np.zeros((n_out, n_in))
    if n_out == 1:
        m[0, (n_in - 1) // 2] = 1.0
        return m
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    scale = (n_in - 1) / (n_out - 1)
    for k in range(n_out):
        x = min(max(k * scale, 0.0), n_in - 1.0)
        i = min(int(np.floor(x)), n_in - 2)
        t = x - i
        for off, wt in zip((-1, 0, 1, 2), _keys_weights(t)):
            j = i + off
            if 0 <= j < n_in:
                m[k, j] += wt
            elif n_in >= 3:
                # ghost node as a combination of the three nearest real nodes
                if j < 0:
                    m[k, 0] += 3 * wt
                    m[k, 1] -= 3 * wt
                    m[k, 2] += wt
                else:
                    m[k, n_in - 1] += 3 * wt
                    m[k, n_in - 2] -= 3 * wt
                    m[k, n_in - 3] += wt
            else:
                # two nodes: linear extrapolation
                if j < 0:
                    m[k, 0] += 2 * wt
                    m[k, 1] -= wt
                else:
                    m[k, 1] += 2 * wt
                    m[k, 0] -= wt
    return m


def bicubic_resize(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise DimensionError(f"bicubic_resize needs an H x W matrix with H, W >= 2, got {m.shape}")
    if m.shape == (out_h, out_w):
        return m.copy()
    return _axis_matrix(m.shape[0], out_h) @ m @ _axis_matrix(m.shape[1], out_w).T


def _resize_plane(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if m.shape == (out_h, out_w):
        return m.astype(np.float64)
    return _axis_matrix(m.shape[0], out_h) @ m.astype(np.float64) @ _axis_matrix(m.shape[1], out_w).T


def _scaled_index(p: int, n_in: int, n_out: int) -> int:
    if n_in == n_out:
        return p
    if n_out == 1 or n_in == 1:
        return 0
    return int(np.clip(np.rint(p * (n_out - 1) / (n_in - 1)), 0, n_out - 1))


def encode_snapshot(snap: RawSnapshot, n: int) -> np.ndarray:
    rows = np.flatnonzero(snap.discovered.any(axis=1))
    cols = np.flatnonzero(snap.discovered.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    h, w = r1 - r0, c1 - c0
    pr, pc = snap.position[0] - r0, snap.position[1] - c0
    out = np.zeros((n, n, 3), dtype=np.float64)
    cov = snap.covered[r0:r1, c0:c1]
    obs = snap.obstacles[r0:r1, c0:c1]
    if h <= n and w <= n:
        out[:h, :w, 0] = cov
        out[:h, :w, 1] = obs
        out[pr, pc, 2] = 1.0
        return out
    # uniform scale so the longer side becomes n
    scale = n / max(h, w)
    oh = max(1, min(n, int(round(h * scale))))
    ow = max(1, min(n, int(round(w * scale))))
    out[:oh, :ow, 0] = np.clip(_resize_plane(cov, oh, ow), 0.0, 1.0)
    out[:oh, :ow, 1] = np.clip(_resize_plane(obs, oh, ow), 0.0, 1.0)
    out[_scaled_index(pr, h, oh), _scaled_index(pc, w, ow), 2] = 1.0
    return out


def encode_unknown(state: EnvState, cfg: EncoderConfig) -> np.ndarray:
    return encode_snapshot(snapshot(state), cfg.n)


class Encoder:
    """Turns env states into stored observations and network inputs.

    Known mode stores the binary tensor as uint8; unknown mode stores a
    :class:`RawSnapshot` and resizes when the batch is assembled.
    """

    def __init__(self, cfg: Optional[EncoderConfig] = None):
        self.cfg = cfg or EncoderConfig()

    def input_shape(self, state_shape: Tuple[int, int]) -> Tuple[int, int, int]:
        if self.cfg.mode == "known":
            return (state_shape[0], state_shape[1], 3)
        return (self.cfg.n, self.cfg.n, 3)

    def observe(self, state: EnvState):
        if self.cfg.mode == "known":
            return encode_known(state).astype(np.uint8)
        return snapshot(state)

    def to_input(self, obs) -> np.ndarray:
        if self.cfg.mode == "known":
            return obs.astype(np.float64)
        return encode_snapshot(obs, self.cfg.n)

    def batch(self, observations) -> np.ndarray:
        if self.cfg.mode == "known":
            return np.stack(observations).astype(np.float64)
        return np.stack([encode_snapshot(o, self.cfg.n) for o in observations])
