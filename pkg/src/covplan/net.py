"""Conv-dense dueling Q-network in plain numpy (float64).

Layout is NHWC throughout. Two 3x3 stride-1 "same" convolutions with
leaky-ReLU, one leaky-ReLU dense hidden layer, then either a plain linear head
or a dueling head Q = V + A - mean(A). Gradients are exact; see
tests/test_net.py for the finite-difference checks.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from covplan import kernels

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    height: int
    width: int
    n_actions: int
    channels: int = 3
    conv1: int = 16
    conv2: int = 32
    fc: int = 64
    dueling: bool = True
    slope: float = 0.01

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        flat = self.height * self.width * self.conv2
        shapes = {
            "conv1_w": (3, 3, self.channels, self.conv1),
            "conv1_b": (self.conv1,),
            "conv2_w": (3, 3, self.conv1, self.conv2),
            "conv2_b": (self.conv2,),
            "fc_w": (flat, self.fc),
            "fc_b": (self.fc,),
        }
        if self.dueling:
            shapes.update(
                value_w=(self.fc, 1),
                value_b=(1,),
                adv_w=(self.fc, self.n_actions),
                adv_b=(self.n_actions,),
            )
        else:
            shapes.update(out_w=(self.fc, self.n_actions), out_b=(self.n_actions,))
        return shapes


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


# ---------------------------------------------------------------------------
# layers: each forward returns (out, cache); backward returns input grad and
# parameter grads


def conv3x3_forward(x, w, b):
    cols = kernels.im2col3x3(np.ascontiguousarray(x))
    bsz, h, wd, _ = cols.shape
    out = cols.reshape(-1, cols.shape[-1]) @ w.reshape(-1, w.shape[-1])
    out += b
    return out.reshape(bsz, h, wd, w.shape[-1]), cols


def conv3x3_backward(dout, cols, w, need_dx=True):
    k = w.shape[-1]
    d2 = dout.reshape(-1, k)
    c2 = cols.reshape(-1, cols.shape[-1])
    dw = (c2.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(-1, k).T).reshape(cols.shape)
    dx = kernels.col2im3x3(np.ascontiguousarray(dcols), w.shape[2])
    return dx, dw, db


def dense_forward(x, w, b):
    out = x @ w
    out += b
    return out, x


def dense_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def leaky_forward(x, slope):
    # valid for 0 <= slope <= 1
    out = x * slope
    np.maximum(x, out, out=out)
    return out


def leaky_backward(dout, x, slope):
    scale = x > 0
    scale = scale * (1.0 - slope)
    scale += slope
    scale *= dout
    return scale


def dueling_forward(value, adv):
    return value + adv - adv.mean(axis=1, keepdims=True)


def dueling_backward(dq):
    dvalue = dq.sum(axis=1, keepdims=True)
    dadv = dq - dq.mean(axis=1, keepdims=True)
    return dvalue, dadv


def huber(residual, kappa: float = 1.0):
    """Huber loss and its derivative; works on scalars and arrays."""
    r = np.asarray(residual, dtype=np.float64)
    a = np.abs(r)
    quad = a <= kappa
    loss = np.where(quad, 0.5 * r * r, kappa * (a - 0.5 * kappa))
    grad = np.where(quad, r, kappa * np.sign(r))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


# ---------------------------------------------------------------------------


class QNetwork:
    def __init__(self, spec: NetworkSpec, params: Optional[Dict[str, np.ndarray]] = None):
        self.spec = spec
        if params is None:
            params = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
        for k, s in spec.param_shapes().items():
            if k not in params or params[k].shape != s:
                raise ShapeError(f"parameter {k} missing or misshaped (expected {s})")
        self.params = params

    @classmethod
    def init(cls, spec: NetworkSpec, seed=None) -> "QNetwork":
        """Fan-in scaled uniform weights in +-sqrt(6 / fan_in); zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in spec.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                bound = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(spec, params)

    def copy(self) -> "QNetwork":
        return QNetwork(self.spec, {k: v.copy() for k, v in self.params.items()})

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != {self.spec.input_shape}")
        return x

    def forward(self, x, return_cache: bool = False):
        """Q-values, shape (B, n_actions); a single H x W x C input gives B = 1."""
        p, s = self.params, self.spec
        x = self._check_input(x)
        z1, cols1 = conv3x3_forward(x, p["conv1_w"], p["conv1_b"])
        a1 = leaky_forward(z1, s.slope)
        z2, cols2 = conv3x3_forward(a1, p["conv2_w"], p["conv2_b"])
        a2 = leaky_forward(z2, s.slope)
        flat = a2.reshape(a2.shape[0], -1)
        z3, _ = dense_forward(flat, p["fc_w"], p["fc_b"])
        a3 = leaky_forward(z3, s.slope)
        if s.dueling:
            value, _ = dense_forward(a3, p["value_w"], p["value_b"])
            adv, _ = dense_forward(a3, p["adv_w"], p["adv_b"])
            q = dueling_forward(value, adv)
        else:
            q, _ = dense_forward(a3, p["out_w"], p["out_b"])
        if return_cache:
            return q, (cols1, z1, cols2, z2, a2.shape, flat, z3, a3)
        return q

    def backward_from_q(self, dq, cache) -> Dict[str, np.ndarray]:
        p, s = self.params, self.spec
        cols1, z1, cols2, z2, a2_shape, flat, z3, a3 = cache
        grads = {}
        if s.dueling:
            dvalue, dadv = dueling_backward(dq)
            da3_v, grads["value_w"], grads["value_b"] = dense_backward(dvalue, a3, p["value_w"])
            da3_a, grads["adv_w"], grads["adv_b"] = dense_backward(dadv, a3, p["adv_w"])
            da3 = da3_v + da3_a
        else:
            da3, grads["out_w"], grads["out_b"] = dense_backward(dq, a3, p["out_w"])
        dz3 = leaky_backward(da3, z3, s.slope)
        dflat, grads["fc_w"], grads["fc_b"] = dense_backward(dz3, flat, p["fc_w"])
        dz2 = leaky_backward(dflat.reshape(a2_shape), z2, s.slope)
        da1, grads["conv2_w"], grads["conv2_b"] = conv3x3_backward(dz2, cols2, p["conv2_w"])
        dz1 = leaky_backward(da1, z1, s.slope)
        _, grads["conv1_w"], grads["conv1_b"] = conv3x3_backward(dz1, cols1, p["conv1_w"], need_dx=False)
        return grads

    def loss_and_grads(self, x, actions, targets, weights=None, kappa: float = 1.0):
        """Mean importance-weighted Huber TD loss and its exact gradient.

        Returns (loss, grads, td_errors) with td_errors = Q(x)[a] - target.
        """
        x = self._check_input(x)
        bsz = x.shape[0]
        if bsz == 0:
            raise ShapeError("empty batch")
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.float64)
        weights = np.ones(bsz) if weights is None else np.asarray(weights, dtype=np.float64)
        if actions.shape != (bsz,) or targets.shape != (bsz,) or weights.shape != (bsz,):
            raise ShapeError("actions, targets and weights must be length-B vectors")
        q, cache = self.forward(x, return_cache=True)
        rows = np.arange(bsz)
        td = q[rows, actions] - targets
        loss, dloss = huber(td, kappa)
        dq = np.zeros_like(q)
        dq[rows, actions] = weights * dloss / bsz
        grads = self.backward_from_q(dq, cache)
        return float(np.mean(weights * loss)), grads, td


def forward(net: QNetwork, x):
    return net.forward(x)


def backward(net: QNetwork, x, actions, targets, weights=None):
    _, grads, _ = net.loss_and_grads(x, actions, targets, weights)
    return grads


def copy_weights(src: QNetwork, dst: QNetwork) -> QNetwork:
    if src.spec != dst.spec:
        raise ShapeError("cannot copy between networks with different specs")
    for k, v in src.params.items():
        np.copyto(dst.params[k], v)
    return dst


@dataclass
class Adam:
    """Bias-corrected Adam over a parameter dict, updated in place."""

    cfg: AdamConfig = field(default_factory=AdamConfig)
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ShapeError(f"gradient {k} shape {g.shape} != {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {k}")
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            tmp = g * (1.0 - c.beta1)
            m *= c.beta1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - c.beta2
            v *= c.beta2
            v += tmp
            # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(bc2)
            tmp += c.eps
            np.divide(m, tmp, out=tmp)
            tmp *= c.learning_rate / bc1
            params[k] -= tmp


def adam_step(net: QNetwork, grads, opt: Adam) -> QNetwork:
    opt.step(net.params, grads)
    return net


# ---------------------------------------------------------------------------
# checkpoints: a .npz holding a JSON header plus every array


def save_checkpoint(path, net: QNetwork, opt: Optional[Adam] = None) -> None:
    header = {"version": CHECKPOINT_VERSION, "spec": asdict(net.spec)}
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    if opt is not None:
        header["adam"] = {"cfg": asdict(opt.cfg), "t": opt.t}
        arrays.update({f"adam_m/{k}": v for k, v in opt.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in opt.v.items()})
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Tuple[QNetwork, Optional[Adam]]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        spec = NetworkSpec(**header["spec"])
        params = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("param/")}
        opt = None
        if "adam" in header:
            opt = Adam(AdamConfig(**header["adam"]["cfg"]), t=header["adam"]["t"])
            opt.m = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("adam_m/")}
            opt.v = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("adam_v/")}
    return QNetwork(spec, params), opt
