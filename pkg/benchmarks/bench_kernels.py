"""Compiled vs pure-Python kernel timings.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--size H]

Times each kernel from both backends on identical inputs, checks that the
outputs agree, and finishes with an end-to-end DQN gradient step under each
backend (run in a subprocess so the backend is chosen at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from covplan import _kernels_py

try:
    from covplan import _kernels as _compiled
except ImportError:
    _compiled = None

TRAIN_STEP = """
import time, numpy as np
from covplan import kernels
from covplan.agent import DQNAgent, TrainConfig
from covplan.replay import Transition
n = {size}
agent = DQNAgent((n, n, 3), 4, TrainConfig(train_start=32), seed=0)
rng = np.random.default_rng(0)
for _ in range(256):
    o = rng.integers(0, 2, (n, n, 3)).astype(np.uint8)
    agent.buffer.push(Transition(o, int(rng.integers(4)), 1.0, o, False))
agent.train_step()
t = time.perf_counter()
for _ in range({repeat}):
    agent.train_step()
print(kernels.BACKEND, (time.perf_counter() - t) / {repeat})
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(size, rng):
    x = rng.random((32, size, size, 16))
    cols = _kernels_py.im2col3x3(x)
    tree = np.zeros(2 * 65536)
    leaves = rng.integers(0, 50_000, 32).astype(np.int64)
    values = rng.random(32)
    _kernels_py.sumtree_set(tree, np.arange(50_000, dtype=np.int64), rng.random(50_000))
    targets = rng.random(32) * tree[1]
    return [
        ("im2col3x3", lambda k: k.im2col3x3(x)),
        ("col2im3x3", lambda k: k.col2im3x3(cols, 16)),
        ("sumtree_set x32", lambda k: k.sumtree_set(tree, leaves, values)),
        ("sumtree_find x32", lambda k: k.sumtree_find(tree, targets)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--size", type=int, default=15, help="grid side for conv kernels")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the fallback can be timed", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'compiled ms':>14}{'python ms':>12}{'speedup':>10}")
    for name, call in kernel_cases(args.size, rng):
        a, b = call(_compiled), call(_kernels_py)
        if a is not None and not np.array_equal(a, b):
            raise SystemExit(f"{name}: backends disagree")
        tc = best(lambda: call(_compiled), args.repeat)
        tp = best(lambda: call(_kernels_py), args.repeat)
        print(f"{name:<18}{tc * 1e3:>14.4f}{tp * 1e3:>12.4f}{tp / tc:>9.1f}x")

    times = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("COVPLAN_PURE_PYTHON", None)
        if pure:
            env["COVPLAN_PURE_PYTHON"] = "1"
        code = TRAIN_STEP.format(size=args.size, repeat=max(5, args.repeat // 5))
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env=env, check=True).stdout.split()
        times[out[0]] = float(out[1])
    tc, tp = times["compiled"], times["python"]
    print(f"{'train_step':<18}{tc * 1e3:>14.4f}{tp * 1e3:>12.4f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
