"""Pure-Python/numpy versions of the hot kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``COVPLAN_PURE_PYTHON`` is set.
"""

import numpy as np


def im2col3x3(x):
    """Unfold 3x3 zero-padded neighbourhoods of an NHWC batch.

    Returns an array of shape (B, H, W, 9*C); the last axis is ordered
    (kernel_row, kernel_col, channel), matching a (3, 3, C, K) weight reshaped
    to (9*C, K).
    """
    b, h, w, c = x.shape
    padded = np.zeros((b, h + 2, w + 2, c), dtype=np.float64)
    padded[:, 1:-1, 1:-1, :] = x
    return np.concatenate(
        [padded[:, i:i + h, j:j + w, :] for i in range(3) for j in range(3)], axis=3
    )


def col2im3x3(cols, channels):
    """Adjoint of :func:`im2col3x3`: scatter-add columns back to (B, H, W, C)."""
    b, h, w, _ = cols.shape
    c = channels
    padded = np.zeros((b, h + 2, w + 2, c), dtype=np.float64)
    k = 0
    for i in range(3):
        for j in range(3):
            padded[:, i:i + h, j:j + w, :] += cols[..., k * c:(k + 1) * c]
            k += 1
    return np.ascontiguousarray(padded[:, 1:-1, 1:-1, :])


def sumtree_set(tree, leaves, values):
    """Write leaf values and recompute every ancestor from its children."""
    size = tree.shape[0] // 2
    for leaf, value in zip(leaves, values):
        i = size + int(leaf)
        tree[i] = value
        i //= 2
        while i >= 1:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i //= 2


def sumtree_find(tree, targets):
    """Descend from the root for each prefix-sum target; return leaf indices."""
    size = tree.shape[0] // 2
    out = np.empty(len(targets), dtype=np.int64)
    for n, u in enumerate(targets):
        i = 1
        while i < size:
            left = 2 * i
            if (u < tree[left] and tree[left] > 0.0) or tree[left + 1] <= 0.0:
                i = left
            else:
                u -= tree[left]
                i = left + 1
        out[n] = i - size
    return out
