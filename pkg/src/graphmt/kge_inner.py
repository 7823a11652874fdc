"""Pure-Python SGD kernel for the bag-of-words KGE classifier.

This is the fallback backend; `graphmt._kge_inner` is the compiled twin
with the same entry point. Both walk records in the given order and apply
identical update formulas, so each backend is deterministic on its own,
but float summation order differs between them (numpy reductions here,
scalar loops there), so cross-backend results agree only to tolerance.

The `threads` argument is accepted for interface parity; this backend
always runs single-threaded.
"""

from __future__ import annotations

import numpy as np

SIGMOID_CLIP = 30.0


def _sigmoid(s: float) -> float:
    if s > SIGMOID_CLIP:
        s = SIGMOID_CLIP
    elif s < -SIGMOID_CLIP:
        s = -SIGMOID_CLIP
    return 1.0 / (1.0 + np.exp(-s))


def _softplus(x: float) -> float:
    # loss for one tree decision: -log sigmoid(+-s) = softplus(-+s)
    if x > SIGMOID_CLIP:
        return x
    if x < -SIGMOID_CLIP:
        return float(np.exp(x))
    return float(np.log1p(np.exp(x)))


def train_shard(V, W, feat_flat, feat_off, path_flat, code_flat, path_off,
                order, lr0, done_before, total_records, threads=1):
    """One pass over `order`, updating V and W in place; returns summed loss.

    Records are CSR-packed: record j's input rows are
    feat_flat[feat_off[j]:feat_off[j+1]] and its label's tree path/code
    bits live in path_flat/code_flat at path_off[j]:path_off[j+1].
    The learning rate decays linearly with global record progress.
    """
    total_loss = 0.0
    inv_total = 1.0 / total_records
    for idx in range(len(order)):
        j = order[idx]
        lr = lr0 * (1.0 - (done_before + idx) * inv_total)
        rows = feat_flat[feat_off[j]:feat_off[j + 1]]
        h = V[rows].mean(axis=0)
        gh = np.zeros_like(h)
        for k in range(path_off[j], path_off[j + 1]):
            node = path_flat[k]
            bit = code_flat[k]
            s = float(W[node] @ h)
            f = _sigmoid(s)
            g = lr * (bit - f)
            total_loss += _softplus(-s) if bit else _softplus(s)
            gh += g * W[node]
            W[node] += g * h
        gh /= len(rows)
        for r in rows:
            V[r] += gh
    return total_loss
