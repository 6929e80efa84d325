"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math


def brute_threshold(pairs, floor=128.0):
    total = 0
    for c, d in pairs:
        total += c * d
    return max(floor, total / len(pairs))


def brute_onsets(pairs, threshold, window=60):
    onsets = []
    for t, (c, d) in enumerate(pairs):
        if c * d <= threshold:
            continue
        if any(o <= t <= o + window - 1 for o in onsets):
            continue
        onsets.append(t)
    return onsets


def restricted_growth_labels(n, k):
    """All partitions of n items into exactly k non-empty blocks, as label rows."""
    import numpy as np

    rows = np.zeros((1, 1), dtype=np.int8)
    for _ in range(1, n):
        maxes = rows.max(axis=1)
        parts = []
        for label in range(k):
            keep = maxes + 1 >= label
            ext = np.hstack([rows[keep], np.full((keep.sum(), 1), label, dtype=np.int8)])
            parts.append(ext)
        rows = np.vstack(parts)
    return rows[rows.max(axis=1) == k - 1]


def brute_kmeans_sse(X, k):
    """Minimum within-cluster sum of squares over every partition into k blocks."""
    import numpy as np

    labels = restricted_growth_labels(len(X), k)
    total = float(np.sum(X ** 2))
    between = np.zeros(len(labels))
    for c in range(k):
        mask = (labels == c).astype(np.float64)
        sums = mask @ X
        counts = mask.sum(axis=1)
        between += np.sum(sums ** 2, axis=1) / counts
    return total - float(between.max())


def entropy(p):
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log(p) + (1 - p) * math.log(1 - p))


def finite_difference_grads(loss_fn, params, step=1e-5):
    """Central differences of loss_fn(params) w.r.t. every parameter entry."""
    import numpy as np

    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(params)
            flat[i] = orig - step
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def gradient_relative_error(analytic, numeric):
    """Worst per-tensor error, scaled by that tensor's largest gradient entry."""
    import numpy as np

    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        scale = max(np.abs(a).max(), np.abs(n).max())
        if scale == 0:
            continue
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst
