"""CART regression tree kernels (numba-compiled) shared by forest and gbt.

Trees are grown iteratively with exact greedy variance-reduction splits.
Split ties break to the lowest feature index, then the lowest threshold,
which the scan order (features ascending, thresholds ascending, strictly
greater comparison) realizes without extra bookkeeping. Constant-outcome
nodes short-circuit to exact leaf values so constant targets are
reproduced bit-for-bit.

Feature subsampling uses an inline splitmix64 stream so a tree is a pure
function of (X, y, rows, parameters, seed).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(inline="always")
def _mix_next(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def grow_tree(X, y, rows, max_depth, min_node, mtry, seed):
    """Grow one regression tree; returns packed node arrays.

    rows indexes into X/y (repeats allowed, e.g. bootstrap). max_depth < 0
    means unlimited. Returns (feature, threshold, left, right, value);
    feature == -1 marks a leaf.
    """
    n = rows.shape[0]
    p = X.shape[1]
    cap = 2 * (n // min_node) + 1
    if max_depth >= 0 and max_depth < 60:
        depth_cap = (1 << (max_depth + 1)) - 1
        if depth_cap < cap:
            cap = depth_cap
    if cap < 1:
        cap = 1

    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)

    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    perm = np.empty(p, dtype=np.int64)
    cand = np.empty(p, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)

    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    state = seed

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        s = end - start

        total = 0.0
        ylo = y[idx[start]]
        yhi = ylo
        for i in range(start, end):
            yi = y[idx[i]]
            total += yi
            if yi < ylo:
                ylo = yi
            if yi > yhi:
                yhi = yi
        if ylo == yhi:
            value[node] = ylo
            continue
        value[node] = total / s
        if s < 2 * min_node:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        m = mtry if mtry < p else p
        if m < p:
            for j in range(p):
                perm[j] = j
            for t in range(m):
                state, z = _mix_next(state)
                j = t + np.int64(z % np.uint64(p - t))
                tmp = perm[t]
                perm[t] = perm[j]
                perm[j] = tmp
            for t in range(m):
                cand[t] = perm[t]
            for a in range(1, m):
                key = cand[a]
                b = a - 1
                while b >= 0 and cand[b] > key:
                    cand[b + 1] = cand[b]
                    b -= 1
                cand[b + 1] = key
        else:
            for t in range(p):
                cand[t] = t

        parent_score = total * total / s
        best_gain = 0.0
        best_f = np.int64(-1)
        best_thr = 0.0
        for c in range(m):
            f = cand[c]
            for i in range(s):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals[:s])
            left_sum = 0.0
            for i in range(1, s):
                prev = vals[order[i - 1]]
                left_sum += y[idx[start + order[i - 1]]]
                cur = vals[order[i]]
                if cur <= prev:
                    continue
                if i < min_node or s - i < min_node:
                    continue
                rs = total - left_sum
                gain = (left_sum * left_sum / i + rs * rs / (s - i)
                        - parent_score)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    # midpoint that rounds up to cur would misplace the
                    # right block during partition
                    thr = 0.5 * (prev + cur)
                    best_thr = prev if thr >= cur else thr
        if best_f < 0:
            continue

        nl = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if X[idx[i], best_f] > best_thr:
                buf[nr] = idx[i]
                nr += 1
        for i in range(s):
            idx[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lchild = n_nodes
        rchild = n_nodes + 1
        left[node] = lchild
        right[node] = rchild
        n_nodes += 2
        stack[top, 0] = rchild
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lchild
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def accumulate_tree(feature, threshold, left, right, value, X, out):
    """Add one tree's predictions into out (callers handle scaling)."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Total ordering of rows by feature columns then outcome.

    Tree learners re-sort their training rows with this before drawing any
    randomness, so fitted ensembles depend only on the multiset of rows
    and the seed, not on input row order.
    """
    keys = (y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def warm_up() -> None:
    """Trigger kernel compilation on toy data (call before forking)."""
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0]])
    y = np.array([0.0, 1.0, 2.0, 3.0])
    rows = np.arange(4, dtype=np.int64)
    nodes = grow_tree(X, y, rows, np.int64(-1), np.int64(1), np.int64(2),
                      np.uint64(1))
    out = np.zeros(4)
    accumulate_tree(*nodes, X, out)
