"""Boosting kernels for logistic-loss regression trees.

Trees are stored in heap layout: node ``k`` has children ``2k+1`` (x <= t) and
``2k+2`` (x > t); ``feature[k] == -1`` marks a leaf. A forest is three
``(tree_count, 2**(max_depth+1) - 1)`` arrays.

Both backends follow the same arithmetic: node totals accumulate in row
order, split scans accumulate in sorted order, and ties resolve to the lowest
feature index and then the lowest threshold.
"""
from __future__ import annotations

import numpy as np

from .. import _accel
from .._accel import optional_njit

GAIN_RTOL = 1e-10


@optional_njit(cache=True)
def _expit_nb(f):
    out = np.empty_like(f)
    for i in range(f.shape[0]):
        z = f[i]
        if z >= 0:
            out[i] = 1.0 / (1.0 + np.exp(-z))
        else:
            ez = np.exp(z)
            out[i] = ez / (1.0 + ez)
    return out


@optional_njit(cache=True, nogil=True)
def _fit_tree_nb(x, order, r, h, max_depth, min_leaf, feature, threshold, value, node_of):
    n, p = x.shape
    m = feature.shape[0]
    cnt = np.zeros(m, np.int64)
    tot = np.zeros(m)
    sq = np.zeros(m)
    hsum = np.zeros(m)
    open_ = np.zeros(m, np.bool_)
    best_gain = np.zeros(m)
    best_feat = np.full(m, -1, np.int64)
    best_thr = np.zeros(m)
    cnt_l = np.zeros(m, np.int64)
    sum_l = np.zeros(m)
    last = np.zeros(m)
    for i in range(n):
        node_of[i] = 0
    open_[0] = True
    for k in range(m):
        feature[k] = -1
        threshold[k] = 0.0
        value[k] = 0.0
    for depth in range(max_depth + 1):
        lo = (1 << depth) - 1
        hi = (1 << (depth + 1)) - 1
        for k in range(lo, hi):
            cnt[k] = 0
            tot[k] = 0.0
            sq[k] = 0.0
            hsum[k] = 0.0
            best_gain[k] = 0.0
            best_feat[k] = -1
        for i in range(n):
            k = node_of[i]
            cnt[k] += 1
            tot[k] += r[i]
            sq[k] += r[i] * r[i]
            hsum[k] += h[i]
        if depth < max_depth:
            for f in range(p):
                for k in range(lo, hi):
                    cnt_l[k] = 0
                    sum_l[k] = 0.0
                for j in range(n):
                    i = order[f, j]
                    k = node_of[i]
                    if k < lo or not open_[k]:
                        continue
                    v = x[i, f]
                    nl = cnt_l[k]
                    nr = cnt[k] - nl
                    if nl >= min_leaf and nr >= min_leaf and v > last[k]:
                        sl = sum_l[k]
                        sr = tot[k] - sl
                        gain = sl * sl / nl + sr * sr / nr - tot[k] * tot[k] / cnt[k]
                        if gain > best_gain[k] and gain > GAIN_RTOL * sq[k]:
                            best_gain[k] = gain
                            best_feat[k] = f
                            thr = 0.5 * (last[k] + v)
                            if thr >= v:
                                thr = last[k]
                            best_thr[k] = thr
                    cnt_l[k] = nl + 1
                    sum_l[k] += r[i]
                    last[k] = v
        for k in range(lo, hi):
            if not open_[k]:
                continue
            if depth < max_depth and best_feat[k] >= 0:
                feature[k] = best_feat[k]
                threshold[k] = best_thr[k]
                open_[2 * k + 1] = True
                open_[2 * k + 2] = True
            else:
                value[k] = tot[k] / hsum[k] if hsum[k] > 1e-300 else 0.0
            open_[k] = False
        if depth < max_depth:
            for i in range(n):
                k = node_of[i]
                f = feature[k]
                if k >= lo and f >= 0:
                    if x[i, f] <= threshold[k]:
                        node_of[i] = 2 * k + 1
                    else:
                        node_of[i] = 2 * k + 2


@optional_njit(cache=True, nogil=True)
def _boost_nb(x, y, order, f0, tree_count, max_depth, min_leaf, rate):
    n = x.shape[0]
    m = (1 << (max_depth + 1)) - 1
    feature = np.full((tree_count, m), -1, np.int64)
    threshold = np.zeros((tree_count, m))
    value = np.zeros((tree_count, m))
    node_of = np.zeros(n, np.int64)
    score = np.full(n, f0)
    r = np.empty(n)
    h = np.empty(n)
    for t in range(tree_count):
        prob = _expit_nb(score)
        for i in range(n):
            r[i] = y[i] - prob[i]
            h[i] = prob[i] * (1.0 - prob[i])
        _fit_tree_nb(x, order, r, h, max_depth, min_leaf, feature[t], threshold[t], value[t], node_of)
        for k in range(m):
            value[t, k] *= rate
        for i in range(n):
            score[i] += value[t, node_of[i]]
    return feature, threshold, value


@optional_njit(cache=True, nogil=True)
def _predict_nb(x, f0, feature, threshold, value):
    n = x.shape[0]
    out = np.full(n, f0)
    for i in range(n):
        s = f0
        for t in range(feature.shape[0]):
            k = 0
            while feature[t, k] >= 0:
                if x[i, feature[t, k]] <= threshold[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            s += value[t, k]
        out[i] = s
    return out


# --- numpy fallback ----------------------------------------------------------------


def _expit_np(f):
    out = np.empty_like(f)
    pos = f >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-f[pos]))
    ez = np.exp(f[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fit_tree_np(x, order, r, h, max_depth, min_leaf, m):
    n, p = x.shape
    feature = np.full(m, -1, np.int64)
    threshold = np.zeros(m)
    value = np.zeros(m)
    node_of = np.zeros(n, np.int64)
    open_nodes = [0]
    for depth in range(max_depth + 1):
        if not open_nodes:
            break
        cnt = np.bincount(node_of, minlength=m)
        tot = np.bincount(node_of, weights=r, minlength=m)
        sq = np.bincount(node_of, weights=r * r, minlength=m)
        hsum = np.bincount(node_of, weights=h, minlength=m)
        next_open = []
        for k in open_nodes:
            split = None
            if depth < max_depth and cnt[k] >= 2 * min_leaf:
                member = node_of == k
                best = 0.0
                for f in range(p):
                    idx = order[f][member[order[f]]]
                    v = x[idx, f]
                    cl = np.cumsum(r[idx])
                    nl = np.arange(1, idx.size + 1)
                    ok = (nl[:-1] >= min_leaf) & (idx.size - nl[:-1] >= min_leaf) & (v[1:] > v[:-1])
                    if not ok.any():
                        continue
                    j = np.flatnonzero(ok)
                    sl = cl[j]
                    sr = tot[k] - sl
                    nlj = nl[j]
                    nrj = cnt[k] - nlj
                    gain = sl * sl / nlj + sr * sr / nrj - tot[k] * tot[k] / cnt[k]
                    b = int(np.argmax(gain))
                    g = gain[b]
                    if g > best and g > GAIN_RTOL * sq[k]:
                        best = g
                        lo_v, hi_v = v[j[b]], v[j[b] + 1]
                        thr = 0.5 * (lo_v + hi_v)
                        if thr >= hi_v:
                            thr = lo_v
                        split = (f, thr)
            if split is not None:
                feature[k], threshold[k] = split
                next_open += [2 * k + 1, 2 * k + 2]
                member = node_of == k
                go_left = x[:, split[0]] <= split[1]
                node_of[member & go_left] = 2 * k + 1
                node_of[member & ~go_left] = 2 * k + 2
            else:
                value[k] = tot[k] / hsum[k] if hsum[k] > 1e-300 else 0.0
        open_nodes = next_open
    return feature, threshold, value, node_of


def _boost_np(x, y, order, f0, tree_count, max_depth, min_leaf, rate):
    m = (1 << (max_depth + 1)) - 1
    feature = np.full((tree_count, m), -1, np.int64)
    threshold = np.zeros((tree_count, m))
    value = np.zeros((tree_count, m))
    score = np.full(x.shape[0], f0)
    for t in range(tree_count):
        prob = _expit_np(score)
        r = y - prob
        h = prob * (1.0 - prob)
        feature[t], threshold[t], v, node_of = _fit_tree_np(x, order, r, h, max_depth, min_leaf, m)
        value[t] = v * rate
        score += value[t][node_of]
    return feature, threshold, value


def _predict_np(x, f0, feature, threshold, value):
    n = x.shape[0]
    out = np.full(n, f0)
    rows = np.arange(n)
    depth = int(np.log2(feature.shape[1] + 1)) - 1
    for t in range(feature.shape[0]):
        k = np.zeros(n, np.int64)
        for _ in range(depth):
            f = feature[t, k]
            internal = f >= 0
            if not internal.any():
                break
            xv = x[rows, np.where(internal, f, 0)]
            left = xv <= threshold[t, k]
            k = np.where(internal, np.where(left, 2 * k + 1, 2 * k + 2), k)
        out += value[t, k]
    return out


# --- dispatch ----------------------------------------------------------------------


def presort(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T.astype(np.int64))


def boost(x, y, f0, tree_count, max_depth, min_leaf, rate, use_numba: bool | None = None):
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    order = presort(x)
    fn = _boost_nb if use_numba else _boost_np
    return fn(x, y, order, float(f0), int(tree_count), int(max_depth), int(min_leaf), float(rate))


def predict_scores(x, f0, feature, threshold, value, use_numba: bool | None = None):
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    x = np.ascontiguousarray(x, dtype=np.float64)
    fn = _predict_nb if use_numba else _predict_np
    return fn(x, float(f0), feature, threshold, value)
