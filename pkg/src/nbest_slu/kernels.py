"""Hot numeric kernels with numba and pure-numpy implementations.

Both variants are always importable under ``*_numba`` / ``*_numpy`` names so
tests and the benchmark can compare them; the unsuffixed names point at the
variant selected by :mod:`nbest_slu._accel`.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit

__all__ = [
    "edit_distance",
    "edit_distance_numba",
    "edit_distance_numpy",
    "roc_counts",
    "roc_counts_numba",
    "roc_counts_numpy",
    "NUMBA_ENABLED",
]


def edit_distance_numpy(hyp: np.ndarray, ref: np.ndarray) -> int:
    """Levenshtein distance between two integer token arrays.

    Each DP row is computed without a Python inner loop: the left-to-right
    insertion dependency ``row[j] = min(t[j], row[j-1] + 1)`` unrolls to
    ``j + cummin(t[k] - k)``.
    """
    m = ref.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    offs = np.arange(m + 1, dtype=np.int64)
    for tok in hyp:
        sub = prev[:-1] + (ref != tok)
        t = np.empty(m + 1, dtype=np.int64)
        t[0] = prev[0] + 1
        t[1:] = np.minimum(prev[1:] + 1, sub)
        prev = np.minimum.accumulate(t - offs) + offs
    return int(prev[m])


@njit(cache=False)
def _edit_distance_loop(hyp, ref):
    m = ref.shape[0]
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(hyp.shape[0]):
        cur[0] = i + 1
        h = hyp[i]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ref[j - 1] == h else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def edit_distance_numba(hyp: np.ndarray, ref: np.ndarray) -> int:
    return int(_edit_distance_loop(hyp.astype(np.int64), ref.astype(np.int64)))


def roc_counts_numpy(scores: np.ndarray, golds: np.ndarray):
    """Cumulative (threshold, tp, fp) at every distinct score, descending.

    Entry ``i`` counts examples with ``score >= thresholds[i]``.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    g = golds[order].astype(np.int64)
    tp = np.cumsum(g)
    fp = np.cumsum(1 - g)
    last = np.ones(s.shape[0], dtype=bool)
    last[:-1] = s[1:] != s[:-1]
    return s[last].copy(), tp[last].copy(), fp[last].copy()


@njit(cache=False)
def _roc_counts_loop(s, g):
    n = s.shape[0]
    thr = np.empty(n, dtype=np.float64)
    tp = np.empty(n, dtype=np.int64)
    fp = np.empty(n, dtype=np.int64)
    k = 0
    ctp = 0
    cfp = 0
    for i in range(n):
        if g[i] == 1:
            ctp += 1
        else:
            cfp += 1
        if i == n - 1 or s[i + 1] != s[i]:
            thr[k] = s[i]
            tp[k] = ctp
            fp[k] = cfp
            k += 1
    return thr[:k], tp[:k], fp[:k]


def roc_counts_numba(scores: np.ndarray, golds: np.ndarray):
    order = np.argsort(-scores, kind="stable")
    s = np.ascontiguousarray(scores[order], dtype=np.float64)
    g = np.ascontiguousarray(golds[order], dtype=np.int64)
    thr, tp, fp = _roc_counts_loop(s, g)
    return thr.copy(), tp.copy(), fp.copy()


if NUMBA_ENABLED:
    edit_distance = edit_distance_numba
    roc_counts = roc_counts_numba
else:
    edit_distance = edit_distance_numpy
    roc_counts = roc_counts_numpy
