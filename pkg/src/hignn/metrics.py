"""DTW alignment and objective metrics."""
from __future__ import annotations

import math

import numba
import numpy as np

MCD_CONST = 10.0 / math.log(10.0)


@numba.njit(cache=True)
def _dtw_table(a, b):
    ta, tb = a.shape[0], b.shape[0]
    acc = np.full((ta, tb), np.inf)
    for i in range(ta):
        for j in range(tb):
            d = 0.0
            for k in range(a.shape[1]):
                diff = a[i, k] - b[j, k]
                d += diff * diff
            d = math.sqrt(d)
            if i == 0 and j == 0:
                acc[i, j] = d
                continue
            best = np.inf
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
            acc[i, j] = d + best
    return acc


def dtw_align(a, b) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).

    Frame distance is Euclidean; 1-D inputs are treated as single-channel.
    Ties on backtracking prefer the diagonal.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("dtw_align: empty input")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dtw_align: channel mismatch {a.shape[1]} vs {b.shape[1]}")
    acc = _dtw_table(np.ascontiguousarray(a), np.ascontiguousarray(b))
    i, j = a.shape[0] - 1, b.shape[0] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        cands = []
        if i > 0 and j > 0:
            cands.append((acc[i - 1, j - 1], 0, i - 1, j - 1))
        if i > 0:
            cands.append((acc[i - 1, j], 1, i - 1, j))
        if j > 0:
            cands.append((acc[i, j - 1], 2, i, j - 1))
        _, _, i, j = min(cands)
        path.append((i, j))
    path.reverse()
    return path, float(acc[-1, -1])


def f0_rmse(f0_pred, f0_true, path) -> float:
    p = np.asarray(path)
    d = np.asarray(f0_pred)[p[:, 0]] - np.asarray(f0_true)[p[:, 1]]
    return float(np.sqrt(np.mean(d ** 2)))


def mcd_proxy(mel_pred, mel_true, path) -> float:
    p = np.asarray(path)
    d = np.asarray(mel_pred)[p[:, 0]] - np.asarray(mel_true)[p[:, 1]]
    return float(np.mean(MCD_CONST * np.sqrt(2.0 * np.sum(d ** 2, axis=1))))


def duration_mse(pred, true) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("duration_mse: shape mismatch")
    return float(np.mean((pred - true) ** 2))
