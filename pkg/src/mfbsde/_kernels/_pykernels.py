"""Numpy fallback for the compiled scan kernel.

Scans batches of cumulative path values for successive threshold crossings
(first index where the path moved by at least ``threshold`` from the last
crossing value).  The windowed lockstep below reproduces the sequential
compiled scan decision-for-decision: comparisons are made on identical
float values, so outputs match the extension bit for bit.
"""
from __future__ import annotations

import numpy as np

_WINDOW = 256


def scan_crossings(values, level, threshold, signs, idx, found, index_offset=0):
    """Record up to signs.shape[1] crossings per row of ``values``.

    Parameters
    ----------
    values : (P, L) float64
        Cumulative path values; column j is absolute fine index
        ``index_offset + j``.
    level : (P,) float64, in/out
        Reference value of the last crossing per row.
    threshold : float
        Crossing size; a crossing happens at the first j with
        ``|values[p, j] - level[p]| >= threshold``.
    signs : (P, N) int8, out
        +1 or -1 per crossing.
    idx : (P, N) int64, out
        Absolute fine index of each crossing.
    found : (P,) int64, in/out
        Crossings recorded so far per row; scanning resumes from there.
    """
    P, L = values.shape
    n_target = signs.shape[1]
    pos = np.zeros(P, dtype=np.int64)
    active = np.flatnonzero((found < n_target) & (pos < L))
    while active.size:
        starts = pos[active]
        width = min(_WINDOW, L)
        cols = starts[:, None] + np.arange(width, dtype=np.int64)[None, :]
        valid = cols < L
        cols_clipped = np.minimum(cols, L - 1)
        window = values[active[:, None], cols_clipped]
        hit = (np.abs(window - level[active][:, None]) >= threshold) & valid
        has_hit = hit.any(axis=1)
        j_rel = np.argmax(hit, axis=1)

        rows = active[has_hit]
        if rows.size:
            j_abs = starts[has_hit] + j_rel[has_hit]
            vals = values[rows, j_abs]
            k = found[rows]
            signs[rows, k] = np.where(vals > level[rows], 1, -1).astype(np.int8)
            idx[rows, k] = index_offset + j_abs
            level[rows] = vals
            found[rows] = k + 1
            pos[rows] = j_abs + 1

        rows_miss = active[~has_hit]
        pos[rows_miss] += width
        active = np.flatnonzero((found < n_target) & (pos < L))
