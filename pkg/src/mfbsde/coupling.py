"""Joint construction of a Brownian path and its embedded random walk.

The walk is read off the Brownian path by successive exit times: tau_k is
the first fine-grid time after tau_{k-1} at which the path has moved by at
least sqrt(h) from its value at tau_{k-1}, and the k-th walk increment is
sqrt(h) times the sign of that move.  Detecting the exit on a grid of mesh
h/m (instead of sampling the exact exit time) biases each increment time
by O(sqrt(h/m)); the walk increments themselves remain exactly +-sqrt(h).

If fewer than the required crossings occur before the simulated path ends,
the path is extended by further simulation until they do (never an error;
the extension count is recorded on the result).

Randomness is counter-based (Philox).  ``skorokhod_couple`` derives its
stream from (seed, trial); the batched samplers used by the Monte-Carlo
harness derive one stream per fixed-size batch from (seed, n, batch), so
every result is reproducible from the master seed and the grid parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import scan_crossings
from ._util import atomic_write_text, exact_step, format_float
from .errors import ParameterError

# Fixed batch width for the experiment samplers; changing it changes the
# random stream layout, so it is part of the reproducibility contract.
BATCH_TRIALS = 1024


def _trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(master_seed), int(trial)]))
    )


def _batch_rng(master_seed: int, n: int, batch: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(
            np.random.SeedSequence([int(master_seed), int(n), int(batch)])
        )
    )


@dataclass
class CoupledPath:
    """One Brownian path with its embedded walk on the same time axis.

    ``brownian[i]`` is the path at fine time ``i * T / (n * m)``; the array
    may extend past ``horizon_index = n * m`` when crossings completed late.
    ``walk[k]`` is the walk value at coarse step k (piecewise constant in
    between), built as sqrt_h times the integer net displacement, so
    increments are exactly +-sqrt_h.  ``crossing_indices[k-1]`` is the fine
    index of the k-th crossing.
    """

    n: int
    T: float
    fine_factor: int
    seed: int
    sqrt_h: float
    brownian: np.ndarray
    walk: np.ndarray
    crossing_indices: np.ndarray
    extensions: int

    @property
    def horizon_index(self) -> int:
        return self.n * self.fine_factor

    @property
    def fine_times(self) -> np.ndarray:
        dt = self.T / (self.n * self.fine_factor)
        return np.arange(len(self.brownian)) * dt

    def lower_bound_statistic(self) -> float:
        return lower_bound_statistic(self.brownian[: self.horizon_index + 1], self.n)


def skorokhod_couple(n: int, T: float, fine_factor: int = 64, seed: int = 0,
                     trial: int = 0) -> CoupledPath:
    """Couple one Brownian path on [0, T] with its embedded n-step walk."""
    paths = couple_batch(n, T, fine_factor, seed, trials=[trial])
    return paths[0]


def couple_batch(n: int, T: float, fine_factor: int, seed: int,
                 trials) -> list[CoupledPath]:
    """Build CoupledPath objects for a list of trial indices.

    Each trial consumes its own (seed, trial) stream, so the output per
    trial is identical whether built alone or in a batch; batching only
    vectorizes the crossing scan.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if fine_factor < 8:
        raise ParameterError("fine_factor must be >= 8")
    if not T > 0.0:
        raise ParameterError("T must be positive")
    trials = list(trials)
    P = len(trials)
    m = fine_factor
    h = T / n
    step = exact_step(h, n)
    fine_std = math.sqrt(T / (n * m))
    L0 = n * m

    rngs = [_trial_rng(seed, t) for t in trials]
    cum = np.empty((P, L0))
    for r, rng in enumerate(rngs):
        np.cumsum(rng.standard_normal(L0) * fine_std, out=cum[r])

    level = np.zeros(P)
    found = np.zeros(P, dtype=np.int64)
    signs = np.zeros((P, n), dtype=np.int8)
    idx = np.zeros((P, n), dtype=np.int64)
    scan_crossings(cum, level, step, signs, idx, found, index_offset=1)

    rows = [cum[r] for r in range(P)]
    extensions = np.zeros(P, dtype=np.int64)
    ext_len = max(4 * m, 256)
    for r in range(P):
        while found[r] < n:
            extensions[r] += 1
            incs = rngs[r].standard_normal(ext_len) * fine_std
            ext = rows[r][-1] + np.cumsum(incs)
            offset = len(rows[r]) + 1
            rows[r] = np.concatenate([rows[r], ext])
            scan_crossings(
                ext[None, :], level[r : r + 1], step,
                signs[r : r + 1], idx[r : r + 1], found[r : r + 1],
                index_offset=offset,
            )

    out = []
    for r, t in enumerate(trials):
        brownian = np.concatenate(([0.0], rows[r]))
        disp = np.cumsum(signs[r], dtype=np.int64)
        walk = np.concatenate(([0.0], disp * step))
        out.append(
            CoupledPath(
                n=n, T=T, fine_factor=m, seed=seed, sqrt_h=step,
                brownian=brownian, walk=walk, crossing_indices=idx[r].copy(),
                extensions=int(extensions[r]),
            )
        )
    return out


def sup_error(path: CoupledPath) -> float:
    """max over the fine grid of |brownian - walk at the underlying step|."""
    hor = path.horizon_index
    i = np.arange(hor + 1)
    walk_vals = path.walk[i // path.fine_factor]
    return float(np.max(np.abs(path.brownian[: hor + 1] - walk_vals)))


def lower_bound_statistic(brownian, n: int) -> float:
    """Half the largest coarse-block increment of a Brownian path on [0, T].

    Any process that is constant on the coarse blocks stays at least this
    far from the path somewhere, which makes the statistic a pathwise lower
    bound for ``sup_error`` up to fine-grid resolution.
    """
    b = np.asarray(brownian, dtype=float)
    if (len(b) - 1) % n != 0:
        raise ParameterError("path length minus one must be divisible by n")
    stride = (len(b) - 1) // n
    coarse = b[::stride]
    return 0.5 * float(np.max(np.abs(np.diff(coarse))))


def walk_and_brownian_at(n: int, T: float, fine_factor: int, k_step: int,
                         fine_index: int, n_trials: int, master_seed: int,
                         batch_range=None):
    """Batched sampler: walk displacement after k_step crossings and the
    Brownian value at a fine index, for n_trials coupled paths.

    Returns ``(disp, b_vals)``: integer net displacements (for node lookup
    on the lattice; the walk value is sqrt_h * disp) and float path values.
    One Philox stream per fixed-size batch; ``batch_range`` restricts to a
    sub-range of batches (used by the threaded harness), with global trial
    count ``n_trials`` fixing the last batch's width.
    """
    if not 0 <= k_step <= n:
        raise ParameterError("k_step must lie in [0, n]")
    m = fine_factor
    h = T / n
    step = exact_step(h, n)
    fine_std = math.sqrt(T / (n * m))
    n_batches = -(-n_trials // BATCH_TRIALS)
    if batch_range is None:
        batch_range = range(n_batches)

    # Enough room for the requested fine index and, with ~4 sigma slack in
    # the exit-time fluctuation, for k_step crossings.
    slack = max(4 * m, int(4.0 * m * math.sqrt(max(k_step, 1))))
    L0 = max(fine_index, k_step * m + slack, m)

    disp_parts = []
    bval_parts = []
    for b in batch_range:
        lo = b * BATCH_TRIALS
        hi = min(lo + BATCH_TRIALS, n_trials)
        P = hi - lo
        if P <= 0:
            continue
        rng = _batch_rng(master_seed, n, b)
        cum = np.cumsum(rng.standard_normal((P, L0)) * fine_std, axis=1)
        level = np.zeros(P)
        found = np.zeros(P, dtype=np.int64)
        signs = np.zeros((P, max(k_step, 1)), dtype=np.int8)
        idx = np.zeros((P, max(k_step, 1)), dtype=np.int64)
        if k_step > 0:
            scan_crossings(cum, level, step, signs, idx, found, index_offset=1)
            last = cum[:, -1].copy()
            ext_len = max(4 * m, 256)
            for r in range(P):
                while found[r] < k_step:
                    incs = rng.standard_normal(ext_len) * fine_std
                    ext = last[r] + np.cumsum(incs)
                    scan_crossings(
                        ext[None, :], level[r : r + 1], step,
                        signs[r : r + 1], idx[r : r + 1], found[r : r + 1],
                        index_offset=0,  # indices unused here
                    )
                    last[r] = ext[-1]
        disp_parts.append(
            signs[:, :k_step].astype(np.int64).sum(axis=1)
            if k_step > 0
            else np.zeros(P, dtype=np.int64)
        )
        bval_parts.append(cum[:, fine_index - 1] if fine_index > 0 else np.zeros(P))

    return np.concatenate(disp_parts), np.concatenate(bval_parts)


def couple_to_csv(path: CoupledPath, out) -> None:
    """Dump one coupled path as CSV rows (fine_time, brownian, walk)."""
    m = path.fine_factor
    times = path.fine_times
    lines = ["fine_time,brownian,walk"]
    for i in range(path.horizon_index + 1):
        w = path.walk[i // m]
        lines.append(
            f"{format_float(times[i])},{format_float(path.brownian[i])},"
            f"{format_float(w)}"
        )
    atomic_write_text(out, "\n".join(lines) + "\n")
