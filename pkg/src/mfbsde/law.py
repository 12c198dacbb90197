"""Finitely supported probability measures on the reals.

A :class:`DiscreteLaw` keeps sorted atoms with positive weights summing to
one.  These carry the per-step marginals consumed by mean-field drivers,
and the module provides the exact one-dimensional Wasserstein-p distance
between two such laws via the merged-quantile sweep: the p-distance equals
the L^p distance of the quantile functions, which are step functions with
finitely many breakpoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import atomic_write_text, format_float
from .errors import ParameterError

# Atoms closer than this (relative to max(1, |atom|)) are merged. Tree
# columns are bit-identical by construction; the tolerance only guards
# laws produced by post-arithmetic (images under a terminal map etc).
ATOM_MERGE_RTOL = 1e-12


@dataclass(frozen=True)
class DiscreteLaw:
    """Sorted atoms with merged duplicates and weights normalized to 1.

    Construct through :func:`make_law`; the raw constructor assumes the
    invariants already hold.  Instances are immutable and freely shareable
    across threads.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.atoms)

    def mean(self) -> float:
        return float(self.atoms @ self.weights)

    def moment(self, p: float) -> float:
        """Absolute p-th moment, sum of w_i * |a_i|**p."""
        if p < 0:
            raise ParameterError(f"moment order must be >= 0, got {p}")
        return float(np.abs(self.atoms) ** p @ self.weights)

    def variance(self) -> float:
        m = self.mean()
        return float((self.atoms - m) ** 2 @ self.weights)

    def shifted(self, delta: float) -> "DiscreteLaw":
        """Translate every atom by delta (Wasserstein-p distance |delta|)."""
        if delta == 0.0:
            return self
        return make_law(self.atoms + delta, self.weights)


def dirac(value: float) -> DiscreteLaw:
    return DiscreteLaw(
        atoms=_frozen(np.array([float(value)])), weights=_frozen(np.array([1.0]))
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def make_law(atoms, weights) -> DiscreteLaw:
    """Sort, merge near-duplicate atoms, renormalize weights to sum one.

    Raises :class:`ParameterError` on empty input, mismatched lengths,
    negative weights or an all-zero weight vector.
    """
    a = np.asarray(atoms, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if a.size == 0:
        raise ParameterError("law needs at least one atom")
    if a.size != w.size:
        raise ParameterError(f"{a.size} atoms but {w.size} weights")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(a)):
        raise ParameterError("weights must be finite and nonnegative, atoms finite")
    total = w.sum()
    if not total > 0.0:
        raise ParameterError("weights must have positive sum")

    order = np.argsort(a, kind="stable")
    a = a[order]
    w = w[order]

    # Merge runs of atoms within the relative tolerance of their neighbor.
    tol = ATOM_MERGE_RTOL * np.maximum(1.0, np.abs(a[:-1]))
    new_group = np.empty(a.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = np.diff(a) > tol
    group = np.cumsum(new_group) - 1
    n_groups = group[-1] + 1
    merged_w = np.zeros(n_groups)
    np.add.at(merged_w, group, w)
    merged_a = a[new_group]

    keep = merged_w > 0.0
    merged_a = merged_a[keep]
    merged_w = merged_w[keep] / total
    if merged_a.size == 0:
        raise ParameterError("all weights are zero")
    return DiscreteLaw(atoms=_frozen(merged_a), weights=_frozen(merged_w))


def mixture(laws, mix_weights) -> DiscreteLaw:
    """Weighted mixture of laws, merged into a single discrete law."""
    mw = np.asarray(mix_weights, dtype=float)
    if len(laws) != mw.size:
        raise ParameterError("one mixture weight per law required")
    atoms = np.concatenate([law.atoms for law in laws])
    weights = np.concatenate([w * law.weights for law, w in zip(laws, mw)])
    return make_law(atoms, weights)


def wasserstein(a: DiscreteLaw, b: DiscreteLaw, p: float = 2.0) -> float:
    """Exact Wasserstein-p distance between two discrete laws, p >= 1.

    Computed as the L^p norm of the quantile-function difference by sweeping
    the union of cumulative-weight breakpoints.  Symmetric, nonnegative, and
    zero exactly when the laws coincide.
    """
    if p < 1.0:
        raise ParameterError(f"wasserstein order must be >= 1, got {p}")
    ca = np.cumsum(a.weights)
    cb = np.cumsum(b.weights)
    levels = np.union1d(ca[:-1], cb[:-1])
    levels = levels[(levels > 0.0) & (levels < 1.0)]
    edges = np.concatenate(([0.0], levels, [1.0]))
    seg = np.diff(edges)
    starts = edges[:-1]
    # Clip guards the case where float cumsums top out marginally below a
    # breakpoint contributed by the other law.
    ia = np.minimum(np.searchsorted(ca, starts, side="right"), len(ca) - 1)
    ib = np.minimum(np.searchsorted(cb, starts, side="right"), len(cb) - 1)
    qa = a.atoms[ia]
    qb = b.atoms[ib]
    gaps = np.abs(qa - qb)
    if p == 1.0:
        return float(seg @ gaps)
    if p == 2.0:
        return float(np.sqrt(seg @ gaps**2))
    return float((seg @ gaps**p) ** (1.0 / p))


def coarsen(law: DiscreteLaw, max_atoms: int) -> DiscreteLaw:
    """Optional quantile coarsening to at most ``max_atoms`` support points.

    Splits [0, 1] into equal-mass bins and replaces each bin by its
    conditional mean, preserving the overall mean.  Off by default
    everywhere; exactness first.
    """
    if max_atoms < 1:
        raise ParameterError("max_atoms must be >= 1")
    if len(law) <= max_atoms:
        return law
    edges = np.linspace(0.0, 1.0, max_atoms + 1)
    cum = np.concatenate(([0.0], np.cumsum(law.weights)))
    cum[-1] = 1.0
    atoms = np.empty(max_atoms)
    weights = np.empty(max_atoms)
    for k in range(max_atoms):
        lo, hi = edges[k], edges[k + 1]
        mass = np.clip(np.minimum(cum[1:], hi) - np.maximum(cum[:-1], lo), 0.0, None)
        weights[k] = hi - lo
        atoms[k] = (mass @ law.atoms) / weights[k]
    return make_law(atoms, weights)


def law_to_csv(law: DiscreteLaw, path) -> None:
    """Dump as CSV rows (atom, weight)."""
    lines = ["atom,weight"]
    for a, w in zip(law.atoms, law.weights):
        lines.append(f"{format_float(a)},{format_float(w)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
