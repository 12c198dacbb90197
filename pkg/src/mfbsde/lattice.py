"""Recombining binomial lattice for the scaled Rademacher random walk.

The walk takes steps of size sqrt(h), h = T/n, starting at ``(start_step,
start_value)``.  Because an up-down and a down-up move land on the same
node, step ``j`` (absolute time index) holds ``j - start_step + 1`` nodes.
Node ``(i, j)`` is reached after ``i`` down-moves out of ``j - start_step``
moves, so its value is ``x + sqrt(h) * (j - start_step - 2 * i)`` and its
probability is ``C(j - start_step, i) / 2**(j - start_step)``.

Values are formed from the integer net displacement times the step, never
by repeated addition, so node spacings within and across columns are exact
floats (see :func:`mfbsde._util.exact_step`).  Probabilities use the Pascal
recurrence ``P[i, j+1] = (P[i, j] + P[i-1, j]) / 2``, which stays in range
for any ``n`` (no binomial-coefficient overflow) and is exact up to
rounding.

Storage is a flat packed upper-triangular array: column ``j`` (depth
``d = j - start_step``) lives at offset ``d * (d + 1) / 2`` and has
``d + 1`` entries.  ``Lattice.column_*`` return read-only views.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import atomic_write_text, exact_step, format_float
from .errors import ParameterError
from .law import DiscreteLaw, make_law


@dataclass(frozen=True)
class LatticeParams:
    """Shape of a walk lattice: n steps over [0, T], rooted at (j, x)."""

    n: int
    T: float
    start_step: int = 0
    start_value: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if not self.T > 0.0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if not 0 <= self.start_step <= self.n:
            raise ParameterError(
                f"start_step must lie in [0, {self.n}], got {self.start_step}"
            )

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def depth(self) -> int:
        return self.n - self.start_step


def _column_offset(depth: int) -> int:
    return depth * (depth + 1) // 2


def _packed_size(depth: int) -> int:
    return _column_offset(depth + 1)


@dataclass(frozen=True)
class Lattice:
    """Walk values and node probabilities on the recombining tree.

    ``values`` and ``probs`` are packed upper-triangular arrays; use
    ``column_values(step)`` / ``column_probs(step)`` for per-step views.
    ``sqrt_h`` is the step size actually used (sqrt(T/n) rounded so that
    integer multiples are exact).
    """

    params: LatticeParams
    values: np.ndarray
    probs: np.ndarray
    sqrt_h: float

    def _check_step(self, step: int) -> int:
        if not self.params.start_step <= step <= self.params.n:
            raise IndexError(
                f"step {step} outside [{self.params.start_step}, {self.params.n}]"
            )
        return step - self.params.start_step

    def column_values(self, step: int) -> np.ndarray:
        d = self._check_step(step)
        return self.values[_column_offset(d) : _column_offset(d) + d + 1]

    def column_probs(self, step: int) -> np.ndarray:
        d = self._check_step(step)
        return self.probs[_column_offset(d) : _column_offset(d) + d + 1]

    def value_at(self, step: int, node: int) -> float:
        return float(self.column_values(step)[node])

    def node_of_displacement(self, step: int, net_disp) -> np.ndarray:
        """Node index (number of down moves) for a net displacement.

        ``net_disp`` counts up-moves minus down-moves since the root; it must
        have the same parity as the depth of ``step``.
        """
        d = self._check_step(step)
        disp = np.asarray(net_disp)
        if np.any((d - disp) % 2 != 0) or np.any(np.abs(disp) > d):
            raise ParameterError("displacement incompatible with step depth")
        return (d - disp) // 2


def pascal_columns(depth: int):
    """Yield binomial probability columns for depths 0..depth.

    Uses O(depth) memory; the lattice builder consumes the same recurrence.
    The yielded array is reused between iterations, copy if kept.
    """
    col = np.ones(depth + 1)
    yield col[:1]
    for d in range(1, depth + 1):
        # P_new[i] = (P[i] + P[i-1]) / 2, boundaries halve.
        col[d] = 0.5 * col[d - 1]
        col[1:d] = 0.5 * (col[1:d] + col[0 : d - 1])
        col[0] = 0.5 * col[0]
        yield col[: d + 1]


def _fill_pascal(depth: int, out: np.ndarray) -> None:
    out[0] = 1.0
    prev = out[0:1]
    for d in range(1, depth + 1):
        cur = out[_column_offset(d) : _column_offset(d) + d + 1]
        cur[0] = 0.5 * prev[0]
        cur[d] = 0.5 * prev[d - 1]
        cur[1:d] = 0.5 * (prev[1:d] + prev[0 : d - 1])
        prev = cur


def build_lattice(params: LatticeParams) -> Lattice:
    """Build the walk-value tree and its probability table.

    Column values at depth ``d`` are ``x + step * (d - 2i)`` for node
    ``i = 0..d`` (topmost node first).
    """
    depth = params.depth
    step = exact_step(params.h, max(depth, 1))
    values = np.empty(_packed_size(depth))
    probs = np.empty(_packed_size(depth))
    x = float(params.start_value)
    for d in range(depth + 1):
        off = _column_offset(d)
        disp = d - 2 * np.arange(d + 1)
        values[off : off + d + 1] = x + disp * step
    _fill_pascal(depth, probs)
    values.flags.writeable = False
    probs.flags.writeable = False
    return Lattice(params=params, values=values, probs=probs, sqrt_h=step)


def column_law(lat: Lattice, step: int) -> DiscreteLaw:
    """Law of the walk at an absolute step, as a discrete measure."""
    return make_law(lat.column_values(step), lat.column_probs(step))


def lattice_to_csv(lat: Lattice, path) -> None:
    """Dump the tree as CSV rows (step, node_index, value, probability)."""
    lines = ["step,node_index,value,probability"]
    for step in range(lat.params.start_step, lat.params.n + 1):
        vals = lat.column_values(step)
        probs = lat.column_probs(step)
        for i in range(len(vals)):
            lines.append(
                f"{step},{i},{format_float(vals[i])},{format_float(probs[i])}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")
