"""Backward scheme on the walk lattice, with exact law propagation.

One backward step from time index k+1 to k does, per start atom:

1. ``Z[i, k] = (Y[i, k+1] - Y[i+1, k+1]) / (2 sqrt(h))`` -- the discrete
   martingale representation; ``Z[., k]`` lives on step-k nodes but stands
   for the process value at ``t_{k+1}``.
2. Assemble the laws of Y and Z at ``t_{k+1}`` as probability-weighted
   mixtures of the node images across all start atoms.  They are complete
   before any step-k node is updated.
3. ``Y[i, k] = (Y[i, k+1] + Y[i+1, k+1]) / 2 + h/2 * (f(tau, B[i, k],
   Y[i, k+1], Z[i, k], law_Y, law_Z) + f(tau, B[i, k], Y[i+1, k+1],
   Z[i, k], law_Y, law_Z))`` with ``tau = t_{k+1} and t_{n-1}`` clamped.

The default scheme evaluates the generator at the two child values of Y
(averaged); the ``fixed_point`` variant instead iterates
``y <- E_k[Y_{k+1}] + h f(tau, x, y, Z, laws)`` to tolerance, which
requires ``lipschitz * h < 1``.

The time passed to the generator is ``t_{k+1} and t_{n-1}`` by default; a
config switch (``driver_time="current"``) selects ``t_k`` instead, which
matches writing the backward loop with the loop index as the time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._util import atomic_write_text, format_float
from .driver import FrozenDriver, MeanFieldDriver, TerminalCondition, freeze
from .errors import NumericError, ParameterError
from .lattice import Lattice, LatticeParams, build_lattice, _column_offset, _packed_size
from .law import DiscreteLaw, dirac, make_law, mixture

log = logging.getLogger("mfbsde")

_SCHEMES = ("explicit", "fixed_point")
_DRIVER_TIMES = ("next_clamped", "current")


@dataclass(frozen=True)
class SolveConfig:
    """Grid and scheme selection for a backward solve."""

    n: int
    T: float
    start_step: int = 0
    scheme: str = "explicit"
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    driver_time: str = "next_clamped"

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if not self.T > 0.0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if not 0 <= self.start_step <= self.n:
            raise ParameterError("start_step must lie in [0, n]")
        if self.scheme not in _SCHEMES:
            raise ParameterError(f"scheme must be one of {_SCHEMES}")
        if self.driver_time not in _DRIVER_TIMES:
            raise ParameterError(f"driver_time must be one of {_DRIVER_TIMES}")
        if not self.fp_tol > 0.0 or self.fp_max_iter < 1:
            raise ParameterError("invalid fixed-point settings")

    @property
    def h(self) -> float:
        return self.T / self.n


@dataclass(frozen=True)
class InitialLaw:
    """Discrete start distribution (one lattice is solved per atom)."""

    law: DiscreteLaw = field(default_factory=lambda: dirac(0.0))


@dataclass
class SolutionSurface:
    """Node-indexed Y and Z arrays on one lattice.

    ``Y`` covers steps ``start..n``; ``Z`` covers ``start..n-1`` in node
    indexing, column k representing the process value at ``t_{k+1}``
    (measurable at ``t_k``).  Both are packed upper-triangular arrays with
    the same offset map as the lattice.
    """

    lattice: Lattice
    Y: np.ndarray
    Z: np.ndarray
    scheme: str = "explicit"
    fp_iterations: int = 0

    def _depth(self, step: int) -> int:
        return self.lattice._check_step(step)

    def y_column(self, step: int) -> np.ndarray:
        d = self._depth(step)
        return self.Y[_column_offset(d) : _column_offset(d) + d + 1]

    def z_column(self, step: int) -> np.ndarray:
        d = self._depth(step)
        if step >= self.lattice.params.n:
            raise IndexError("Z columns exist for steps start..n-1 only")
        return self.Z[_column_offset(d) : _column_offset(d) + d + 1]

    def y_at_displacement(self, step: int, net_disp) -> np.ndarray:
        """Y at the nodes with given up-minus-down displacement from the root."""
        nodes = self.lattice.node_of_displacement(step, net_disp)
        return self.y_column(step)[nodes]

    def law_y_at(self, step: int) -> DiscreteLaw:
        """Image of the step-k node law under Y[., k] (this tree only)."""
        return make_law(self.y_column(step), self.lattice.column_probs(step))

    def law_z_at(self, step: int) -> DiscreteLaw:
        """Law of Z at time index ``step`` (from the step-1 node column)."""
        if step <= self.lattice.params.start_step:
            raise IndexError("Z law defined for steps start+1..n")
        return make_law(
            self.z_column(step - 1), self.lattice.column_probs(step - 1)
        )

    @property
    def y_root(self) -> float:
        return float(self.y_column(self.lattice.params.start_step)[0])


@dataclass
class MeanFieldSolution:
    """Per-atom surfaces plus the mixed law sequences of the global solve.

    ``law_y[k]`` is the law of Y at ``t_k`` (entries ``start..n``);
    ``law_z[k]`` is the law of Z at ``t_k`` (entries ``start+1..n``, with
    the slot at ``start`` aliased to ``start+1`` so the sequence is total).
    """

    surfaces: tuple[SolutionSurface, ...]
    law_y: list[Optional[DiscreteLaw]]
    law_z: list[Optional[DiscreteLaw]]
    xi: DiscreteLaw
    config: SolveConfig
    generator: MeanFieldDriver
    terminal: TerminalCondition

    @property
    def y0(self) -> float:
        """Mean of Y at the start time (the solved value when xi is a point)."""
        return self.law_y[self.config.start_step].mean()

    def frozen_driver(self, clamp_z_law: bool = False) -> FrozenDriver:
        """Freeze the generator at this solution's own law sequences.

        With the default ``clamp_z_law=False`` the frozen lookup matches the
        sub-tree scheme exactly (laws at ``t_{k+1}`` plugged unclamped), so
        re-solving any sub-tree reproduces this solution.
        """
        return freeze(
            self.generator, self.law_y, self.law_z, self.config.n,
            self.config.T, clamp_z_law=clamp_z_law,
        )


def _check_lipschitz(lipschitz, cfg: SolveConfig) -> None:
    if lipschitz is None:
        return
    if lipschitz * cfg.h >= 1.0:
        if cfg.scheme == "fixed_point":
            raise ParameterError(
                f"fixed-point scheme needs lipschitz*h < 1, got "
                f"{lipschitz * cfg.h:.3g}; increase n"
            )
        log.warning(
            "lipschitz*h = %.3g >= 1; the backward recursion may amplify errors",
            lipschitz * cfg.h,
        )


def _finite_or_raise(values: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(values)):
        node = int(np.argmax(~np.isfinite(np.atleast_1d(values))))
        raise NumericError(f"non-finite driver output at step {step}, node {node}")


def _eval_vectorized(fn, x_col, y_col, z_col) -> np.ndarray:
    out = np.asarray(fn(x_col, y_col, z_col), dtype=float)
    if out.shape != y_col.shape:
        out = np.broadcast_to(out, y_col.shape).copy()
    return out


def _eval_scalar(fn, x_col, y_col, z_col) -> np.ndarray:
    return np.array(
        [fn(float(x), float(y), float(z)) for x, y, z in zip(x_col, y_col, z_col)]
    )


class _StepEvaluator:
    """Binds a generator to one backward step and applies the time policy."""

    def __init__(self, cfg: SolveConfig):
        self.cfg = cfg

    def bind_meanfield(self, f: MeanFieldDriver, k: int, law_y, law_z):
        step_used, t_used = self._time_args(k)

        def fn(x, y, z):
            return f.eval(step_used, t_used, x, y, z, law_y, law_z)

        return fn, f.vectorized

    def bind_frozen(self, frozen: FrozenDriver, k: int):
        cfg = self.cfg
        if cfg.driver_time == "current":
            step_raw = k
        else:
            step_raw = k + 1  # FrozenDriver clamps internally

        def fn(x, y, z):
            return frozen.eval(step_raw, x, y, z)

        return fn, frozen.vectorized

    def _time_args(self, k: int):
        cfg = self.cfg
        if cfg.driver_time == "current":
            return k, k * cfg.h
        step_used = min(k + 1, cfg.n - 1)
        return step_used, step_used * cfg.h


def _backward_sweep(lat: Lattice, terminal_values: np.ndarray, step_driver,
                    cfg: SolveConfig, law_hook=None) -> SolutionSurface:
    """Run the backward recursion on one lattice.

    ``step_driver(k)`` returns ``(fn, vectorized)`` where ``fn(x, y, z)``
    evaluates the generator for backward step k.  ``law_hook(k, z_col)``,
    when given, is called right after the Z column at step k is formed and
    before any Y update, and again as ``law_hook(k, None)`` once the Y
    column at k is final; the mean-field solve uses it to assemble laws at
    the correct moments.
    """
    params = lat.params
    j0, n, depth = params.start_step, params.n, params.depth
    h = cfg.h
    two_step = 2.0 * lat.sqrt_h

    Y = np.empty(_packed_size(depth))
    Z = np.empty(_packed_size(depth - 1)) if depth > 0 else np.empty(0)
    y_col = np.asarray(terminal_values, dtype=float)
    if y_col.shape != (depth + 1,):
        raise ParameterError("terminal values must match the last column")
    off = _column_offset(depth)
    Y[off : off + depth + 1] = y_col
    max_iters = 0

    for k in range(n - 1, j0 - 1, -1):
        d = k - j0
        y_next = Y[_column_offset(d + 1) : _column_offset(d + 1) + d + 2]
        y_up, y_dn = y_next[:-1], y_next[1:]
        z_col = (y_up - y_dn) / two_step
        Z[_column_offset(d) : _column_offset(d) + d + 1] = z_col
        if law_hook is not None:
            law_hook(k, z_col)
        fn, vectorized = step_driver(k)
        x_col = lat.column_values(k)
        evaluate = _eval_vectorized if vectorized else _eval_scalar
        y_cond = 0.5 * (y_up + y_dn)
        if cfg.scheme == "explicit":
            f_up = evaluate(fn, x_col, y_up, z_col)
            f_dn = evaluate(fn, x_col, y_dn, z_col)
            _finite_or_raise(f_up, k)
            _finite_or_raise(f_dn, k)
            y_new = y_cond + (0.5 * h) * (f_up + f_dn)
        else:
            y_new, iters = _fixed_point_column(
                evaluate, fn, x_col, y_cond, z_col, h, cfg, k
            )
            max_iters = max(max_iters, iters)
        Y[_column_offset(d) : _column_offset(d) + d + 1] = y_new
        if law_hook is not None:
            law_hook(k, None)

    Y.flags.writeable = False
    Z.flags.writeable = False
    return SolutionSurface(lattice=lat, Y=Y, Z=Z, scheme=cfg.scheme,
                           fp_iterations=max_iters)


def _fixed_point_column(evaluate, fn, x_col, y_cond, z_col, h, cfg, step):
    """Iterate y = E_k[Y_{k+1}] + h f(., y, .) on a whole column."""
    y = y_cond.copy()
    prev_delta = np.inf
    for it in range(1, cfg.fp_max_iter + 1):
        f_val = evaluate(fn, x_col, y, z_col)
        _finite_or_raise(f_val, step)
        y_new = y_cond + h * f_val
        delta = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        if delta <= cfg.fp_tol:
            return y_new, it
        if delta > 4.0 * prev_delta and it > 2:
            raise NumericError(
                f"fixed-point iteration diverging at step {step} "
                f"(delta {delta:.3g})"
            )
        prev_delta = max(delta, 1e-300)
        y = y_new
    raise NumericError(
        f"fixed point did not reach tol {cfg.fp_tol:g} within "
        f"{cfg.fp_max_iter} iterations at step {step}"
    )


def _coerce_xi(xi) -> DiscreteLaw:
    if xi is None:
        return dirac(0.0)
    if isinstance(xi, InitialLaw):
        return xi.law
    if isinstance(xi, DiscreteLaw):
        return xi
    raise ParameterError("xi must be an InitialLaw or DiscreteLaw")


def solve_meanfield(
    g: TerminalCondition,
    f: MeanFieldDriver,
    cfg: SolveConfig,
    xi=None,
) -> MeanFieldSolution:
    """Global mean-field solve from (start_step, xi).

    One lattice per xi atom.  At every backward step the Y and Z laws at
    ``t_{k+1}`` are assembled as weight-mixed node images across all atoms
    before any step-k node is updated, so the generator reads completely
    known marginals.
    """
    xi_law = _coerce_xi(xi)
    _check_lipschitz(f.lipschitz, cfg)
    j0, n = cfg.start_step, cfg.n
    depth = n - j0

    lats = [
        build_lattice(LatticeParams(n=n, T=cfg.T, start_step=j0, start_value=float(a)))
        for a in xi_law.atoms
    ]
    mix_w = xi_law.weights

    law_y: list[Optional[DiscreteLaw]] = [None] * (n + 1)
    law_z: list[Optional[DiscreteLaw]] = [None] * (n + 1)

    terminal_cols = [g.apply(lat.column_values(n)) for lat in lats]
    law_y[n] = mixture(
        [make_law(col, lat.column_probs(n)) for col, lat in zip(terminal_cols, lats)],
        mix_w,
    )

    if depth == 0:
        surfaces = []
        for lat, col in zip(lats, terminal_cols):
            Y = np.asarray(col, dtype=float)
            Y.flags.writeable = False
            surfaces.append(
                SolutionSurface(lattice=lat, Y=Y, Z=np.empty(0), scheme=cfg.scheme)
            )
        return MeanFieldSolution(
            surfaces=tuple(surfaces), law_y=law_y, law_z=law_z, xi=xi_law,
            config=cfg, generator=f, terminal=g,
        )

    evaluator = _StepEvaluator(cfg)
    h = cfg.h
    two_steps = [2.0 * lat.sqrt_h for lat in lats]

    # Column state per atom, walked backward together so laws mix correctly.
    y_cols = [np.asarray(col, dtype=float) for col in terminal_cols]
    Ys = [np.empty(_packed_size(depth)) for _ in lats]
    Zs = [np.empty(_packed_size(depth - 1)) for _ in lats]
    for Y, col in zip(Ys, y_cols):
        off = _column_offset(depth)
        Y[off : off + depth + 1] = col
    max_iters = 0

    for k in range(n - 1, j0 - 1, -1):
        d = k - j0
        z_cols = []
        for a, lat in enumerate(lats):
            y_next = y_cols[a]
            z_col = (y_next[:-1] - y_next[1:]) / two_steps[a]
            Zs[a][_column_offset(d) : _column_offset(d) + d + 1] = z_col
            z_cols.append(z_col)
        law_z[k + 1] = mixture(
            [make_law(z, lat.column_probs(k)) for z, lat in zip(z_cols, lats)],
            mix_w,
        )
        fn, vectorized = evaluator.bind_meanfield(f, k, law_y[k + 1], law_z[k + 1])
        evaluate = _eval_vectorized if vectorized else _eval_scalar
        new_cols = []
        for a, lat in enumerate(lats):
            x_col = lat.column_values(k)
            y_next = y_cols[a]
            y_up, y_dn = y_next[:-1], y_next[1:]
            y_cond = 0.5 * (y_up + y_dn)
            if cfg.scheme == "explicit":
                f_up = evaluate(fn, x_col, y_up, z_cols[a])
                f_dn = evaluate(fn, x_col, y_dn, z_cols[a])
                _finite_or_raise(f_up, k)
                _finite_or_raise(f_dn, k)
                y_new = y_cond + (0.5 * h) * (f_up + f_dn)
            else:
                y_new, iters = _fixed_point_column(
                    evaluate, fn, x_col, y_cond, z_cols[a], h, cfg, k
                )
                max_iters = max(max_iters, iters)
            Ys[a][_column_offset(d) : _column_offset(d) + d + 1] = y_new
            new_cols.append(y_new)
        y_cols = new_cols
        law_y[k] = mixture(
            [make_law(col, lat.column_probs(k)) for col, lat in zip(y_cols, lats)],
            mix_w,
        )

    law_z[j0] = law_z[j0 + 1]
    surfaces = []
    for lat, Y, Z in zip(lats, Ys, Zs):
        Y.flags.writeable = False
        Z.flags.writeable = False
        surfaces.append(
            SolutionSurface(lattice=lat, Y=Y, Z=Z, scheme=cfg.scheme,
                            fp_iterations=max_iters)
        )
    return MeanFieldSolution(
        surfaces=tuple(surfaces), law_y=law_y, law_z=law_z, xi=xi_law,
        config=cfg, generator=f, terminal=g,
    )


def solve_subtree(
    g: TerminalCondition,
    frozen: FrozenDriver,
    cfg: SolveConfig,
    start_step: int,
    x: float,
) -> SolutionSurface:
    """Solve the frozen equation on the sub-tree rooted at (start_step, x).

    The generator's law arguments are read from the frozen sequences at each
    step; nothing else distinguishes this from the global sweep.
    """
    if frozen.n != cfg.n:
        raise ParameterError("frozen driver and config disagree on n")
    _check_lipschitz(frozen.lipschitz, cfg)
    lat = build_lattice(
        LatticeParams(n=cfg.n, T=cfg.T, start_step=start_step, start_value=float(x))
    )
    evaluator = _StepEvaluator(cfg)
    terminal_values = g.apply(lat.column_values(cfg.n))

    def step_driver(k):
        return evaluator.bind_frozen(frozen, k)

    return _backward_sweep(lat, terminal_values, step_driver, cfg)


def surface_to_csv(surface: SolutionSurface, path) -> None:
    """Dump one surface as CSV rows (step, node, B, P, Y, Z)."""
    lat = surface.lattice
    j0, n = lat.params.start_step, lat.params.n
    lines = ["step,node,B,P,Y,Z"]
    for step in range(j0, n + 1):
        b = lat.column_values(step)
        p = lat.column_probs(step)
        y = surface.y_column(step)
        z = surface.z_column(step) if step < n and lat.params.depth > 0 else None
        for i in range(len(b)):
            z_txt = format_float(z[i]) if z is not None else ""
            lines.append(
                f"{step},{i},{format_float(b[i])},{format_float(p[i])},"
                f"{format_float(y[i])},{z_txt}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")
