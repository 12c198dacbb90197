"""Generators f(t, x, y, z, law_Y, law_Z), their frozen forms and built-ins.

Drivers receive both the time index and the physical time: the backward
scheme evaluates the generator at the clamped next grid time, and passing
the integer index avoids float time comparisons downstream.  A driver with
``vectorized=True`` must accept numpy arrays for x, y, z (broadcast) and
return an array of the same shape; the two law arguments are always plain
:class:`~mfbsde.law.DiscreteLaw` objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .law import DiscreteLaw


class MeanFieldDriver:
    """Base generator interface.

    Subclasses implement ``eval(step, t, x, y, z, law_y, law_z)`` and must
    be safe for concurrent read-only evaluation.  ``lipschitz`` is optional
    metadata (constant in (y, z, law_y, law_z)); the solver checks
    lipschitz * h < 1 where the fixed-point form requires it.
    """

    lipschitz: Optional[float] = None
    holder: Optional[tuple] = None
    vectorized: bool = False

    def eval(self, step, t, x, y, z, law_y: DiscreteLaw, law_z: DiscreteLaw):
        raise NotImplementedError


class MeanShiftDriver(MeanFieldDriver):
    """f = y + E[Y] + E[Z]; ignores t, x and z."""

    lipschitz = 1.0
    vectorized = True

    def eval(self, step, t, x, y, z, law_y, law_z):
        return y + law_y.mean() + law_z.mean()


class ZeroDriver(MeanFieldDriver):
    """f identically zero; the scheme then reproduces the martingale case."""

    lipschitz = 0.0
    vectorized = True

    def eval(self, step, t, x, y, z, law_y, law_z):
        return np.zeros_like(np.asarray(y, dtype=float))


class LawFreeDriver(MeanFieldDriver):
    """Wrap a plain callable f(t, x, y, z) that ignores the law arguments."""

    def __init__(self, fn: Callable, lipschitz: Optional[float] = None,
                 vectorized: bool = False):
        self._fn = fn
        self.lipschitz = lipschitz
        self.vectorized = vectorized

    def eval(self, step, t, x, y, z, law_y, law_z):
        return self._fn(t, x, y, z)


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal map g with optional Hoelder metadata (exponent, constant)."""

    g: Callable
    holder_exponent: Optional[float] = None
    holder_const: Optional[float] = None
    name: str = "custom"

    def apply(self, values) -> np.ndarray:
        """Evaluate g on an array of node values, elementwise fallback."""
        arr = np.asarray(values, dtype=float)
        try:
            out = np.asarray(self.g(arr), dtype=float)
            if out.shape == arr.shape:
                return out
        except (TypeError, ValueError):
            pass
        return np.array([float(self.g(v)) for v in arr.ravel()]).reshape(arr.shape)

    def __call__(self, value):
        return float(self.g(value)) if np.isscalar(value) else self.apply(value)


def identity_terminal() -> TerminalCondition:
    return TerminalCondition(g=lambda x: x, holder_exponent=1.0,
                             holder_const=1.0, name="identity")


def builtin_case1() -> tuple[MeanFieldDriver, TerminalCondition]:
    """Benchmark with linear terminal: f = y + E[Y] + E[Z], g(x) = x."""
    return MeanShiftDriver(), identity_terminal()


def builtin_case2(K: float) -> tuple[MeanFieldDriver, TerminalCondition]:
    """Benchmark with capped quadratic terminal g(x) = min(x**2, K)."""
    if not K > 0.0:
        raise ParameterError(f"cap K must be positive, got {K}")
    terminal = TerminalCondition(
        g=lambda x: np.minimum(np.square(x), K),
        holder_exponent=1.0,
        holder_const=2.0 * np.sqrt(K),
        name=f"capped_square(K={K})",
    )
    return MeanShiftDriver(), terminal


def builtin_zero() -> tuple[MeanFieldDriver, TerminalCondition]:
    """Zero generator with identity terminal: (Y, Z) = (walk, 1) exactly."""
    return ZeroDriver(), identity_terminal()


BUILTIN_CASES = ("case1", "case2", "zero")


def builtin_by_name(case: str, K: float = 5.0):
    if case == "case1":
        return builtin_case1()
    if case == "case2":
        return builtin_case2(K)
    if case == "zero":
        return builtin_zero()
    raise ParameterError(f"unknown case {case!r}; choose from {BUILTIN_CASES}")


@dataclass
class FrozenDriver:
    """Generator with its law arguments fixed to per-step sequences.

    Evaluation at time index ``k`` passes the clamped time
    ``t_min(k, n-1)`` and the Y-law at ``k`` to the base driver.  With
    ``clamp_z_law=True`` (the continuous freezing) the Z-law index is
    clamped to ``n - 1`` as well; with ``clamp_z_law=False`` the Z-law at
    ``k`` itself is used, which is how the sub-tree scheme plugs in the
    discrete laws and what makes re-solving with a solution's own laws
    reproduce that solution exactly.

    Law sequences are indexed by absolute time step, entries ``0..n``;
    entries for steps a solve never touches may be ``None``.
    """

    base: MeanFieldDriver
    law_y_seq: Sequence[Optional[DiscreteLaw]]
    law_z_seq: Sequence[Optional[DiscreteLaw]]
    n: int
    T: float
    clamp_z_law: bool = True

    def __post_init__(self):
        if len(self.law_y_seq) != self.n + 1 or len(self.law_z_seq) != self.n + 1:
            raise ParameterError(
                f"law sequences must have one entry per step 0..{self.n}"
            )

    @property
    def vectorized(self) -> bool:
        return self.base.vectorized

    @property
    def lipschitz(self):
        return self.base.lipschitz

    def laws_at(self, step: int) -> tuple[DiscreteLaw, DiscreteLaw]:
        clamped = min(step, self.n - 1)
        law_y = self.law_y_seq[step]
        law_z = self.law_z_seq[clamped if self.clamp_z_law else step]
        if law_y is None or law_z is None:
            raise ParameterError(f"no frozen law stored for step {step}")
        return law_y, law_z

    def eval(self, step, x, y, z):
        clamped = min(step, self.n - 1)
        law_y, law_z = self.laws_at(step)
        t = clamped * (self.T / self.n)
        return self.base.eval(clamped, t, x, y, z, law_y, law_z)


def freeze(
    base: MeanFieldDriver,
    law_y_seq: Sequence[Optional[DiscreteLaw]],
    law_z_seq: Sequence[Optional[DiscreteLaw]],
    n: int,
    T: float,
    clamp_z_law: bool = True,
) -> FrozenDriver:
    """Fix the measure arguments of ``base`` to the given per-step laws."""
    return FrozenDriver(
        base=base, law_y_seq=list(law_y_seq), law_z_seq=list(law_z_seq),
        n=n, T=T, clamp_z_law=clamp_z_law,
    )
