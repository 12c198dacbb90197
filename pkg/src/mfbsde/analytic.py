"""Closed-form reference solutions for the benchmark cases.

Case 1 (linear terminal) has the explicit pair
``Y(t, b) = e^(T-t) (b + e^(T-t) - 1)``, ``Z(t, b) = e^(T-t)``.

Case 2 (capped quadratic terminal, zero-mean Z) reduces to conditional
moments of a capped squared Gaussian:
``Y(t, b) = e^(T-t) (m(t, b) + m(0, 0) (e^(T-t) - 1))`` where
``m(t, b) = E[(b + sqrt(T-t) G)^2 ^ K]`` for a standard normal G.  That
truncated second moment has the closed form implemented below in terms of
the normal distribution and density at the cut points; it is validated
against adaptive quadrature in the test suite before use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr  # standard normal CDF, double-precision accurate

from .errors import ParameterError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _npdf(u: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.square(u)) / _SQRT_2PI


@dataclass(frozen=True)
class ExactSolution:
    """Reference solution surface: y(t, b) and optionally z(t, b)."""

    y: Callable
    z: Optional[Callable]
    T: float
    case: str
    K: Optional[float] = None


def case1_exact(T: float) -> ExactSolution:
    """Exact pair for the linear-terminal benchmark."""
    if not T > 0.0:
        raise ParameterError("T must be positive")

    def y(t, b):
        e = np.exp(T - np.asarray(t, dtype=float))
        return e * (np.asarray(b, dtype=float) + e - 1.0)

    def z(t, b=None):
        return np.exp(T - np.asarray(t, dtype=float))

    return ExactSolution(y=y, z=z, T=T, case="case1")


def truncated_square_moment(x, s, K: float):
    """E[(x + sqrt(s) G)^2 ^ K] for standard normal G; s > 0, K > 0.

    With sigma = sqrt(s) and cut points a = (-sqrt(K) - x) / sigma,
    b = (sqrt(K) - x) / sigma the value is

        (x^2 + s) (Phi(b) - Phi(a)) + 2 x sigma (phi(a) - phi(b))
        + s (a phi(a) - b phi(b)) + K (1 - Phi(b) + Phi(a)).

    Vectorized over x and s.
    """
    if not K > 0.0:
        raise ParameterError("K must be positive")
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0):
        raise ParameterError("variance s must be positive")
    sigma = np.sqrt(s)
    root_k = math.sqrt(K)
    a = (-root_k - x) / sigma
    b = (root_k - x) / sigma
    phi_a, phi_b = _npdf(a), _npdf(b)
    cdf_a, cdf_b = ndtr(a), ndtr(b)
    inside = (x**2 + s) * (cdf_b - cdf_a) + 2.0 * x * sigma * (phi_a - phi_b)
    inside = inside + s * (a * phi_a - b * phi_b)
    out = inside + K * (1.0 - cdf_b + cdf_a)
    return out if out.ndim else float(out)


def case2_exact(T: float, K: float) -> ExactSolution:
    """Exact Y for the capped-quadratic benchmark (no Z supplied)."""
    if not T > 0.0 or not K > 0.0:
        raise ParameterError("T and K must be positive")
    m00 = truncated_square_moment(0.0, T, K)

    def y(t, b):
        t_arr, b_arr = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(b, dtype=float)
        )
        scalar = t_arr.ndim == 0
        t_arr = np.atleast_1d(t_arr).astype(float)
        b_arr = np.atleast_1d(b_arr).astype(float)
        at_T = t_arr >= T
        m = np.empty_like(b_arr)
        m[at_T] = np.minimum(b_arr[at_T] ** 2, K)  # s = 0 limit is the terminal
        if np.any(~at_T):
            m[~at_T] = truncated_square_moment(b_arr[~at_T], T - t_arr[~at_T], K)
        e = np.exp(T - t_arr)
        out = e * (m + m00 * (e - 1.0))
        return float(out[0]) if scalar else out

    return ExactSolution(y=y, z=None, T=T, case="case2", K=K)


def zero_case_exact(T: float) -> ExactSolution:
    """Martingale case (zero generator, identity terminal): Y = B, Z = 1."""

    def y(t, b):
        return np.asarray(b, dtype=float)

    def z(t, b=None):
        return np.ones_like(np.asarray(t, dtype=float))

    return ExactSolution(y=y, z=z, T=T, case="zero")
