"""Logarithmic modulus functions used to trade rate against integrability.

``phi`` is the decreasing log-correction factor, ``psi_mod`` the modified
Hoelder modulus |x|**eps * phi(|x|**(2 eps)), and ``psi_concave`` the
concave majorant of the squared half-exponent modulus r * phi(r)**2: it
follows that curve up to the knot r_beta**2 and continues with the tangent
line.  All functions are pure and accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ParameterError


@dataclass(frozen=True)
class ModulusParams:
    """beta in {0} or (1/2, inf); epsilon in (0, 1]."""

    beta: float
    epsilon: float = 1.0

    def __post_init__(self):
        if self.beta != 0.0 and not self.beta > 0.5:
            raise ParameterError(f"beta must be 0 or > 1/2, got {self.beta}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ParameterError(f"epsilon must lie in (0, 1], got {self.epsilon}")

    @property
    def r_beta(self) -> float:
        return math.exp(-2.0 * self.beta)

    @property
    def kappa(self) -> float:
        """Sandwich constant 2**beta for the concave majorant."""
        return 2.0**self.beta


def _as_1d(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _unwrap(out: np.ndarray, scalar: bool):
    return float(out[0]) if scalar else out


def phi(params: ModulusParams, r):
    """log(1 / min(r, r_beta)) ** beta for beta > 1/2, constant 1 for beta 0."""
    arr, scalar = _as_1d(r)
    if np.any(arr <= 0.0):
        raise ParameterError("phi requires r > 0")
    if params.beta == 0.0:
        out = np.ones_like(arr)
    else:
        out = np.log(1.0 / np.minimum(arr, params.r_beta)) ** params.beta
    return _unwrap(out, scalar)


def psi_mod(params: ModulusParams, x):
    """|x|**eps * phi(|x|**(2 eps)), continuously extended by 0 at x = 0."""
    arr, scalar = _as_1d(x)
    arr = np.abs(arr)
    out = np.zeros_like(arr)
    pos = arr > 0.0
    if np.any(pos):
        ax = arr[pos] ** params.epsilon
        out[pos] = ax * phi(params, ax**2)
    return _unwrap(out, scalar)


def _tangent_slope(beta: float) -> float:
    # Derivative of r * phi(r)**2 at the knot r_beta**2, where
    # log(1/r) = 4 beta.
    if beta == 0.0:
        return 1.0
    return 2.0 * beta * (4.0 * beta) ** (2.0 * beta - 1.0)


def psi_concave(params: ModulusParams, r):
    """Concave majorant: r * phi(r)**2 below r_beta**2, tangent line above.

    Satisfies psi / kappa**2 <= r * phi(r)**2 <= psi pointwise with
    kappa = 2**beta.
    """
    arr, scalar = _as_1d(r)
    if np.any(arr < 0.0):
        raise ParameterError("psi_concave requires r >= 0")
    beta = params.beta
    if beta == 0.0:
        return _unwrap(arr.copy(), scalar)
    knot = params.r_beta**2
    out = np.zeros_like(arr)
    below = (arr <= knot) & (arr > 0.0)
    if np.any(below):
        v = arr[below]
        out[below] = v * np.log(1.0 / v) ** (2.0 * beta)
    above = arr > knot
    if np.any(above):
        v_knot = knot * (4.0 * beta) ** (2.0 * beta)
        out[above] = _tangent_slope(beta) * (arr[above] - knot) + v_knot
    return _unwrap(out, scalar)


def singular_time_integral(params: ModulusParams, T: float, lower: float) -> float:
    """Quadrature of ds / (s * phi(s**eps)**2) over [lower, T].

    The substitution u = log(s) removes the 1/s factor; the remaining
    integrand is smooth except at the branch point where s**eps crosses
    r_beta, which is passed to the quadrature as a split point.
    """
    if not 0.0 < lower < T:
        raise ParameterError("need 0 < lower < T")

    beta, eps = params.beta, params.epsilon

    def integrand(u):
        if beta == 0.0:
            return 1.0
        v = min(math.exp(eps * u), params.r_beta)
        return 1.0 / math.log(1.0 / v) ** (2.0 * beta)

    lo, hi = math.log(lower), math.log(T)
    points = None
    if beta > 0.0:
        u_branch = math.log(params.r_beta) / eps
        if lo < u_branch < hi:
            points = [u_branch]
    value, _ = quad(integrand, lo, hi, points=points, limit=200)
    return value


def singular_integral_tail(params: ModulusParams, cutoff: float) -> float:
    """Closed form of the integral from 0 to cutoff, for beta > 1/2.

    Within the log branch the substitution u = log(1/s) gives
    eps**(-2 beta) * u**(1 - 2 beta) / (2 beta - 1) evaluated at
    u = log(1/cutoff).  Requires cutoff**eps <= r_beta.
    """
    beta, eps = params.beta, params.epsilon
    if beta <= 0.5:
        raise ParameterError("tail is finite only for beta > 1/2")
    if cutoff <= 0.0 or cutoff**eps > params.r_beta:
        raise ParameterError("cutoff must satisfy 0 < cutoff**eps <= r_beta")
    u = math.log(1.0 / cutoff)
    return eps ** (-2.0 * beta) * u ** (1.0 - 2.0 * beta) / (2.0 * beta - 1.0)


def singular_time_integral_completed(
    params: ModulusParams, T: float, cutoff: float
) -> float:
    """Improper integral over (0, T] estimated as quadrature + exact tail.

    Stable in the cutoff: two different cutoffs must agree up to quadrature
    error, certifying convergence of the improper integral.
    """
    return singular_time_integral(params, T, cutoff) + singular_integral_tail(
        params, cutoff
    )
