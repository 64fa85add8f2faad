"""Gaussian heat kernel, its scaling identities, and the bridge-kernel collapse.

Everything in this module is the one-dimensional kernel family

    p_t(x) = (2 pi t)**(-1/2) * exp(-x**2 / (2 t)),   t > 0,

together with the algebraic identities the rest of the package leans on:
the Chapman-Kolmogorov semigroup property, diffusive scaling
p_sigma(a w) = p_{sigma/a^2}(w) / a, and the Brownian-bridge collapse

    p_{t-s}(x - y) p_s(y) / p_t(x) = p_{s(t-s)/t}(y - (s/t) x),  0 < s < t,

which replaces a ratio that overflows for small times by a single
well-scaled density evaluation.

Densities are computed in log space and exponentiated once, so tail
arguments with |x| much larger than sqrt(t) keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

_LOG_2PI = math.log(2.0 * math.pi)

# Below this variance a kernel is numerically a point mass: exp(-x^2/(2 sigma))
# underflows for every representable |x| > 0.
_SIGMA_FLOOR = 1e-300


@dataclass(frozen=True)
class HeatKernelQuery:
    """A validated (t, x) evaluation point for the heat kernel."""

    t: float
    x: float

    def __post_init__(self) -> None:
        if not (isinstance(self.t, (int, float)) and math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"heat kernel time must be finite and positive, got t={self.t!r}")
        if not (isinstance(self.x, (int, float)) and math.isfinite(self.x)):
            raise ValueError(f"heat kernel position must be finite, got x={self.x!r}")


def log_heat_kernel(t, x):
    """log p_t(x), vectorized in both arguments. Assumes t > 0 elementwise."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(t)) - 0.5 * x * x / t


def heat_kernel_values(t, x):
    """p_t(x) without argument validation, vectorized; the workhorse form."""
    return np.exp(log_heat_kernel(t, x))


def heat_kernel(q: HeatKernelQuery) -> float:
    """Validated scalar heat kernel density p_t(x)."""
    return float(np.exp(log_heat_kernel(q.t, q.x)))


def bridge_kernel(s: float, t: float, y, x):
    """Density p_{s(t-s)/t}(y - (s/t) x) of a Brownian bridge marginal.

    Equals p_{t-s}(x - y) p_s(y) / p_t(x) analytically, but is evaluated in
    the composite form, which stays finite where the ratio form overflows.
    Vectorized in y and x; s and t are scalars with 0 < s < t.

    Degenerate guard: if the bridge variance s(t-s)/t falls below the
    point-mass floor the kernel is treated as a unit point mass at
    y = (s/t) x, returning 0.0 for any nonzero argument and inf on it.
    """
    if not (math.isfinite(s) and math.isfinite(t) and 0.0 < s < t):
        raise ValueError(f"bridge kernel needs 0 < s < t, got s={s!r}, t={t!r}")
    sigma = s * (t - s) / t
    arg = np.asarray(y, dtype=float) - (s / t) * np.asarray(x, dtype=float)
    if sigma < _SIGMA_FLOOR:
        return np.where(np.abs(arg) > 0.0, 0.0, math.inf)
    return heat_kernel_values(sigma, arg)


def gaussian_cdf(sigma: float, z):
    """CDF of a centered Gaussian with variance sigma, vectorized in z."""
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise ValueError(f"gaussian_cdf needs sigma > 0, got {sigma!r}")
    return special.ndtr(np.asarray(z, dtype=float) / math.sqrt(sigma))


def _q_antiderivative(sigma: float, z):
    """Q(z) = z Phi_sigma(z) + sigma p_sigma(z); satisfies Q'' = p_sigma."""
    z = np.asarray(z, dtype=float)
    return z * gaussian_cdf(sigma, z) + sigma * heat_kernel_values(sigma, z)


# For boxes smaller than _SMALL_BOX * sqrt(sigma) per side the antiderivative
# form cancels to roundoff (four terms of size sqrt(sigma) differencing down
# to a value of order a b / sqrt(sigma)); a short expansion of the kernel
# around zero is exact to ~1e-11 relative there and crosses over smoothly.
_SMALL_BOX = 0.02


def rect_kernel_mass(sigma: float, a: float, b: float) -> float:
    """Integral of p_sigma(w - v) over (w, v) in [0, a] x [0, b], in closed form.

    Double antiderivative identity: the mass equals
    Q(a) - Q(0) - Q(a - b) + Q(-b) with Q(z) = z Phi_sigma(z) + sigma p_sigma(z).
    As sigma -> 0 the kernel concentrates on the diagonal and the mass tends
    to the overlap length min(a, b); that limit is returned below the
    point-mass floor. Boxes far inside one kernel width use the moment
    expansion a b p_sigma(0) (1 - M2 / (2 sigma) + M4 / (8 sigma^2)) with
    M2, M4 the box moments of (w - v)^2 and (w - v)^4.
    """
    if a < 0.0 or b < 0.0:
        raise ValueError(f"rect_kernel_mass needs a, b >= 0, got a={a!r}, b={b!r}")
    if sigma < 0.0 or not math.isfinite(sigma):
        raise ValueError(f"rect_kernel_mass needs finite sigma >= 0, got {sigma!r}")
    if a == 0.0 or b == 0.0:
        return 0.0
    if sigma < _SIGMA_FLOOR:
        return min(a, b)
    if max(a, b) <= _SMALL_BOX * math.sqrt(sigma):
        m2 = a * a / 3.0 - a * b / 2.0 + b * b / 3.0
        m4 = (a**4 / 5.0 - a**3 * b / 2.0 + 2.0 * a * a * b * b / 3.0
              - a * b**3 / 2.0 + b**4 / 5.0)
        peak = 1.0 / math.sqrt(2.0 * math.pi * sigma)
        return a * b * peak * (1.0 - m2 / (2.0 * sigma) + m4 / (8.0 * sigma * sigma))
    q = _q_antiderivative(sigma, np.array([a, 0.0, a - b, -b]))
    return float(q[0] - q[1] - q[2] + q[3])
