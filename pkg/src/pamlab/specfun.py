"""Special functions and the error-controlled quadrature engine.

The functions here are the scalar building blocks of the moment oracles:

    theta(s)        moment correction factor, exp(s/4) sqrt(s/2) times the
                    Gaussian integral up to sqrt(s/2), via the error function
    phi(z)          (1 - cos z) / z^2, extended continuously by phi(0) = 1/2
    g_fn            G(N, t, x) = (t / log N) int_0^t exp(-((t-s) t / s) x^2 / N^2) ds / s
    g_weight        spatially averaged bridge kernel, in closed CDF form
    quad            adaptive Gauss-Kronrod wrapper with the endpoint
                    substitutions used by the oracle layer

`quad` maps semi-infinite domains through z = a + u/(1-u), which places the
finite endpoint where double-precision abscissae are dense; integrable
endpoint behaviour at `a` down to scales of 1e-300 is resolved, while
structure beyond z ~ 1e15 is not (none of the integrands here have any).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import integrate, special

_SUBSTITUTIONS = ("none", "inverse_time")


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration policy shared by every oracle evaluation.

    endpoint_substitution = "inverse_time" applies s = t/(1 + theta) before
    integrating, mapping (0, t] onto [0, inf) to tame 1/s endpoint behaviour;
    it only makes sense for domains of the form (0, t).
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000
    endpoint_substitution: str = "none"

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0.0 and self.rel_tol > 0.0):
            raise ValueError(
                f"tolerances must be strictly positive, got abs={self.abs_tol!r} rel={self.rel_tol!r}"
            )
        if self.max_subdivisions < 1:
            raise ValueError(f"max_subdivisions must be >= 1, got {self.max_subdivisions!r}")
        if self.endpoint_substitution not in _SUBSTITUTIONS:
            raise ValueError(
                f"endpoint_substitution must be one of {_SUBSTITUTIONS}, got {self.endpoint_substitution!r}"
            )


DEFAULT_QUAD = QuadratureSpec()


class QuadratureError(RuntimeError):
    """Adaptive integration did not converge; carries the partial result."""

    def __init__(self, message: str, value: float, error_estimate: float):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class GFnQuery:
    """Evaluation point for G(N, t, x); N >= e, t > 0, x != 0."""

    N: float
    t: float
    x: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.N) and self.N >= math.e):
            raise ValueError(f"scale must satisfy N >= e, got N={self.N!r}")
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"time must be positive, got t={self.t!r}")
        if not (math.isfinite(self.x) and self.x != 0.0):
            raise ValueError(f"position must be finite and nonzero, got x={self.x!r}")


def _quad_core(fn: Callable[[float], float], a: float, b: float, spec: QuadratureSpec):
    out = integrate.quad(
        fn,
        a,
        b,
        epsabs=spec.abs_tol,
        epsrel=spec.rel_tol,
        limit=spec.max_subdivisions,
        full_output=1,
    )
    if len(out) > 3:
        value, err = out[0], out[1]
        raise QuadratureError(str(out[-1]).strip(), value=value, error_estimate=err)
    return out[0], out[1]


def quad(integrand: Callable[[float], float], a: float, b: float,
         spec: QuadratureSpec = DEFAULT_QUAD):
    """Integrate `integrand` over (a, b), returning (value, error_estimate).

    Raises QuadratureError (carrying the partial value and the achieved
    error estimate) when the subdivision budget is exhausted or the
    integrand is judged divergent.
    """
    if spec.endpoint_substitution == "inverse_time":
        if a != 0.0 or not (math.isfinite(b) and b > 0.0):
            raise ValueError(
                f"inverse_time substitution needs the domain (0, t), got ({a!r}, {b!r})"
            )
        t = b
        inner = replace(spec, endpoint_substitution="none")

        def transformed(theta_: float) -> float:
            r = 1.0 + theta_
            return integrand(t / r) * t / (r * r)

        return quad(transformed, 0.0, math.inf, inner)

    if a == b:
        return 0.0, 0.0
    if a > b:
        value, err = quad(integrand, b, a, spec)
        return -value, err
    if math.isinf(a) and math.isinf(b):
        v1, e1 = quad(integrand, 0.0, math.inf, spec)
        v2, e2 = quad(integrand, -math.inf, 0.0, spec)
        return v1 + v2, e1 + e2
    if math.isinf(a):
        return quad(lambda z: integrand(-z), -b, math.inf, spec)
    if math.isinf(b):
        def compactified(u: float) -> float:
            w = 1.0 - u
            if w <= 0.0:
                return 0.0
            z = a + u / w
            if not math.isfinite(z):
                return 0.0
            return integrand(z) / (w * w)

        return _quad_core(compactified, 0.0, 1.0, spec)
    return _quad_core(integrand, a, b, spec)


def theta(s):
    """Moment correction factor; nonnegative and increasing, theta(0+) = 0.

    theta(s) = exp(s/4) sqrt(s/2) * int_{-inf}^{sqrt(s/2)} exp(-y^2/2) dy,
    computed through the Gaussian CDF.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0.0) or not np.all(np.isfinite(s_arr)):
        raise ValueError(f"theta needs s > 0, got {s!r}")
    half = np.sqrt(s_arr / 2.0)
    out = np.exp(s_arr / 4.0) * half * math.sqrt(2.0 * math.pi) * special.ndtr(half)
    return float(out) if out.ndim == 0 else out


def theta_by_quadrature(s: float, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Quadrature cross-check of theta, bypassing the error-function route."""
    if not (math.isfinite(s) and s > 0.0):
        raise ValueError(f"theta needs s > 0, got {s!r}")
    c = math.sqrt(s / 2.0)
    tail, _ = quad(lambda y: math.exp(-0.5 * y * y), -c, math.inf)
    return math.exp(s / 4.0) * c * tail


def phi(z):
    """(1 - cos z) / z^2 with the continuous value 1/2 at z = 0.

    Even, strictly positive, bounded by 1/2, and below 2/z^2 in the tails.
    Near zero a short Taylor polynomial avoids the cancellation in 1 - cos.
    """
    z_arr = np.asarray(z, dtype=float)
    z2 = z_arr * z_arr
    small = np.abs(z_arr) < 0.1
    series = 0.5 - z2 / 24.0 + z2 * z2 / 720.0 - z2 * z2 * z2 / 40320.0
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.where(small, 1.0, (1.0 - np.cos(z_arr)) / np.where(small, 1.0, z2))
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def log_plus(w):
    """log(e + w); the shifted logarithm used in the G bounds."""
    return np.log(math.e + np.asarray(w, dtype=float))


def g_fn(q: GFnQuery, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """G(N, t, x) through the substitution to int_0^inf e^{-s} / (s + c) ds.

    c = t x^2 / N^2; the original integrand exp(-((t-s) t/s) x^2/N^2) / s on
    (0, t) maps onto e^{-s}/(s + c) under s -> t/(1 + s'), and the quad
    engine resolves the near-origin plateau of length c even for c ~ 1e-24.
    """
    c = q.t * q.x * q.x / (q.N * q.N)
    value, _ = quad(lambda s: math.exp(-s) / (s + c), 0.0, math.inf, spec)
    return q.t / math.log(q.N) * value


def g_fn_by_parts(q: GFnQuery, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Independent decomposition route for G: (t / log N) (A - B + C).

    A = log(N^2/(t x^2) + 1) is the exact integral of 1/(s + c) over (0, 1),
    B = int_0^1 (1 - e^{-s}) / (s + c) ds and C = int_1^inf e^{-s}/(s + c) ds
    both lie in (0, 1). Used as a cross-check against `g_fn`.
    """
    c = q.t * q.x * q.x / (q.N * q.N)
    a_term = math.log1p(1.0 / c)
    b_term, _ = quad(lambda s: -math.expm1(-s) / (s + c), 0.0, 1.0, spec)
    c_term, _ = quad(lambda s: math.exp(-s) / (s + c), 1.0, math.inf, spec)
    return q.t / math.log(q.N) * (a_term - b_term + c_term)


_ASYMPTOTIC_SWITCH = 400.0


def _exp_e1(c):
    """exp(c) E1(c), vectorized; asymptotic series beyond the exp1 range.

    For c > 400 the alternating series sum_k (-1)^k k! / c^{k+1} truncated
    at k = 14 has relative error below 1e-25.
    """
    c_arr = np.atleast_1d(np.asarray(c, dtype=float))
    out = np.empty_like(c_arr)
    low = c_arr <= _ASYMPTOTIC_SWITCH
    if np.any(low):
        cl = c_arr[low]
        out[low] = np.exp(cl) * special.exp1(cl)
    if np.any(~low):
        ch = c_arr[~low]
        acc = np.zeros_like(ch)
        term = 1.0 / ch
        for k in range(15):
            acc = acc + term
            term = term * (-(k + 1.0)) / ch
        out[~low] = acc
    return out if np.asarray(c).ndim else float(out[0])


def g_fn_values(N: float, t: float, x):
    """Vectorized G(N, t, x) = (t / log N) exp(c) E1(c), c = t x^2 / N^2.

    Exponential-integral form of the same integral as `g_fn`; the two routes
    are cross-checked in the test suite. x must be nonzero elementwise.
    """
    x_arr = np.asarray(x, dtype=float)
    c = t * x_arr * x_arr / (N * N)
    out = t / math.log(N) * _exp_e1(c)
    return float(out) if np.asarray(x).ndim == 0 else out


def g_weight(N: float, t: float, s: float, y):
    """Spatially averaged bridge kernel (1/N) int_0^N p_{s(t-s)/t}(y - (s/t) x) dx.

    Closed form via the Gaussian CDF: substituting v = (s/t) x gives
    (t / (s N)) [Phi_sigma(y) - Phi_sigma(y - s N / t)], sigma = s(t-s)/t.
    Vectorized in y. Bounded by (t/s)/N, integrates to one in y, and tends
    to (1/N) * indicator(0 < y < N) as s -> t.
    """
    if not (0.0 < s < t):
        raise ValueError(f"g_weight needs 0 < s < t, got s={s!r}, t={t!r}")
    if not N > 0.0:
        raise ValueError(f"g_weight needs N > 0, got {N!r}")
    sigma = s * (t - s) / t
    y_arr = np.asarray(y, dtype=float)
    width = s * N / t
    rt = math.sqrt(sigma)
    out = (t / (s * N)) * (special.ndtr(y_arr / rt) - special.ndtr((y_arr - width) / rt))
    return float(out) if np.asarray(y).ndim == 0 else out


def phi_weighted_integral(weight: Callable[[float], float],
                          spec: QuadratureSpec = DEFAULT_QUAD,
                          split_at: float = 50.0):
    """int_R phi(z) w(z) dz for even, smooth, slowly varying weights w.

    The oscillation of phi is benign on [0, split_at] and handled by plain
    adaptive quadrature; beyond the split the integrand is written as
    w(z)/z^2 - cos(z) w(z)/z^2 and the cosine part is integrated with the
    dedicated oscillatory-weight rule, which sums whole periods.
    Returns (value, error_estimate).
    """
    core, e_core = quad(lambda z: phi(float(z)) * weight(z), 0.0, split_at, spec)
    smooth, e_smooth = quad(lambda z: weight(z) / (z * z), split_at, math.inf, spec)
    osc = integrate.quad(
        lambda z: weight(z) / (z * z),
        split_at,
        np.inf,
        weight="cos",
        wvar=1.0,
        epsabs=spec.abs_tol,
        epsrel=spec.rel_tol,
        limit=spec.max_subdivisions,
        full_output=1,
    )
    if len(osc) > 3:
        raise QuadratureError(str(osc[-1]).strip(), value=osc[0], error_estimate=osc[1])
    value = 2.0 * (core + smooth - osc[0])
    return value, 2.0 * (e_core + e_smooth + osc[1])
