"""Quadrature oracles for every closed-form moment in the model.

Second moment of the solution, covariance of the renormalized field U,
variance and covariance of spatial averages for both the interacting field
and its Gaussian proxy, and the 2 t log N / N asymptotics of those averages.

All averaged quantities share one structure: a time integral over (0, t_min)
whose spatial part collapses, after rescaling, to the exact rectangle mass
of a Gaussian kernel (kernels.rect_kernel_mass). The integrand behaves like
1/s between the cutoffs t^2/N^2 and t, so the time integral is taken in
log time, s = t_min e^{-w}, where the whole dynamic range is uniformly
resolved; see the docstring of `_averaged_cov` for the tail bound that
picks the truncation point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import heat_kernel_values, log_heat_kernel, rect_kernel_mass
from .specfun import (
    DEFAULT_QUAD,
    QuadratureSpec,
    g_fn_values,
    phi_weighted_integral,
    quad,
    theta,
)

FIELD_KINDS = ("pam", "gaussian_proxy")

# Pointwise covariance integrands carry an integrable 1/sqrt(s) endpoint;
# the inverse-time substitution is the natural default for them.
COV_QUAD = QuadratureSpec(endpoint_substitution="inverse_time")


@dataclass(frozen=True)
class CovQuery:
    """Space-time pair ((t1, x), (t2, y)) for the covariance of U."""

    t1: float
    t2: float
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t1) and self.t1 > 0.0 and math.isfinite(self.t2) and self.t2 > 0.0):
            raise ValueError(f"covariance times must be positive, got t1={self.t1!r}, t2={self.t2!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"covariance positions must be finite, got x={self.x!r}, y={self.y!r}")


@dataclass(frozen=True)
class AvgVarianceQuery:
    """Variance query for the spatial average over [0, N] at time t."""

    N: float
    t: float
    field_kind: str = "pam"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.N) and self.N >= math.e):
            raise ValueError(f"averaging scale must satisfy N >= e, got N={self.N!r}")
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"averaging time must be positive, got t={self.t!r}")
        if self.field_kind not in FIELD_KINDS:
            raise ValueError(f"field_kind must be one of {FIELD_KINDS}, got {self.field_kind!r}")


def second_moment_u(s: float, z: float) -> float:
    """E|u(s, z)|^2 = p_s(z)^2 (1 + theta(s)); even in z."""
    if not (math.isfinite(s) and s > 0.0):
        raise ValueError(f"second_moment_u needs s > 0, got {s!r}")
    return float(np.exp(2.0 * log_heat_kernel(s, z))) * (1.0 + theta(s))


def _pair_variance(s: float, t1: float, t2: float) -> float:
    """Variance s [(t1 - s)/t1 + (t2 - s)/t2] of the two-time bridge kernel."""
    return s * ((t1 - s) / t1 + (t2 - s) / t2)


def _cov_time_integral(t1: float, t2: float, x: float, y: float,
                       with_theta: bool, spec: QuadratureSpec) -> float:
    tmin = min(t1, t2)

    def integrand(s: float) -> float:
        sigma = _pair_variance(s, t1, t2)
        weight = 1.0 + theta(s) if with_theta else 1.0
        return float(heat_kernel_values(sigma, s * (x / t1 - y / t2))) * weight

    value, _ = quad(integrand, 0.0, tmin, spec)
    return value


def cov_U(q: CovQuery, spec: QuadratureSpec = COV_QUAD) -> float:
    """Cov[U(t1, x), U(t2, y)] as a single time quadrature.

    The integrand is p_{s[(t1-s)/t1 + (t2-s)/t2]}(s (x/t1 - y/t2)) (1 + theta(s))
    on (0, t1 ^ t2). At equal times it depends on x, y only through x - y,
    which is the stationarity of U(t, .).
    """
    return _cov_time_integral(q.t1, q.t2, q.x, q.y, True, spec)


def cov_V(q: CovQuery, spec: QuadratureSpec = COV_QUAD) -> float:
    """Covariance of the Gaussian proxy field: the theta == 0 kernel of cov_U."""
    return _cov_time_integral(q.t1, q.t2, q.x, q.y, False, spec)


def _averaged_cov(N: float, t1: float, t2: float, with_theta: bool,
                  spec: QuadratureSpec) -> float:
    """(1/N^2) int over [0,N]^2 of the two-time covariance kernel.

    Rescaling the spatial pair by (s/t1, s/t2) collapses the double space
    integral to the exact rectangle mass F(sigma(s), s N / t1, s N / t2),
    leaving the single time integral

        int_0^{t_min} weight(s) (t1 t2 / (s^2 N^2)) F(...) ds.

    The integrand behaves like 1/s down to s ~ t^2/N^2 and like 1/sqrt(s)
    below, so in log time (s = t_min e^{-w}) it is a plateau with an
    exp(-w/2) tail. The truncation W = 80 + 2 log N + 2 |log t_min| leaves a
    tail below exp(-40) t_min / N^2 relative to the total, far under the
    quadrature tolerance, while every intermediate stays inside double range.
    """
    tmin = min(t1, t2)
    cutoff = 80.0 + 2.0 * abs(math.log(N)) + 2.0 * abs(math.log(tmin))
    scale = t1 * t2 / (N * N)

    def integrand(w: float) -> float:
        s = tmin * math.exp(-w)
        if s <= 0.0:
            return 0.0
        sigma = _pair_variance(s, t1, t2)
        mass = rect_kernel_mass(sigma, s * N / t1, s * N / t2)
        weight = 1.0 + theta(s) if with_theta else 1.0
        # d s = -s d w folds one factor of s into the Jacobian.
        return weight * scale / s * mass

    value, _ = quad(integrand, 0.0, cutoff, spec)
    return value


def var_avg(q: AvgVarianceQuery, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Variance of the spatial average of [field - 1] over [0, N] at time t.

    pam: the (1 + theta) weighted time integral with the exact rectangle
    spatial mass. gaussian_proxy: the Fourier route
    (log N / (pi N)) int phi(z) G(N, t, z) dz, with G in exponential-integral
    form; the two kinds agree as theta -> 0 and are cross-checked in tests
    through `cov_avg(..., field_kind="gaussian_proxy")`.
    """
    if q.field_kind == "pam":
        return _averaged_cov(q.N, q.t, q.t, True, spec)
    value, _ = phi_weighted_integral(
        lambda z: float(g_fn_values(q.N, q.t, z)) if z != 0.0 else 0.0, spec
    )
    return math.log(q.N) / (math.pi * q.N) * value


def cov_avg(N: float, t1: float, t2: float, spec: QuadratureSpec = DEFAULT_QUAD,
            field_kind: str = "pam") -> float:
    """(1/N^2) double space integral of the two-time covariance over [0,N]^2.

    Scaled by N / log N this converges to 2 (t1 ^ t2) as N grows. The
    field_kind selector mirrors var_avg; the proxy covariance drops the
    theta weight.
    """
    if not (math.isfinite(N) and N >= math.e):
        raise ValueError(f"cov_avg needs N >= e, got {N!r}")
    if not (t1 > 0.0 and t2 > 0.0):
        raise ValueError(f"cov_avg needs positive times, got t1={t1!r}, t2={t2!r}")
    if field_kind not in FIELD_KINDS:
        raise ValueError(f"field_kind must be one of {FIELD_KINDS}, got {field_kind!r}")
    return _averaged_cov(N, t1, t2, field_kind == "pam", spec)


def var_avg_by_lag(N: float, t: float, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Lag-form cross-check of var_avg(pam): (2/N^2) int_0^N (N - h) C_t(h) dh.

    C_t(h) = cov_U(t, t, h, 0) by stationarity of U(t, .). Nested quadrature,
    kept deliberately independent of the rectangle-mass route; slower, used
    by tests at moderate N.
    """
    def lag_cov(h: float) -> float:
        return cov_U(CovQuery(t, t, h, 0.0), COV_QUAD)

    value, _ = quad(lambda h: (N - h) * lag_cov(h), 0.0, N, spec)
    return 2.0 / (N * N) * value


def var_avg_ratio(N: float, t: float, spec: QuadratureSpec = DEFAULT_QUAD,
                  field_kind: str = "pam") -> float:
    """var_avg scaled by its limit: var_avg * N / (2 t log N) -> 1."""
    q = AvgVarianceQuery(N=N, t=t, field_kind=field_kind)
    return var_avg(q, spec) * N / (2.0 * t * math.log(N))


def scaled_cov_avg(N: float, t1: float, t2: float, spec: QuadratureSpec = DEFAULT_QUAD,
                   field_kind: str = "pam") -> float:
    """cov_avg * N / log N, the quantity whose limit is 2 (t1 ^ t2)."""
    return cov_avg(N, t1, t2, spec, field_kind) * N / math.log(N)
