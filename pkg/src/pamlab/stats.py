"""Estimators and hypothesis checks for simulated spatial averages.

The module confronts Monte Carlo ensembles with the quadrature oracles:
Kolmogorov-Smirnov normality summaries, central-limit sweeps over the
averaging scale N, finite-dimensional covariance checks across times,
ergodic root-mean-square decay, and the small-time roughness statistic
R = S^2 / (t log(1/t)) together with its Paley-Zygmund frequency bound.

Total variation distance is never estimated directly; the KS statistic is
reported as an estimable lower-bound surrogate (d_KS <= d_TV). Every
function here is a pure, deterministic map from its inputs, so repeated
calls with the same seeds reproduce results bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from pamlab.oracle import (
    FIELD_KINDS,
    AvgVarianceQuery,
    scaled_cov_avg,
    var_avg,
    var_avg_ratio,
)
from pamlab.solver import (
    DEFAULT_DT,
    DEFAULT_DX,
    AveragePath,
    EnsembleResult,
    pam_average_paths,
    sample_proxy_averages,
)
from pamlab.specfun import DEFAULT_QUAD, QuadratureSpec

# Asymptotic 1% critical coefficient for the one-sample KS statistic:
# the Kolmogorov distribution satisfies P(sup > 1.6276 / sqrt(n)) ~ 0.01.
KS_COEFF_1PCT = 1.6276

ROUGHNESS_T_MAX = 1.0 / math.e


@dataclass(frozen=True)
class NormalitySummary:
    """Sample summary plus a KS comparison against a fixed normal law.

    mean, variance and stderr_mean describe the sample itself; ks_stat is
    the one-sample Kolmogorov-Smirnov distance to the reference normal law
    the caller supplied, with ks_critical_1pct its asymptotic 1% gate.
    """

    n: int
    mean: float
    variance: float
    stderr_mean: float
    ks_stat: float
    ks_critical_1pct: float

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"summary needs n >= 2, got {self.n!r}")
        if not (math.isfinite(self.variance) and self.variance >= 0.0):
            raise ValueError(f"variance must be nonnegative, got {self.variance!r}")
        if not 0.0 <= self.ks_stat <= 1.0:
            raise ValueError(f"ks_stat must lie in [0, 1], got {self.ks_stat!r}")


@dataclass(frozen=True)
class SweepResult:
    """Per-scale variance ratios and KS statistics from a CLT sweep.

    var_ratio is the empirical Var(sqrt(N / log N) S) / (2 t) per scale,
    oracle_ratio its quadrature counterpart, ks the shape-only KS statistic
    against a centered normal with the empirical variance. var_ratio_se
    carries the asymptotic standard error of var_ratio so serialized rows
    are self-contained.
    """

    t: float
    Ns: np.ndarray
    var_ratio: np.ndarray
    var_ratio_se: np.ndarray
    oracle_ratio: np.ndarray
    ks: np.ndarray
    replicas: int

    def __post_init__(self) -> None:
        n = len(self.Ns)
        for label in ("var_ratio", "var_ratio_se", "oracle_ratio", "ks"):
            arr = getattr(self, label)
            if len(arr) != n:
                raise ValueError(f"{label} must align with Ns ({len(arr)} vs {n})")
        if not np.all(self.oracle_ratio > 0.0):
            raise ValueError("oracle_ratio must be strictly positive")


@dataclass(frozen=True)
class FddResult:
    """Scaled finite-dimensional covariance matrix and its references.

    scaled_cov is the empirical Cov(S_{N, t_i}, S_{N, t_j}) N / log N
    matrix; oracle_scaled_cov the quadrature value, limit the large-N
    target 2 min(t_i, t_j), and scaled_cov_se entrywise standard errors
    under the near-Gaussian approximation.
    """

    N: float
    ts: np.ndarray
    replicas: int
    scaled_cov: np.ndarray
    scaled_cov_se: np.ndarray
    oracle_scaled_cov: np.ndarray
    limit: np.ndarray

    def __post_init__(self) -> None:
        m = len(self.ts)
        for label in ("scaled_cov", "scaled_cov_se", "oracle_scaled_cov", "limit"):
            arr = getattr(self, label)
            if arr.shape != (m, m):
                raise ValueError(f"{label} must be {m} x {m}, got {arr.shape}")


@dataclass(frozen=True)
class RoughnessSeries:
    """Pointwise roughness values R_t = S_t^2 / (t log(1/t)) on a grid."""

    t_grid: np.ndarray
    values: np.ndarray
    running_max: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.t_grid) == len(self.values) == len(self.running_max)):
            raise ValueError("roughness arrays must share one length")


@dataclass(frozen=True)
class PaleyZygmundReport:
    """Empirical frequency of R >= mean/2 against the second-moment bound.

    For a nonnegative statistic Z the Paley-Zygmund inequality gives
    P(Z >= E[Z] / 2) >= (E[Z])^2 / (4 E[Z^2]); frequency is the sample
    estimate of the left side, bound the right side from the supplied or
    empirical moments, stderr the binomial error of frequency.
    """

    n: int
    frequency: float
    bound: float
    stderr: float


def ks_normal(samples, mean: float, variance: float) -> NormalitySummary:
    """One-sample Kolmogorov-Smirnov statistic against N(mean, variance).

    The critical value 1.6276 / sqrt(n) is the asymptotic 1% point of the
    Kolmogorov distribution; it gates ks_stat in the summary but rejection
    is left to the caller.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 8:
        raise ValueError(f"ks_normal needs at least 8 samples, got {n}")
    if not (math.isfinite(variance) and variance > 0.0):
        raise ValueError(f"reference variance must be positive, got {variance!r}")
    if not np.isfinite(x).all():
        raise ValueError("samples must be finite")
    if x[0] == x[-1]:
        raise ValueError("degenerate samples: zero spread")
    cdf = special.ndtr((x - mean) / math.sqrt(variance))
    grid = np.arange(1, n + 1, dtype=float) / n
    d_plus = float(np.max(grid - cdf))
    d_minus = float(np.max(cdf - (grid - 1.0 / n)))
    return NormalitySummary(
        n=n,
        mean=float(x.mean()),
        variance=float(x.var(ddof=1)),
        stderr_mean=float(x.std(ddof=1) / math.sqrt(n)),
        ks_stat=max(d_plus, d_minus),
        ks_critical_1pct=KS_COEFF_1PCT / math.sqrt(n),
    )


def variance_stderr(samples) -> float:
    """Asymptotic standard error of the sample variance, sqrt(2/(n-1)) s^2.

    Exact for Gaussian data; adequate for the near-Gaussian averages this
    package produces. Cross-check with bootstrap_variance_stderr when the
    Gaussian approximation is in doubt.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError(f"variance_stderr needs n >= 2, got {x.size}")
    return float(x.var(ddof=1)) * math.sqrt(2.0 / (x.size - 1))


def bootstrap_variance_stderr(samples, resamples: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the sample variance (fixed resample count)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError(f"bootstrap needs n >= 2, got {x.size}")
    if resamples < 2:
        raise ValueError(f"resamples must be >= 2, got {resamples}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    return float(x[idx].var(axis=1, ddof=1).std(ddof=1))


def build_ensemble(
    field_kind: str,
    N: float,
    ts,
    seed: int,
    replicas: int,
    *,
    replica_start: int = 0,
    dt: float = DEFAULT_DT,
    dx: float = DEFAULT_DX,
    spec: QuadratureSpec = DEFAULT_QUAD,
    workers: int = 1,
) -> EnsembleResult:
    """Assemble a replica ensemble of spatial averages for either field.

    workers > 1 splits the replica range into contiguous blocks handled by
    a thread pool; every replica's draws are anchored to its absolute id,
    and blocks are concatenated in order, so the result is bit-identical
    for any worker count.
    """
    if field_kind not in FIELD_KINDS:
        raise ValueError(f"field_kind must be one of {FIELD_KINDS}, got {field_kind!r}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    def one_block(start: int, count: int) -> EnsembleResult:
        if field_kind == "pam":
            return pam_average_paths(
                N, ts, dt=dt, dx=dx, seed=seed, replicas=count, replica_start=start
            )
        return sample_proxy_averages(
            N, ts, seed=seed, replicas=count, replica_start=start, spec=spec
        )

    if workers == 1 or replicas < 2 * workers:
        return one_block(replica_start, replicas)
    bounds = np.linspace(0, replicas, workers + 1).astype(int)
    jobs = [
        (replica_start + int(a), int(b - a))
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda job: one_block(*job), jobs))
    weights = np.array([p.values.shape[0] for p in parts], dtype=float)
    return EnsembleResult(
        N=parts[0].N,
        field_kind=parts[0].field_kind,
        times=parts[0].times,
        replica_ids=np.concatenate([p.replica_ids for p in parts]),
        values=np.vstack([p.values for p in parts]),
        negative_share=float(
            np.average([p.negative_share for p in parts], weights=weights)
        ),
    )


def _check_sweep_args(Ns, replicas: int) -> np.ndarray:
    arr = np.asarray(Ns, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("Ns must be nonempty")
    if not np.all(np.diff(arr) > 0.0):
        raise ValueError(f"Ns must be strictly ascending, got {arr.tolist()}")
    if arr[0] < math.e:
        raise ValueError(f"every scale must satisfy N >= e, got {arr[0]!r}")
    if replicas < 100:
        raise ValueError(f"sweeps need at least 100 replicas, got {replicas}")
    return arr


def clt_sweep(
    t: float,
    Ns,
    replicas: int,
    seed: int,
    field_kind: str = "gaussian_proxy",
    *,
    dt: float = DEFAULT_DT,
    dx: float = DEFAULT_DX,
    spec: QuadratureSpec = DEFAULT_QUAD,
    workers: int = 1,
) -> SweepResult:
    """Sweep the averaging scale and test sqrt(N / log N) S for normality.

    Each scale gets its own ensemble (disjoint replica blocks under one
    seed). The recorded ratio divides the empirical variance of the scaled
    average by 2 t, the KS statistic is taken against a centered normal
    with the empirical variance, so it measures shape alone, and the
    oracle column holds the quadrature value of the same ratio.
    """
    arr = _check_sweep_args(Ns, replicas)
    var_ratio = np.empty(arr.size)
    var_se = np.empty(arr.size)
    oracle = np.empty(arr.size)
    ks = np.empty(arr.size)
    for i, N in enumerate(arr):
        ens = build_ensemble(
            field_kind, N, [t], seed, replicas,
            replica_start=i * replicas, dt=dt, dx=dx, spec=spec, workers=workers,
        )
        scaled = math.sqrt(N / math.log(N)) * ens.values[:, 0]
        emp = float(scaled.var(ddof=1))
        var_ratio[i] = emp / (2.0 * t)
        var_se[i] = variance_stderr(scaled) / (2.0 * t)
        oracle[i] = var_avg_ratio(N, t, spec, field_kind=field_kind)
        ks[i] = ks_normal(scaled, 0.0, emp).ks_stat
    return SweepResult(
        t=t,
        Ns=arr,
        var_ratio=var_ratio,
        var_ratio_se=var_se,
        oracle_ratio=oracle,
        ks=ks,
        replicas=replicas,
    )


def fdd_check(
    ts,
    N: float,
    replicas: int,
    seed: int,
    field_kind: str = "gaussian_proxy",
    *,
    dt: float = DEFAULT_DT,
    dx: float = DEFAULT_DX,
    spec: QuadratureSpec = DEFAULT_QUAD,
    workers: int = 1,
) -> FddResult:
    """Empirical scaled covariance matrix of (S_{N, t_1}, ..., S_{N, t_m}).

    One joint ensemble over all requested times, scaled by N / log N and
    compared against the quadrature covariance and the large-N limit
    2 min(t_i, t_j). Entry standard errors use the near-Gaussian formula
    Var(c_ij) ~ (c_ii c_jj + c_ij^2) / (n - 1).
    """
    times = np.asarray(ts, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("ts must be nonempty")
    if times[0] <= 0.0 or not np.all(np.diff(times) > 0.0):
        raise ValueError(f"ts must be ascending and positive, got {times.tolist()}")
    if not (math.isfinite(N) and N >= math.e):
        raise ValueError(f"fdd_check needs N >= e, got {N!r}")
    if replicas < 100:
        raise ValueError(f"sweeps need at least 100 replicas, got {replicas}")
    ens = build_ensemble(
        field_kind, N, times, seed, replicas, dt=dt, dx=dx, spec=spec, workers=workers
    )
    scale = N / math.log(N)
    centered = ens.values - ens.values.mean(axis=0)
    emp = scale * (centered.T @ centered) / (replicas - 1)
    se = np.sqrt(
        (np.outer(np.diag(emp), np.diag(emp)) + emp**2) / (replicas - 1)
    )
    oracle = np.array(
        [
            [scaled_cov_avg(N, a, b, spec, field_kind=field_kind) for b in times]
            for a in times
        ]
    )
    limit = 2.0 * np.minimum.outer(times, times)
    return FddResult(
        N=N,
        ts=times,
        replicas=replicas,
        scaled_cov=emp,
        scaled_cov_se=se,
        oracle_scaled_cov=oracle,
        limit=limit,
    )


def ergodic_check(
    t: float,
    Ns,
    replicas: int,
    seed: int,
    *,
    field_kind: str = "gaussian_proxy",
    dt: float = DEFAULT_DT,
    dx: float = DEFAULT_DX,
    spec: QuadratureSpec = DEFAULT_QUAD,
    workers: int = 1,
) -> np.ndarray:
    """Root-mean-square of S_{N, t} per scale, the L2 ergodic deviation.

    The RMS is taken about zero (the exact mean), so it estimates the L2
    norm whose oracle value is sqrt(var_avg). It should decrease along an
    ascending Ns sweep at rate sqrt(log N / N).
    """
    arr = _check_sweep_args(Ns, replicas)
    out = np.empty(arr.size)
    for i, N in enumerate(arr):
        ens = build_ensemble(
            field_kind, N, [t], seed, replicas,
            replica_start=i * replicas, dt=dt, dx=dx, spec=spec, workers=workers,
        )
        out[i] = math.sqrt(float(np.mean(ens.values[:, 0] ** 2)))
    return out


def roughness_series(path: AveragePath, t_grid) -> RoughnessSeries:
    """Roughness values R_t = S_t^2 / (t log(1/t)) along one average path.

    Defined for t in (0, 1/e]; at the right endpoint log(1/t) = 1, so
    R = e S^2 there. The path must contain every requested time.
    """
    grid = np.asarray(t_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("t_grid must be nonempty")
    if np.any(grid <= 0.0) or np.any(grid > ROUGHNESS_T_MAX + 1e-15):
        raise ValueError(
            f"roughness times must lie in (0, 1/e], got {grid.tolist()}"
        )
    values = np.empty(grid.size)
    for i, t in enumerate(grid):
        hits = np.nonzero(np.isclose(path.times, t, rtol=1e-12, atol=1e-15))[0]
        if hits.size != 1:
            raise ValueError(f"path does not cover t={t!r}")
        s = float(path.values[hits[0]])
        values[i] = s * s / (t * math.log(1.0 / t))
    return RoughnessSeries(
        t_grid=grid, values=values, running_max=np.maximum.accumulate(values)
    )


def paley_zygmund_report(samples, mean=None, second_moment=None) -> PaleyZygmundReport:
    """Check P(Z >= mean/2) against the bound mean^2 / (4 E[Z^2]).

    Z must be nonnegative. When reference moments are omitted the sample
    moments stand in; supplying exact moments (as for the Gaussian proxy,
    where E[R] and E[R^2] are known) makes the bound deterministic.
    """
    z = np.asarray(samples, dtype=float).ravel()
    if z.size < 2:
        raise ValueError(f"paley_zygmund_report needs n >= 2, got {z.size}")
    if np.any(z < 0.0) or not np.isfinite(z).all():
        raise ValueError("samples must be nonnegative and finite")
    mu = float(np.mean(z)) if mean is None else float(mean)
    m2 = float(np.mean(z**2)) if second_moment is None else float(second_moment)
    if mu <= 0.0 or m2 <= 0.0:
        raise ValueError(f"moments must be positive, got mean={mu!r}, m2={m2!r}")
    hits = z >= 0.5 * mu
    freq = float(np.mean(hits))
    return PaleyZygmundReport(
        n=z.size,
        frequency=freq,
        bound=mu * mu / (4.0 * m2),
        stderr=math.sqrt(freq * (1.0 - freq) / z.size),
    )


def proxy_roughness_mean(N: float, t: float, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Oracle E[R_{N, t}] for the Gaussian proxy: Var(G_{N,t}) / (t log(1/t))."""
    if not 0.0 < t <= ROUGHNESS_T_MAX + 1e-15:
        raise ValueError(f"roughness times must lie in (0, 1/e], got {t!r}")
    v = var_avg(AvgVarianceQuery(N=N, t=t, field_kind="gaussian_proxy"), spec)
    return v / (t * math.log(1.0 / t))
