"""End-to-end acceptance gates for the package.

Each test prints exactly one `ACCEPTANCE <name>: PASS|FAIL (...)` line,
visible in the pytest summary via the -rP option configured in
pyproject.toml. Pinned constants were produced by calibration runs of the
same code paths at the same seeds; Monte Carlo gates use three standard
errors, plus a deterministic discretization bias where the sampler's grid
cuts the continuum value.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import dblquad

from pamlab.kernels import bridge_kernel, log_heat_kernel, rect_kernel_mass
from pamlab.oracle import (
    AvgVarianceQuery,
    scaled_cov_avg,
    var_avg,
    var_avg_ratio,
)
from pamlab.solver import (
    pam_point_samples,
    sample_proxy_averages,
    scheme_average_variance,
    scheme_second_moment,
)
from pamlab.specfun import (
    g_fn_values,
    log_plus,
    phi_weighted_integral,
    quad,
    theta,
)
from pamlab.stats import (
    build_ensemble,
    ergodic_check,
    fdd_check,
    ks_normal,
    paley_zygmund_report,
    proxy_roughness_mean,
)

# Calibration pins (frozen; %.17g). LIMIT_GAP_* are the seed-1402 grid
# values for |G(1e12, t, x) - 2t|; SCHEME_* are exact recursion values at
# the named resolutions; TERMINAL_RATIO are the N = 1e8 variance ratios.
LIMIT_GAP_THRESHOLD = 1.0832448349091939
LIMIT_GAP_AT_UNIT = 0.020890131511237531
TERMINAL_RATIO = {0.5: 1.0227648935001976, 1.0: 1.0286022118095297}
SCHEME_M2_COARSE = {
    0.25: 0.97445446963911508,
    0.5: 0.60013905444433235,
    1.0: 0.41046697135150539,
}
SCHEME_M2_FINE = {
    0.25: 0.98744618977026355,
    0.5: 0.60891248593150171,
    1.0: 0.41730808844349576,
}
SCHEME_AVG_VAR = {
    50.0: 0.071562365699586183,
    100.0: 0.038074181522953783,
    200.0: 0.019615316700270939,
}

PAM_NS = (50.0, 100.0, 200.0)
CLT_T = 0.5
CLT_SEED = 1306
CLT_REPLICAS = 2000
# 1% critical value of the one-sample KS statistic at 2000 replicas.
CLT_KS_THRESHOLD = 1.6276 / math.sqrt(CLT_REPLICAS)


def _report(name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def pam_ensembles():
    """PAM spatial-average ensembles shared by the CLT and ergodic gates,
    laid out block-by-block exactly like clt_sweep."""
    out = {}
    for i, N in enumerate(PAM_NS):
        out[N] = build_ensemble(
            "pam", N, [CLT_T], CLT_SEED, CLT_REPLICAS,
            replica_start=i * CLT_REPLICAS,
        )
    return out


def test_criterion_01_bridge_identity():
    rng = np.random.default_rng(1401)
    n = 10_000
    t = np.exp(rng.uniform(math.log(0.05), math.log(4.0), size=n))
    s = t * rng.uniform(0.05, 0.95, size=n)
    x = rng.uniform(-4.0, 4.0, size=n)
    y = rng.uniform(-4.0, 4.0, size=n)
    start = time.perf_counter()
    worst = 0.0
    for k in range(n):
        lhs = bridge_kernel(float(s[k]), float(t[k]), float(y[k]), float(x[k]))
        rhs = math.exp(
            log_heat_kernel(float(t[k] - s[k]), float(x[k] - y[k]))
            + log_heat_kernel(float(s[k]), float(y[k]))
            - log_heat_kernel(float(t[k]), float(x[k]))
        )
        worst = max(worst, abs(lhs - rhs))
    wall = time.perf_counter() - start
    _report(
        "criterion-01 bridge-identity",
        worst < 1e-12 and wall < 1.0,
        f"max|lhs-rhs| = {worst:.3e} over {n} tuples, {wall:.2f} s",
    )


def test_criterion_02_rect_fourier_identity():
    worst = 0.0
    for N in (10.0, 100.0):
        for t in (0.5, 1.0, 2.0):
            two_d, _ = dblquad(
                lambda x2, x1: math.exp(log_heat_kernel(t, x1 - x2)),
                0.0, N, 0.0, N, epsabs=1e-10, epsrel=1e-12,
            )
            fourier, _ = phi_weighted_integral(
                lambda z: math.exp(-t * z * z / (2.0 * N * N))
            )
            fourier *= N / math.pi
            closed = rect_kernel_mass(t, N, N)
            worst = max(
                worst,
                abs(two_d - fourier) / fourier,
                abs(closed - fourier) / fourier,
            )
    _report(
        "criterion-02 rect-fourier-identity",
        worst < 1e-8,
        f"max rel gap = {worst:.3e} over (N, t) in {{10,100}} x {{0.5,1,2}}",
    )


def test_criterion_03_envelope_inequalities():
    rng = np.random.default_rng(1403)
    env_margin = math.inf
    for _ in range(1000):
        N = float(np.exp(rng.uniform(1.0, 30.0)))
        t = float(np.exp(rng.uniform(math.log(1e-3), math.log(5.0))))
        x = float(np.exp(rng.uniform(math.log(1e-3), math.log(20.0))))
        val = float(g_fn_values(N, t, x))
        bound = 7.0 * t * float(log_plus(1.0 / t)) * float(log_plus(1.0 / x))
        env_margin = min(env_margin, bound - val)

    rng = np.random.default_rng(1404)
    ctr_margin = math.inf
    for _ in range(1000):
        N = float(np.exp(rng.uniform(1.0, 30.0)))
        t = rng.uniform(1e-4, 0.9999)
        x = float(np.exp(rng.uniform(math.log(1e-3), math.log(20.0))))
        val = float(g_fn_values(N, t, x))
        center = t * math.log(1.0 / t) / math.log(N)
        ctr_margin = min(
            ctr_margin, 6.0 * t * float(log_plus(1.0 / x)) - abs(val - center)
        )

    rng = np.random.default_rng(1405)
    cap_margin = math.inf
    for eps in np.exp(rng.uniform(math.log(1e-4), 0.0, size=1000)):
        b = 1.0 / math.sqrt(eps)
        v1, _ = quad(lambda z: eps * float(log_plus(1.0 / z)), 0.0, b)
        v2, _ = quad(lambda z: float(log_plus(1.0 / z)) / (z * z), b, math.inf)
        cap_margin = min(cap_margin, 10.0 * math.sqrt(eps) - 2.0 * (v1 + v2))

    rng = np.random.default_rng(1402)
    t = np.exp(rng.uniform(math.log(0.1), math.log(4.0), size=1000))
    x = np.exp(rng.uniform(math.log(1e-2), math.log(20.0), size=1000))
    gaps = np.array(
        [abs(float(g_fn_values(1e12, ti, xi)) - 2.0 * ti) for ti, xi in zip(t, x)]
    )
    unit_gap = abs(float(g_fn_values(1e12, 1.0, 1.0)) - 2.0)

    ok = (
        env_margin > 0.0
        and ctr_margin > 0.0
        and cap_margin > 0.0
        and float(gaps.max()) <= LIMIT_GAP_THRESHOLD
        and abs(unit_gap - LIMIT_GAP_AT_UNIT) < 1e-10
    )
    _report(
        "criterion-03 envelope-inequalities",
        ok,
        f"min margins: envelope {env_margin:.3g}, centering {ctr_margin:.3g}, "
        f"capped-log {cap_margin:.3g}; max limit gap {gaps.max():.6g} "
        f"<= {LIMIT_GAP_THRESHOLD:.6g}",
    )


def test_criterion_04_variance_asymptotics():
    start = time.perf_counter()
    details = []
    ok = True
    for t, pin in TERMINAL_RATIO.items():
        ratios = np.array(
            [var_avg_ratio(N, t, field_kind="pam") for N in (1e2, 1e3, 1e4, 1e6, 1e8)]
        )
        strict = bool(np.all(np.diff(np.abs(ratios - 1.0)) < 0.0)) and bool(
            np.all(ratios > 1.0)
        )
        pinned = abs(ratios[-1] - pin) / pin < 1e-6
        ok = ok and strict and pinned
        details.append(f"t={t}: {ratios[0]:.5f}->{ratios[-1]:.8f}")
    wall = time.perf_counter() - start
    ok = ok and wall < 60.0
    _report(
        "criterion-04 variance-asymptotics",
        ok,
        "; ".join(details) + f"; strictly monotone to pinned terminals, {wall:.1f} s",
    )


def test_criterion_06_proxy_normality():
    ens = sample_proxy_averages(100.0, [0.5], seed=1301, replicas=10_000)
    ov = var_avg(AvgVarianceQuery(N=100.0, t=0.5, field_kind="gaussian_proxy"))
    summary = ks_normal(ens.values[:, 0], 0.0, ov)
    _report(
        "criterion-06 proxy-normality",
        summary.ks_stat < summary.ks_critical_1pct,
        f"ks = {summary.ks_stat:.5f} < crit(1%) = {summary.ks_critical_1pct:.5f} "
        f"against N(0, oracle var) at N=100, t=0.5, n=10000",
    )


def test_criterion_08_fdd_covariances():
    ts = (0.25, 0.5, 1.0)
    res = fdd_check(list(ts), 1000.0, 10_000, 1302)
    z = np.abs(res.scaled_cov - res.oracle_scaled_cov) / res.scaled_cov_se
    entrywise = bool(np.all(z <= 3.0))

    sweep = []
    for N in (1e2, 1e3, 1e4, 1e5):
        m = np.array(
            [[scaled_cov_avg(N, ti, tj, field_kind="gaussian_proxy") for tj in ts]
             for ti in ts]
        )
        sweep.append(np.abs(m - res.limit))
    max_gaps = [float(g.max()) for g in sweep]
    trend = bool(np.all(np.diff(max_gaps) < 0.0)) and bool(
        np.all(sweep[-1] < sweep[0])
    )
    _report(
        "criterion-08 fdd-covariances",
        entrywise and trend,
        f"max|z| = {float(z.max()):.2f} <= 3 at N=1000, n=10000; oracle gap "
        f"to 2min(ti,tj) {max_gaps[0]:.3f}->{max_gaps[-1]:.3f} along N-sweep",
    )


def test_criterion_10_local_roughness():
    ts = (0.01, 0.05, 0.1)
    ens = sample_proxy_averages(100.0, list(ts), seed=1304, replicas=10_000)
    worst_z = 0.0
    for i, t in enumerate(ts):
        r = ens.values[:, i] ** 2 / (t * math.log(1.0 / t))
        mean_r = float(np.mean(r))
        se = float(np.std(r, ddof=1) / math.sqrt(r.size))
        worst_z = max(worst_z, abs(mean_r - proxy_roughness_mean(100.0, t)) / se)
    r = ens.values[:, 0] ** 2 / (ts[0] * math.log(1.0 / ts[0]))
    pz = paley_zygmund_report(r)
    pz_ok = pz.frequency + 3.0 * pz.stderr >= pz.bound
    _report(
        "criterion-10 local-roughness",
        worst_z <= 3.0 and pz_ok,
        f"max|z| = {worst_z:.2f} <= 3 for E[R] vs oracle on t in {ts}; "
        f"PZ frequency {pz.frequency:.3f} >= bound {pz.bound:.3f} - 3 SE",
    )


def test_criterion_05_second_moment_fidelity():
    ts = (0.25, 0.5, 1.0)
    oracle = {t: (1.0 + float(theta(t))) / (2.0 * math.pi * t) for t in ts}
    coarse = scheme_second_moment(list(ts), dt=2e-3, dx=2e-2)
    fine = scheme_second_moment(list(ts), dt=1e-3, dx=1e-2)
    pins_ok = True
    bias_shrinks = True
    for i, t in enumerate(ts):
        pins_ok = pins_ok and abs(coarse[i] - SCHEME_M2_COARSE[t]) < 1e-9 * SCHEME_M2_COARSE[t]
        pins_ok = pins_ok and abs(fine[i] - SCHEME_M2_FINE[t]) < 1e-9 * SCHEME_M2_FINE[t]
        bias_shrinks = bias_shrinks and (
            abs(fine[i] - oracle[t]) < abs(coarse[i] - oracle[t])
        )

    pts = pam_point_samples(list(ts), seed=1305, replicas=10_000)
    sq = pts.values**2
    gates = []
    mc_ok = True
    for i, t in enumerate(ts):
        mc = float(np.mean(sq[:, i]))
        se = float(np.std(sq[:, i], ddof=1) / math.sqrt(sq.shape[0]))
        bias = abs(float(fine[i]) - oracle[t])
        gap = abs(mc - oracle[t])
        mc_ok = mc_ok and gap <= 3.0 * se + bias
        gates.append(f"t={t}: |mc-oracle| = {gap:.4f} <= 3se+bias = {3 * se + bias:.4f}")
    _report(
        "criterion-05 second-moment-fidelity",
        pins_ok and bias_shrinks and mc_ok,
        "; ".join(gates) + "; scheme pins reproduced, bias shrinks under halving",
    )


def test_criterion_07_pam_clt(pam_ensembles):
    ks = {}
    ratios = {}
    for N in PAM_NS:
        s = pam_ensembles[N].values[:, 0]
        scaled = math.sqrt(N / math.log(N)) * s / math.sqrt(2.0 * CLT_T)
        ratios[N] = float(np.var(scaled, ddof=1))
        ks[N] = ks_normal(scaled, 0.0, ratios[N]).ks_stat
    values = [ks[N] for N in PAM_NS]
    decreasing = bool(np.all(np.diff(values) < 0.0))
    under = values[-1] < CLT_KS_THRESHOLD
    _report(
        "criterion-07 pam-clt",
        decreasing and under,
        f"ks = {values[0]:.4f} > {values[1]:.4f} > {values[2]:.4f}, "
        f"terminal < {CLT_KS_THRESHOLD:.4f}; var ratios "
        f"{ratios[50.0]:.3f}/{ratios[100.0]:.3f}/{ratios[200.0]:.3f} "
        f"at n={CLT_REPLICAS}",
    )


def test_criterion_09_ergodic_decay(pam_ensembles):
    ns = list(PAM_NS)
    proxy_rms = ergodic_check(CLT_T, ns, 4000, 1303)
    proxy_ok = bool(np.all(np.diff(proxy_rms) < 0.0))
    worst_proxy_z = 0.0
    for N, rms in zip(ns, proxy_rms):
        target = math.sqrt(
            var_avg(AvgVarianceQuery(N=N, t=CLT_T, field_kind="gaussian_proxy"))
        )
        se = rms / math.sqrt(2.0 * 4000)
        worst_proxy_z = max(worst_proxy_z, abs(rms - target) / se)
    proxy_ok = proxy_ok and worst_proxy_z <= 3.0

    pam_rms = []
    pam_ok = True
    for N in ns:
        s = pam_ensembles[N].values[:, 0]
        rms = float(np.sqrt(np.mean(s**2)))
        pam_rms.append(rms)
        sv = scheme_average_variance(N, CLT_T)
        pam_ok = pam_ok and abs(sv - SCHEME_AVG_VAR[N]) < 1e-9 * SCHEME_AVG_VAR[N]
        ov = var_avg(AvgVarianceQuery(N=N, t=CLT_T, field_kind="pam"))
        bias = abs(math.sqrt(sv) - math.sqrt(ov))
        se = rms / math.sqrt(2.0 * CLT_REPLICAS)
        pam_ok = pam_ok and abs(rms - math.sqrt(ov)) <= 3.0 * se + bias
    pam_ok = pam_ok and bool(np.all(np.diff(pam_rms) < 0.0))
    _report(
        "criterion-09 ergodic-decay",
        proxy_ok and pam_ok,
        f"proxy rms {proxy_rms[0]:.4f}>{proxy_rms[1]:.4f}>{proxy_rms[2]:.4f} "
        f"(max|z| = {worst_proxy_z:.2f}); pam rms "
        f"{pam_rms[0]:.4f}>{pam_rms[1]:.4f}>{pam_rms[2]:.4f} within 3 SE + bias",
    )
