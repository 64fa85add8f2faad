"""Statistics layer: KS machinery, CLT sweeps, covariance and ergodic
checks against the oracles, and the roughness statistic."""

import math

import numpy as np
import pytest

from pamlab.noise import standard_normals
from pamlab.oracle import AvgVarianceQuery, var_avg
from pamlab.solver import AveragePath, sample_proxy_averages, scheme_average_variance
from pamlab.stats import (
    KS_COEFF_1PCT,
    FddResult,
    NormalitySummary,
    PaleyZygmundReport,
    RoughnessSeries,
    SweepResult,
    bootstrap_variance_stderr,
    clt_sweep,
    ergodic_check,
    fdd_check,
    ks_normal,
    paley_zygmund_report,
    proxy_roughness_mean,
    roughness_series,
    variance_stderr,
)


class TestKsNormal:
    def test_exact_normal_draws_pass(self):
        draws = standard_normals(17, 0, 10_000)
        summary = ks_normal(draws, 0.0, 1.0)
        assert summary.ks_stat < summary.ks_critical_1pct
        assert summary.ks_critical_1pct == pytest.approx(KS_COEFF_1PCT / 100.0)
        assert summary.n == 10_000
        assert abs(summary.mean) < 3.5 * summary.stderr_mean

    def test_mean_shift_is_rejected(self):
        draws = standard_normals(18, 0, 10_000) + 0.5
        summary = ks_normal(draws, 0.0, 1.0)
        assert summary.ks_stat > 5.0 * summary.ks_critical_1pct

    def test_affine_invariance(self):
        draws = standard_normals(19, 0, 2_000)
        base = ks_normal(draws, 0.0, 1.0).ks_stat
        moved = ks_normal(2.5 * draws - 1.3, -1.3, 2.5**2).ks_stat
        assert moved == pytest.approx(base, abs=1e-10)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            ks_normal(np.zeros(100), 0.0, 1.0)
        with pytest.raises(ValueError):
            ks_normal(np.arange(5.0), 0.0, 1.0)
        with pytest.raises(ValueError):
            ks_normal(np.arange(20.0), 0.0, 0.0)
        bad = np.arange(20.0)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            ks_normal(bad, 0.0, 1.0)

    def test_summary_validation(self):
        with pytest.raises(ValueError):
            NormalitySummary(
                n=1, mean=0.0, variance=1.0, stderr_mean=1.0, ks_stat=0.1,
                ks_critical_1pct=0.1,
            )
        with pytest.raises(ValueError):
            NormalitySummary(
                n=10, mean=0.0, variance=-1.0, stderr_mean=1.0, ks_stat=0.1,
                ks_critical_1pct=0.1,
            )
        with pytest.raises(ValueError):
            NormalitySummary(
                n=10, mean=0.0, variance=1.0, stderr_mean=1.0, ks_stat=1.5,
                ks_critical_1pct=0.1,
            )


class TestVarianceErrors:
    def test_bootstrap_agrees_with_asymptotic(self):
        draws = 0.7 * standard_normals(21, 0, 4_000)
        asym = variance_stderr(draws)
        boot = bootstrap_variance_stderr(draws, resamples=200, seed=5)
        assert 0.75 < boot / asym < 1.3, f"bootstrap {boot:.3g} vs asymptotic {asym:.3g}"

    def test_validation(self):
        with pytest.raises(ValueError):
            variance_stderr(np.ones(1))
        with pytest.raises(ValueError):
            bootstrap_variance_stderr(np.ones(1))
        with pytest.raises(ValueError):
            bootstrap_variance_stderr(np.ones(10), resamples=1)


class TestCltSweep:
    def test_proxy_matches_oracle(self):
        sweep = clt_sweep(0.5, [50.0, 200.0, 1000.0], 3000, seed=411)
        z = (sweep.var_ratio - sweep.oracle_ratio) / sweep.var_ratio_se
        assert np.abs(z).max() < 3.5, f"variance ratios off: z={z}"
        # The proxy ratio climbs toward 1 from below (no theta enhancement);
        # only the monotone shrinking of the gap is asserted.
        gaps = np.abs(sweep.oracle_ratio - 1.0)
        assert np.all(np.diff(gaps) < 0.0), f"oracle gap to 1 not shrinking: {gaps}"
        assert np.all(sweep.oracle_ratio > 0.0)
        assert np.all((sweep.ks >= 0.0) & (sweep.ks <= 1.0))

    def test_proxy_ks_passes_across_seed_batches(self):
        """The proxy average is exactly Gaussian, so KS failures at the 1%
        level are test size only: at least 19 of 20 seed batches pass."""
        crit = KS_COEFF_1PCT / math.sqrt(500)
        passed = 0
        for batch in range(20):
            sweep = clt_sweep(0.5, [100.0], 500, seed=1000 + batch)
            passed += bool(sweep.ks[0] < crit)
        assert passed >= 19, f"only {passed}/20 proxy batches passed KS"

    def test_pam_variance_matches_scheme_pin(self):
        N, t, dt, dx = 10.0, 0.5, 5e-3, 5e-2
        sweep = clt_sweep(t, [N], 300, seed=412, field_kind="pam", dt=dt, dx=dx)
        pin = scheme_average_variance(N, t, dt=dt, dx=dx)
        ref_ratio = pin * N / (math.log(N) * 2.0 * t)
        z = (sweep.var_ratio[0] - ref_ratio) / sweep.var_ratio_se[0]
        assert abs(z) < 3.5, f"pam sweep ratio z={z:+.2f} vs scheme pin"

    def test_deterministic(self):
        a = clt_sweep(0.5, [50.0], 200, seed=413)
        b = clt_sweep(0.5, [50.0], 200, seed=413)
        assert a.var_ratio.tobytes() == b.var_ratio.tobytes()
        assert a.ks.tobytes() == b.ks.tobytes()

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            clt_sweep(0.5, [], 200, seed=1)
        with pytest.raises(ValueError):
            clt_sweep(0.5, [100.0, 50.0], 200, seed=1)
        with pytest.raises(ValueError):
            clt_sweep(0.5, [2.0], 200, seed=1)
        with pytest.raises(ValueError):
            clt_sweep(0.5, [50.0], 99, seed=1)
        with pytest.raises(ValueError):
            clt_sweep(0.5, [50.0], 200, seed=1, field_kind="brownian")

    def test_result_validation(self):
        with pytest.raises(ValueError):
            SweepResult(
                t=0.5,
                Ns=np.array([10.0, 20.0]),
                var_ratio=np.ones(1),
                var_ratio_se=np.ones(2),
                oracle_ratio=np.ones(2),
                ks=np.zeros(2),
                replicas=100,
            )
        with pytest.raises(ValueError):
            SweepResult(
                t=0.5,
                Ns=np.array([10.0]),
                var_ratio=np.ones(1),
                var_ratio_se=np.ones(1),
                oracle_ratio=np.zeros(1),
                ks=np.zeros(1),
                replicas=100,
            )


class TestFddCheck:
    def test_proxy_matches_oracle_entrywise(self):
        res = fdd_check([0.5, 1.0], 1000.0, 10_000, seed=421)
        gap = np.abs(res.scaled_cov - res.oracle_scaled_cov)
        assert np.all(gap < 3.5 * res.scaled_cov_se), (
            f"covariance gaps {gap} exceed 3.5 se {res.scaled_cov_se}"
        )
        np.testing.assert_allclose(res.scaled_cov, res.scaled_cov.T, rtol=1e-12)
        eigs = np.linalg.eigvalsh(res.scaled_cov)
        assert eigs.min() > -1e-9 * eigs.max()
        np.testing.assert_allclose(
            res.limit, [[1.0, 1.0], [1.0, 2.0]], rtol=1e-15
        )

    def test_diagonal_consistent_with_clt_sweep(self):
        res = fdd_check([0.5, 1.0], 200.0, 400, seed=422)
        sweep = clt_sweep(0.5, [200.0], 400, seed=422)
        assert res.scaled_cov[0, 0] / (2.0 * 0.5) == pytest.approx(
            sweep.var_ratio[0], rel=1e-12
        )

    def test_pam_joint_sampling(self):
        res = fdd_check(
            [0.25, 0.5], 10.0, 120, seed=423, field_kind="pam", dt=5e-3, dx=5e-2
        )
        assert res.scaled_cov.shape == (2, 2)
        assert np.isfinite(res.scaled_cov).all()
        assert res.scaled_cov[0, 1] == pytest.approx(res.scaled_cov[1, 0])
        assert res.oracle_scaled_cov[0, 1] > 0.0

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            fdd_check([], 100.0, 200, seed=1)
        with pytest.raises(ValueError):
            fdd_check([1.0, 0.5], 100.0, 200, seed=1)
        with pytest.raises(ValueError):
            fdd_check([0.5], 2.0, 200, seed=1)
        with pytest.raises(ValueError):
            fdd_check([0.5], 100.0, 50, seed=1)
        with pytest.raises(ValueError):
            FddResult(
                N=100.0,
                ts=np.array([0.5]),
                replicas=200,
                scaled_cov=np.ones((2, 2)),
                scaled_cov_se=np.ones((1, 1)),
                oracle_scaled_cov=np.ones((1, 1)),
                limit=np.ones((1, 1)),
            )


class TestErgodicCheck:
    def test_proxy_rms_decays_and_matches_oracle(self):
        Ns = [50.0, 100.0, 200.0]
        rms = ergodic_check(0.5, Ns, 4000, seed=431)
        assert np.all(np.diff(rms) < 0.0), f"RMS not decreasing: {rms}"
        for N, value in zip(Ns, rms):
            target = math.sqrt(
                var_avg(AvgVarianceQuery(N=N, t=0.5, field_kind="gaussian_proxy"))
            )
            se = target / math.sqrt(2.0 * 4000)
            assert abs(value - target) < 3.5 * se, (
                f"N={N}: rms {value:.5f} vs oracle {target:.5f}"
            )

    def test_deterministic(self):
        a = ergodic_check(0.5, [50.0], 150, seed=432)
        b = ergodic_check(0.5, [50.0], 150, seed=432)
        assert a.tobytes() == b.tobytes()

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            ergodic_check(0.5, [], 200, seed=1)
        with pytest.raises(ValueError):
            ergodic_check(0.5, [50.0], 200, seed=1, field_kind="brownian")


class TestRoughness:
    def test_value_at_domain_edge(self):
        t_edge = 1.0 / math.e
        path = AveragePath(
            N=100.0, replica_id=0, times=np.array([t_edge]), values=np.array([0.7])
        )
        series = roughness_series(path, [t_edge])
        assert series.values[0] == pytest.approx(math.e * 0.49, rel=1e-12)

    def test_running_maximum(self):
        times = np.array([0.01, 0.05, 0.1])
        path = AveragePath(
            N=100.0, replica_id=0, times=times, values=np.array([0.02, -0.01, 0.03])
        )
        series = roughness_series(path, times)
        expected = path.values**2 / (times * np.log(1.0 / times))
        np.testing.assert_allclose(series.values, expected, rtol=1e-12)
        np.testing.assert_allclose(
            series.running_max, np.maximum.accumulate(expected), rtol=1e-12
        )

    def test_domain_errors(self):
        path = AveragePath(
            N=100.0, replica_id=0, times=np.array([0.05]), values=np.array([0.1])
        )
        with pytest.raises(ValueError):
            roughness_series(path, [0.5])
        with pytest.raises(ValueError):
            roughness_series(path, [-0.01])
        with pytest.raises(ValueError):
            roughness_series(path, [])
        with pytest.raises(ValueError):
            roughness_series(path, [0.02])

    def test_proxy_mean_matches_oracle(self):
        t_grid = [0.01, 0.05, 0.1]
        ens = sample_proxy_averages(100.0, t_grid, seed=441, replicas=4000)
        rows = np.stack(
            [roughness_series(ens.path(k), t_grid).values for k in range(4000)]
        )
        for j, t in enumerate(t_grid):
            target = proxy_roughness_mean(100.0, t)
            se = rows[:, j].std(ddof=1) / math.sqrt(rows.shape[0])
            z = (rows[:, j].mean() - target) / se
            assert abs(z) < 3.5, f"E[R] at t={t}: z={z:+.2f}"

    def test_paley_zygmund_gaussian_exact(self):
        t = 0.05
        ens = sample_proxy_averages(100.0, [t], seed=442, replicas=4000)
        r_vals = ens.values[:, 0] ** 2 / (t * math.log(1.0 / t))
        mean_exact = proxy_roughness_mean(100.0, t)
        report = paley_zygmund_report(
            r_vals, mean=mean_exact, second_moment=3.0 * mean_exact**2
        )
        assert report.bound == pytest.approx(1.0 / 12.0, rel=1e-12)
        from scipy.special import ndtr

        p_exact = 2.0 * (1.0 - ndtr(1.0 / math.sqrt(2.0)))
        z = (report.frequency - p_exact) / report.stderr
        assert abs(z) < 3.5, f"PZ frequency z={z:+.2f}"
        assert report.frequency - 3.5 * report.stderr > report.bound

    def test_paley_zygmund_validation(self):
        with pytest.raises(ValueError):
            paley_zygmund_report(np.array([-0.1, 0.5]))
        with pytest.raises(ValueError):
            paley_zygmund_report(np.array([1.0]))
        with pytest.raises(ValueError):
            paley_zygmund_report(np.zeros(10))
        report = paley_zygmund_report(np.array([1.0, 2.0, 3.0, 6.0]))
        assert isinstance(report, PaleyZygmundReport)
        assert report.frequency == pytest.approx(0.75)

    def test_series_validation(self):
        with pytest.raises(ValueError):
            RoughnessSeries(
                t_grid=np.array([0.1]),
                values=np.array([1.0, 2.0]),
                running_max=np.array([1.0]),
            )
        with pytest.raises(ValueError):
            proxy_roughness_mean(100.0, 0.5)
