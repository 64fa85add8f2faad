"""Command line orchestration: configuration, experiments, serialization.

Subcommands map onto the package's verifiable claims. `verify` replays the
deterministic identity suite (kernel and quadrature pins) and exits 0 only
if every check passes; `oracle` prints closed-form values; `simulate`,
`clt`, `fdd`, `ergodic` and `local` run replica ensembles and write CSV
tables plus a JSON manifest echoing the full effective configuration.

Configuration is a single flat YAML mapping. Unknown keys, nested
mappings, or type mismatches fail closed with exit code 2 and a message
naming the offending key. Exit code 1 marks a failed verification, 3 a
numerical non-convergence (quadrature or solver). All CSV floats are
written with 17 significant digits so files round-trip exactly; the only
nondeterministic manifest field is the wall time.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml

from pamlab import __version__
from pamlab.kernels import (
    heat_kernel_values,
    log_heat_kernel,
    bridge_kernel,
    rect_kernel_mass,
)
from pamlab.noise import standard_normals
from pamlab.oracle import FIELD_KINDS, AvgVarianceQuery, cov_avg, var_avg, var_avg_ratio
from pamlab.solver import DEFAULT_DT, DEFAULT_DX, SolverError
from pamlab.specfun import (
    QuadratureError,
    QuadratureSpec,
    g_fn_values,
    phi_weighted_integral,
    theta,
)
from pamlab.stats import (
    KS_COEFF_1PCT,
    build_ensemble,
    clt_sweep,
    ergodic_check,
    fdd_check,
    ks_normal,
    paley_zygmund_report,
)

SUBCOMMANDS = ("verify", "oracle", "simulate", "clt", "fdd", "ergodic", "local")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

ROUGHNESS_T_MAX = 1.0 / math.e


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _tag(x: float) -> str:
    return format(float(x), "g")


def _as_int(key: str, raw) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"'{key}' must be an integer, got {raw!r}")
    return raw


def _as_float(key: str, raw) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {raw!r}")
    return float(raw)


def _as_float_list(key: str, raw) -> tuple:
    items = raw if isinstance(raw, list) else [raw]
    if not items:
        raise ConfigError(f"'{key}' must not be empty")
    return tuple(_as_float(key, item) for item in items)


def _as_choice(key: str, raw, choices) -> str:
    if not isinstance(raw, str) or raw not in choices:
        raise ConfigError(f"'{key}' must be one of {choices}, got {raw!r}")
    return raw


_REQUIRED = {
    "verify": (),
    "oracle": ("N_list", "t_list"),
    "simulate": ("seed", "replicas", "N_list", "t_list"),
    "clt": ("seed", "replicas", "N_list", "t_list"),
    "fdd": ("seed", "replicas", "N_list", "t_list"),
    "ergodic": ("seed", "replicas", "N_list", "t_list"),
    "local": ("seed", "replicas", "N_list", "t_list"),
}

_KNOWN_KEYS = (
    "subcommand",
    "seed",
    "replicas",
    "N_list",
    "t_list",
    "field_kind",
    "dt",
    "dx",
    "quad_abs_tol",
    "quad_rel_tol",
    "quad_max_subdivisions",
    "quad_endpoint_substitution",
    "output_dir",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Effective run configuration with every default resolved."""

    subcommand: str
    seed: int | None
    replicas: int | None
    N_list: tuple | None
    t_list: tuple | None
    field_kind: str
    dt: float
    dx: float
    quad: QuadratureSpec
    output_dir: str
    workers: int

    def effective(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "replicas": self.replicas,
            "N_list": list(self.N_list) if self.N_list is not None else None,
            "t_list": list(self.t_list) if self.t_list is not None else None,
            "field_kind": self.field_kind,
            "dt": self.dt,
            "dx": self.dx,
            "quad_abs_tol": self.quad.abs_tol,
            "quad_rel_tol": self.quad.rel_tol,
            "quad_max_subdivisions": self.quad.max_subdivisions,
            "quad_endpoint_substitution": self.quad.endpoint_substitution,
            "output_dir": self.output_dir,
            "workers": self.workers,
        }


def load_config(subcommand: str, config_path, output_dir_override) -> ExperimentConfig:
    data = {}
    if config_path is not None:
        with open(config_path, "r") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a flat key-value mapping")
        data = loaded

    for key, value in data.items():
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(value, dict):
            raise ConfigError(f"config must stay flat, key '{key}' holds a mapping")

    if "subcommand" in data:
        stated = _as_choice("subcommand", data["subcommand"], SUBCOMMANDS)
        if stated != subcommand:
            raise ConfigError(
                f"config names subcommand '{stated}' but '{subcommand}' was invoked"
            )

    for key in _REQUIRED[subcommand]:
        if key not in data:
            raise ConfigError(f"'{subcommand}' requires config key '{key}'")

    try:
        quad = QuadratureSpec(
            abs_tol=_as_float("quad_abs_tol", data.get("quad_abs_tol", 1e-10)),
            rel_tol=_as_float("quad_rel_tol", data.get("quad_rel_tol", 1e-8)),
            max_subdivisions=_as_int(
                "quad_max_subdivisions", data.get("quad_max_subdivisions", 2000)
            ),
            endpoint_substitution=data.get("quad_endpoint_substitution", "none"),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"quadrature configuration invalid: {err}") from err

    raw_workers = os.environ.get("PAMLAB_WORKERS", "1")
    try:
        workers = int(raw_workers)
    except ValueError:
        raise ConfigError(f"PAMLAB_WORKERS must be an integer, got {raw_workers!r}")
    if workers < 1:
        raise ConfigError(f"PAMLAB_WORKERS must be >= 1, got {workers}")

    output_dir = data.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError(f"'output_dir' must be a string, got {output_dir!r}")
    if output_dir_override is not None:
        output_dir = output_dir_override

    return ExperimentConfig(
        subcommand=subcommand,
        seed=_as_int("seed", data["seed"]) if "seed" in data else None,
        replicas=_as_int("replicas", data["replicas"]) if "replicas" in data else None,
        N_list=_as_float_list("N_list", data["N_list"]) if "N_list" in data else None,
        t_list=_as_float_list("t_list", data["t_list"]) if "t_list" in data else None,
        field_kind=_as_choice(
            "field_kind", data.get("field_kind", "gaussian_proxy"), FIELD_KINDS
        ),
        dt=_as_float("dt", data.get("dt", DEFAULT_DT)),
        dx=_as_float("dx", data.get("dx", DEFAULT_DX)),
        quad=quad,
        output_dir=output_dir,
        workers=workers,
    )


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_manifest(cfg: ExperimentConfig, outputs, wall: float, extra=None) -> Path:
    doc = {
        "subcommand": cfg.subcommand,
        "config": cfg.effective(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pamlab": __version__,
        },
        "wall_time_s": wall,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc.update(extra)
    path = Path(cfg.output_dir) / f"{cfg.subcommand}_manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _verify_checks(quad: QuadratureSpec):
    """Deterministic identity suite over the kernel and quadrature layers."""
    checks = []

    rng = np.random.default_rng(624)
    worst = 0.0
    for _ in range(2000):
        t = float(np.exp(rng.uniform(math.log(0.05), math.log(4.0))))
        s = t * float(rng.uniform(0.05, 0.95))
        a = float(rng.uniform(-4.0, 4.0))
        b = float(rng.uniform(-4.0, 4.0))
        ratio = math.exp(
            float(log_heat_kernel(t - s, a))
            + float(log_heat_kernel(s, b))
            - float(log_heat_kernel(t, a + b))
        )
        worst = max(worst, abs(ratio - float(bridge_kernel(s, t, b, a + b))))
    checks.append(("bridge_identity", worst < 1e-12, f"max abs err {worst:.3e}"))

    pins = ((2.0, 3.4770518117036944), (1.0, 1.7302344337037001))
    ok = all(abs(theta(s) - pin) <= 1e-9 * pin for s, pin in pins)
    checks.append(("theta_pins", ok, "theta(2), theta(1) against stored values"))

    worst = 0.0
    for N, t in ((10.0, 0.5), (100.0, 1.0)):
        lhs = rect_kernel_mass(t, N, N)
        value, _ = phi_weighted_integral(
            lambda z: math.exp(-t * z * z / (2.0 * N * N)), quad
        )
        rhs = N / math.pi * value
        worst = max(worst, abs(lhs - rhs) / rhs)
    checks.append(("rect_fourier_identity", worst < 1e-8, f"max rel err {worst:.3e}"))

    gap = abs(float(g_fn_values(1e12, 1.0, 1.0)) - 2.0)
    checks.append(("g_large_scale_limit", gap < 0.021, f"|G - 2t| = {gap:.6f}"))

    var_pins = (
        ("pam", 0.05008994976373182),
        ("gaussian_proxy", 0.04252834752592387),
    )
    ok = True
    for kind, pin in var_pins:
        value = var_avg(AvgVarianceQuery(N=100.0, t=0.5, field_kind=kind), quad)
        ok = ok and abs(value - pin) <= 1e-9 * pin
    checks.append(("averaged_variance_pins", ok, "var_avg(100, 0.5) both fields"))

    cov_pin = 0.050070446546281636
    value = cov_avg(100.0, 0.5, 1.0, quad)
    checks.append(
        (
            "averaged_covariance_pin",
            abs(value - cov_pin) <= 1e-9 * cov_pin,
            "cov_avg(100, 0.5, 1.0)",
        )
    )

    draws = standard_normals(0, 0, 4000)
    again = standard_normals(0, 0, 4000)
    summary = ks_normal(draws, 0.0, 1.0)
    ok = draws.tobytes() == again.tobytes() and summary.ks_stat < summary.ks_critical_1pct
    checks.append(
        ("noise_stream", ok, f"deterministic, ks {summary.ks_stat:.4f}")
    )
    return checks


def _run_verify(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    checks = _verify_checks(cfg.quad)
    passed = True
    for name, ok, detail in checks:
        passed = passed and ok
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    _write_manifest(
        cfg,
        [],
        time.perf_counter() - start,
        extra={
            "pass": passed,
            "checks": [
                {"name": name, "passed": ok, "detail": detail}
                for name, ok, detail in checks
            ],
        },
    )
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def _run_oracle(cfg: ExperimentConfig) -> int:
    for t in cfg.t_list:
        print(f"theta({_tag(t)}) = {_fmt(theta(t))}")
        moment = heat_kernel_values(t, 0.0) ** 2 * (1.0 + theta(t))
        print(f"second_moment_u({_tag(t)}, 0) = {_fmt(moment)}")
    for N in cfg.N_list:
        for t in cfg.t_list:
            for kind in FIELD_KINDS:
                value = var_avg(AvgVarianceQuery(N=N, t=t, field_kind=kind), cfg.quad)
                ratio = var_avg_ratio(N, t, cfg.quad, field_kind=kind)
                print(f"var_avg[{kind}](N={_tag(N)}, t={_tag(t)}) = {_fmt(value)}")
                print(f"var_ratio[{kind}](N={_tag(N)}, t={_tag(t)}) = {_fmt(ratio)}")
    return EXIT_OK


def _run_simulate(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    negative_share = {}
    for N in cfg.N_list:
        ens = build_ensemble(
            cfg.field_kind,
            N,
            list(cfg.t_list),
            cfg.seed,
            cfg.replicas,
            dt=cfg.dt,
            dx=cfg.dx,
            spec=cfg.quad,
            workers=cfg.workers,
        )
        rows = []
        for k in range(ens.values.shape[0]):
            for j, t in enumerate(ens.times):
                rows.append((str(int(ens.replica_ids[k])), _fmt(t), _fmt(ens.values[k, j])))
        path = out / f"simulate_N{_tag(N)}.csv"
        _write_csv(path, "replica,t,S", rows)
        outputs.append(path)
        negative_share[_tag(N)] = ens.negative_share
    _write_manifest(
        cfg, outputs, time.perf_counter() - start,
        extra={"negative_share": negative_share},
    )
    return EXIT_OK


def _run_clt(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    crit = KS_COEFF_1PCT / math.sqrt(cfg.replicas)
    rows = []
    for t in cfg.t_list:
        sweep = clt_sweep(
            t,
            list(cfg.N_list),
            cfg.replicas,
            cfg.seed,
            cfg.field_kind,
            dt=cfg.dt,
            dx=cfg.dx,
            spec=cfg.quad,
            workers=cfg.workers,
        )
        for i, N in enumerate(sweep.Ns):
            rows.append(
                (
                    _fmt(N),
                    _fmt(t),
                    str(cfg.replicas),
                    _fmt(sweep.var_ratio[i]),
                    _fmt(sweep.var_ratio_se[i]),
                    _fmt(sweep.oracle_ratio[i]),
                    _fmt(sweep.ks[i]),
                    _fmt(crit),
                )
            )
    path = out / "clt.csv"
    _write_csv(
        path,
        "N,t,replicas,emp_var_ratio,emp_var_se,oracle_var_ratio,ks_stat,ks_crit_1pct",
        rows,
    )
    _write_manifest(cfg, [path], time.perf_counter() - start)
    return EXIT_OK


def _run_fdd(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for N in cfg.N_list:
        res = fdd_check(
            list(cfg.t_list),
            N,
            cfg.replicas,
            cfg.seed,
            cfg.field_kind,
            dt=cfg.dt,
            dx=cfg.dx,
            spec=cfg.quad,
            workers=cfg.workers,
        )
        rows = []
        m = len(res.ts)
        for i in range(m):
            for j in range(i, m):
                rows.append(
                    (
                        _fmt(res.ts[i]),
                        _fmt(res.ts[j]),
                        _fmt(res.scaled_cov[i, j]),
                        _fmt(res.scaled_cov_se[i, j]),
                        _fmt(res.oracle_scaled_cov[i, j]),
                        _fmt(res.limit[i, j]),
                    )
                )
        path = out / f"fdd_N{_tag(N)}.csv"
        _write_csv(
            path, "t_i,t_j,emp_scaled_cov,se,oracle_scaled_cov,limit_2min", rows
        )
        outputs.append(path)
    _write_manifest(cfg, outputs, time.perf_counter() - start)
    return EXIT_OK


def _run_ergodic(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in cfg.t_list:
        rms = ergodic_check(
            t,
            list(cfg.N_list),
            cfg.replicas,
            cfg.seed,
            field_kind=cfg.field_kind,
            dt=cfg.dt,
            dx=cfg.dx,
            spec=cfg.quad,
            workers=cfg.workers,
        )
        for N, value in zip(cfg.N_list, rms):
            oracle_rms = math.sqrt(
                var_avg(AvgVarianceQuery(N=N, t=t, field_kind=cfg.field_kind), cfg.quad)
            )
            rows.append(
                (
                    _fmt(N),
                    _fmt(t),
                    str(cfg.replicas),
                    _fmt(value),
                    _fmt(value / math.sqrt(2.0 * cfg.replicas)),
                    _fmt(oracle_rms),
                )
            )
    path = out / "ergodic.csv"
    _write_csv(path, "N,t,replicas,rms,rms_se,oracle_rms", rows)
    _write_manifest(cfg, [path], time.perf_counter() - start)
    return EXIT_OK


def _run_local(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    for t in cfg.t_list:
        if not 0.0 < t <= ROUGHNESS_T_MAX + 1e-15:
            raise ConfigError(
                f"'t_list' for local must lie in (0, 1/e], got {t!r}"
            )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for N in cfg.N_list:
        ens = build_ensemble(
            cfg.field_kind,
            N,
            list(cfg.t_list),
            cfg.seed,
            cfg.replicas,
            dt=cfg.dt,
            dx=cfg.dx,
            spec=cfg.quad,
            workers=cfg.workers,
        )
        rows = []
        for j, t in enumerate(ens.times):
            r_vals = ens.values[:, j] ** 2 / (t * math.log(1.0 / t))
            oracle_r = var_avg(
                AvgVarianceQuery(N=N, t=float(t), field_kind=cfg.field_kind), cfg.quad
            ) / (t * math.log(1.0 / t))
            pz = paley_zygmund_report(r_vals)
            rows.append(
                (
                    _fmt(t),
                    str(cfg.replicas),
                    _fmt(r_vals.mean()),
                    _fmt(r_vals.std(ddof=1) / math.sqrt(r_vals.size)),
                    _fmt(oracle_r),
                    _fmt(pz.frequency),
                    _fmt(pz.bound),
                    _fmt(pz.stderr),
                )
            )
        path = out / f"local_N{_tag(N)}.csv"
        _write_csv(
            path,
            "t,replicas,mean_R,se_R,oracle_R,pz_frequency,pz_bound,pz_stderr",
            rows,
        )
        outputs.append(path)
    _write_manifest(cfg, outputs, time.perf_counter() - start)
    return EXIT_OK


_RUNNERS = {
    "verify": _run_verify,
    "oracle": _run_oracle,
    "simulate": _run_simulate,
    "clt": _run_clt,
    "fdd": _run_fdd,
    "ergodic": _run_ergodic,
    "local": _run_local,
}

_HELP = {
    "verify": "run the deterministic identity suite and exit 0 iff it passes",
    "oracle": "print closed-form oracle values for the requested scales and times",
    "simulate": "write replica average paths as CSV",
    "clt": "sweep the averaging scale and test normality of the scaled average",
    "fdd": "empirical scaled covariance matrices across times",
    "ergodic": "root-mean-square decay of the spatial average along scales",
    "local": "small-time roughness statistics and Paley-Zygmund frequencies",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pamlab",
        description="Simulation and verification laboratory for the parabolic "
        "Anderson model with delta initial condition.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", default=None, help="flat YAML configuration file")
        sp.add_argument(
            "--output-dir", default=None, help="directory for CSV and manifest outputs"
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.subcommand, args.config, args.output_dir)
        return _RUNNERS[cfg.subcommand](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, SolverError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
