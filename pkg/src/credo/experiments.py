"""Config-driven experiments behind the command-line verbs.

Each ``run_*`` function takes a parsed :class:`~credo.config.Config`, runs
its experiment, writes artifacts to an output directory and returns an
:class:`Outcome` whose ``lines`` are the human-readable report.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import harness as hz
from .config import AUTO, Config, ConfigError
from .ingest import (PARTITION_PRESETS, build_static_model, load_csv, partition, read_manifest,
                     test_error_metric, write_manifest)
from .schedules import WeightSchedule
from .seeding import DOMAIN_SENSING, DOMAIN_STATS, DOMAIN_THETA, DOMAIN_TOPOLOGY, domain_rng
from .sensing import generate_sparse_sensing, load_sensing, scalar_model
from .topology import Topology, generate_rgg, read_edge_list

DATA_DIR_ENV = "CREDO_DATA_DIR"


@dataclass
class Outcome:
    passed: bool
    lines: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)


def _check(lines: list, name: str, ok: bool, detail: str) -> bool:
    lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def resolve_schedule(cfg: Config, model, topology, **fixed) -> WeightSchedule:
    """Turn the ``[schedule]`` section into gains, deriving ``auto`` entries."""
    s = cfg.section("schedule")
    pick = {k: (None if s[k] == AUTO else s[k]) for k in ("a", "shift", "rho0", "benchmark_b")}
    eps, tau1 = s["eps"], s["tau1"]
    if s["rho_exponent"] is not None:
        eps = 2.0 * s["rho_exponent"]
        tau1 = eps + 2.0 * s["zeta_exponent"]
    params = dict(zeta0=s["zeta0"], eps=eps, tau1=tau1, benchmark_delta1=s["benchmark_delta1"])
    params.update(fixed)
    try:
        return hz.recommended_schedule(model, topology, a_factor=s["a_factor"], b_factor=s["b_factor"],
                                       **pick, **params)
    except ValueError as exc:
        raise ConfigError(f"[schedule]: {exc}") from exc


def schedule_dict(s: WeightSchedule) -> dict:
    return {k: getattr(s, k) for k in ("a", "shift", "rho0", "zeta0", "eps", "tau1",
                                       "benchmark_b", "benchmark_delta1")}


def synthetic_problem(cfg: Config, seed: int) -> hz.SyntheticInstance:
    """Network, sensing model and true parameter from ``[network]``/``[sensing]``.

    Files named by ``edge_list`` or ``file`` replace the random draws.
    """
    net, sen = cfg.section("network"), cfg.section("sensing")
    if net["edge_list"]:
        topology = read_edge_list(_existing(cfg, net["edge_list"]))
    else:
        topology = generate_rgg(net["nodes"], net["radius"], domain_rng(seed, DOMAIN_TOPOLOGY))
    if sen["file"]:
        model = load_sensing(_existing(cfg, sen["file"]))
    else:
        model = generate_sparse_sensing(topology.n_nodes, sen["param_dim"], sen["sparsity"], sen["noise_var"],
                                        domain_rng(seed, DOMAIN_SENSING), min_gamma_eig=sen["min_gamma_eig"])
    if sen["theta"] is not None:
        theta = np.asarray(sen["theta"], dtype=float)
    else:
        theta = sen["theta_scale"] * domain_rng(seed, DOMAIN_THETA).standard_normal(model.param_dim)
    if topology.n_nodes != model.n_nodes:
        raise ConfigError(f"edge list has {topology.n_nodes} nodes but the sensing model has {model.n_nodes}")
    if theta.shape != (model.param_dim,):
        raise ConfigError(f"[sensing] theta has {theta.size} entries, expected {model.param_dim}")
    return hz.SyntheticInstance(topology, model, theta)


def _existing(cfg: Config, value: str) -> Path:
    p = cfg.resolve_path(value)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return p


def estimator_specs(cfg: Config, schedule: WeightSchedule) -> tuple:
    e = cfg.section("experiment")
    specs = []
    for kind in e["estimators"]:
        if kind == "credo":
            specs += [hz.EstimatorSpec("credo", schedule.with_(tau1=t), f"credo_tau{t:g}") for t in e["credo_tau1"]]
        else:
            specs.append(hz.EstimatorSpec(kind, schedule))
    return tuple(specs)


def fit_window(cfg: Config, horizon: int) -> tuple:
    fw = cfg.section("experiment")["fit_window"]
    if fw is not None and fw[1] <= horizon:
        return tuple(fw)
    return (horizon / 10.0, float(horizon))


def _safe_fit(fn, *args):
    try:
        return fn(*args)
    except ValueError:
        return None


def _provenance(cfg: Config, seed: int, **extra) -> dict:
    d = cfg.as_dict()
    d.setdefault("experiment", {})["master_seed"] = seed
    d["resolved"] = extra
    return d


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------


def run_synth(cfg: Config, seed: int, out_dir: Path, runs: Optional[int] = None,
              horizon: Optional[int] = None, workers: int = 1, _keep: Optional[dict] = None) -> Outcome:
    """Monte Carlo ensembles of every configured estimator on a synthetic instance."""
    e = cfg.section("experiment")
    runs = runs or e["runs"]
    horizon = horizon or e["horizon"]
    inst = synthetic_problem(cfg, seed)
    schedule = resolve_schedule(cfg, inst.model, inst.topology)
    specs = estimator_specs(cfg, schedule)
    exp = hz.ExperimentConfig(inst.topology, inst.model, specs, horizon, runs, seed, theta=inst.theta,
                              probes=hz.make_probe_grid(horizon, e["probes_per_decade"]))
    ensembles = hz.monte_carlo(exp, workers)
    window = fit_window(cfg, horizon)
    prov = _provenance(cfg, seed, runs=runs, horizon=horizon, schedule=schedule_dict(schedule),
                       theta=inst.theta, n_edges=inst.topology.n_edges)
    summary = {"seed": seed, "config": prov, "fit_window": list(window), "estimators": {}}
    lines = []
    for label, ens in ensembles.items():
        t_fit = _safe_fit(hz.mse_rate, ens, window)
        c_fit = _safe_fit(hz.mse_vs_comm, ens, window)
        summary["estimators"][label] = {
            "kind": ens.spec.kind,
            "tau1": ens.spec.schedule.tau1,
            "mse_vs_t": None if t_fit is None else hz.rate_fit_dict(t_fit),
            "mse_vs_comm": None if c_fit is None else hz.rate_fit_dict(c_fit),
            "final_rel_mse": float(ens.mean_rel_mse[-1]),
            "final_comm_per_node": float(ens.mean_comm[-1]),
            "expected_comm_per_node": float(ens.expected_comm[-1]),
            "n_diverged": ens.n_diverged,
        }
        slope = "n/a" if t_fit is None else f"{t_fit.slope:.3f}"
        cslope = "n/a" if c_fit is None else f"{c_fit.slope:.3f} (theory {c_fit.target:.3f})"
        lines.append(f"{label}: final rel MSE {ens.mean_rel_mse[-1]:.4g}, comm/node "
                     f"{ens.mean_comm[-1]:.1f}, slope vs t {slope}, vs comm {cslope}, "
                     f"diverged {ens.n_diverged}/{runs}")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "results.csv", out_dir / "summary.json"
    tx_path = out_dir / "transmissions.csv"
    hz.write_results_csv(csv_path, ensembles, prov, seed)
    hz.write_transmissions_csv(tx_path, ensembles)
    hz.write_summary_json(json_path, summary)
    if _keep is not None:
        _keep.update(ensembles=ensembles, window=window, instance=inst, schedule=schedule)
    return Outcome(True, lines, summary, [csv_path, tx_path, json_path])


def run_rates(cfg: Config, seed: int, out_dir: Path, runs: Optional[int] = None,
              horizon: Optional[int] = None, workers: int = 1) -> Outcome:
    """Rate and coincidence checks on the synthetic ensembles.

    Uses the oracle, the benchmark and the first configured CREDO variant.
    """
    keep = {}
    out = run_synth(cfg, seed, out_dir, runs, horizon, workers, _keep=keep)
    r = cfg.section("rates")
    ens, window = keep["ensembles"], keep["window"]
    lines = list(out.lines)
    ok = True
    credo = next((k for k in ens if k.startswith("credo")), None)
    for label in [k for k in ("oracle", "benchmark") if k in ens] + ([credo] if credo else []):
        fit = _safe_fit(hz.mse_rate, ens[label], window)
        good = fit is not None and r["mse_slope_min"] <= fit.slope <= r["mse_slope_max"]
        ok &= _check(lines, f"MSE-vs-t slope {label}", good,
                     f"{'n/a' if fit is None else f'{fit.slope:.3f}'} in "
                     f"[{r['mse_slope_min']}, {r['mse_slope_max']}]")
    checks = {}
    if credo and "benchmark" in ens:
        c, b = ens[credo], ens["benchmark"]
        sel = c.probe_times >= r["coincidence_from"]
        ratio = c.mean_rel_mse[sel] / b.mean_rel_mse[sel] if sel.any() else np.array([np.nan])
        f = r["coincidence_factor"]
        good = bool(sel.any() and np.all(ratio <= f) and np.all(ratio >= 1 / f))
        ok &= _check(lines, "CREDO/benchmark MSE ratio", good,
                     f"range [{np.nanmin(ratio):.3f}, {np.nanmax(ratio):.3f}] within factor {f} "
                     f"for t >= {r['coincidence_from']:g}")
        cf = _safe_fit(hz.mse_vs_comm, c, window)
        bf = _safe_fit(hz.mse_vs_comm, b, window)
        lim = r["comm_slope_max"]
        good = cf is not None and bf is not None and cf.slope <= lim <= bf.slope and cf.slope < bf.slope
        cs = "n/a" if cf is None else f"{cf.slope:.3f} (theory {cf.target:.3f})"
        bs = "n/a" if bf is None else f"{bf.slope:.3f}"
        ok &= _check(lines, "MSE-vs-communication slopes", good,
                     f"CREDO {cs} <= {lim} <= benchmark {bs}")
        checks = {"ratio_min": float(np.nanmin(ratio)), "ratio_max": float(np.nanmax(ratio))}
    out.summary["rates"] = {"passed": bool(ok), **checks}
    hz.write_summary_json(out_dir / "summary.json", out.summary)
    return Outcome(bool(ok), lines, out.summary, out.artifacts)


def run_check_stats(cfg: Config, seed: int, out_dir: Path, workers: int = 1) -> Outcome:
    """Gated-Laplacian moment identities and the communication-cost law."""
    st = cfg.section("stats")
    inst = synthetic_problem(cfg, seed)
    schedule = resolve_schedule(cfg, inst.model, inst.topology)
    lines, ok = [], True
    checks = hz.check_laplacian_moments(schedule, inst.topology, st["times"], st["draws"],
                                        rng=domain_rng(seed, DOMAIN_STATS), z_tol=st["z_tol"],
                                        beta_exponent_error=st["beta_exponent_error"])
    for c in checks:
        lines.append(c.line())
        ok &= c.passed
    comm = hz.communication_experiment(schedule, inst.topology.n_nodes, st["comm_runs"],
                                       st["comm_horizon"], seed)
    dev = abs(comm.mean_realized[-1] - comm.expected[-1])
    ok &= _check(lines, "mean realized comm = sum zeta_s", dev <= comm.tolerance[-1],
                 f"{comm.mean_realized[-1]:.2f} vs {comm.expected[-1]:.2f} at t={comm.probe_times[-1]} "
                 f"(tolerance {comm.tolerance[-1]:.2f})")
    g = comm.growth
    ok &= _check(lines, "comm growth exponent", abs(g.slope - g.target) <= st["comm_slope_tol"],
                 f"{g.slope:.4f} vs {g.target:.4f} +- {st['comm_slope_tol']}")
    summary = {"seed": seed, "config": _provenance(cfg, seed, schedule=schedule_dict(schedule)),
               "passed": bool(ok), "lines": lines}
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "summary.json"
    hz.write_summary_json(path, summary)
    return Outcome(bool(ok), lines, summary, [path])


def _named_topology(kind: str, n: int) -> Topology:
    return Topology.complete(n) if kind == "complete" else Topology.path(n)


def run_covariance(cfg: Config, seed: int, out_dir: Path, runs: Optional[int] = None,
                   horizon: Optional[int] = None, workers: int = 1) -> Outcome:
    """Limit covariance of the scaled error on the scalar model."""
    c = cfg.section("covariance")
    e = cfg.section("experiment")
    runs = runs or e["runs"]
    horizon = horizon or e["horizon"]
    model = scalar_model(c["nodes"], c["h"], c["noise_var"])
    theta = np.array([c["theta"]])
    topo = _named_topology(c["topology"], c["nodes"])
    schedule = resolve_schedule(cfg, model, topo)
    try:
        theory = hz.theoretical_covariance(model, schedule.a)
    except hz.CovarianceError as exc:
        raise ConfigError(str(exc)) from exc
    names = [c["topology"]] + ([c["compare_topology"]] if c["compare_topology"] not in ("none", c["topology"]) else [])
    reports = {}
    for name in names:
        exp = hz.ExperimentConfig(_named_topology(name, c["nodes"]), model,
                                  (hz.EstimatorSpec("credo", schedule),), horizon, runs, seed,
                                  theta=theta, probes=hz.make_probe_grid(horizon), snapshot_times=(horizon,))
        ens = hz.run_ensemble(exp, exp.estimators[0], workers)
        reports[name] = hz.empirical_covariance(ens.records, theta, horizon, theory,
                                                min_runs=min(100, runs))
    lines, ok = [], True
    main = reports[names[0]]
    ok &= _check(lines, f"covariance vs theory ({names[0]})", main.relative_error <= c["rel_tol"],
                 f"empirical {np.array2string(main.empirical, precision=4)} vs theory "
                 f"{np.array2string(theory, precision=4)} (rel. error {main.relative_error:.3f} "
                 f"<= {c['rel_tol']}); pooled {np.array2string(main.pooled, precision=4)}")
    if len(names) > 1:
        other = reports[names[1]]
        ok &= _check(lines, f"network independence ({names[0]} vs {names[1]})",
                     hz.covariances_agree(main, other, c["z_tol"]),
                     f"{np.array2string(main.empirical, precision=4)} vs "
                     f"{np.array2string(other.empirical, precision=4)} "
                     f"(se {np.array2string(np.sqrt(main.standard_error**2 + other.standard_error**2), precision=4)},"
                     f" z {c['z_tol']})")
    summary = {
        "seed": seed,
        "config": _provenance(cfg, seed, runs=runs, horizon=horizon, schedule=schedule_dict(schedule)),
        "theoretical": theory, "oracle_theoretical": hz.oracle_covariance(model),
        "reports": {n: {"empirical": r.empirical, "pooled": r.pooled, "relative_error": r.relative_error,
                        "pooled_relative_error": r.pooled_relative_error,
                        "per_node": list(r.per_node), "standard_error": r.standard_error,
                        "n_runs": r.n_runs, "t": r.t} for n, r in reports.items()},
        "passed": bool(ok),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "summary.json"
    hz.write_summary_json(path, summary)
    return Outcome(bool(ok), lines, summary, [path])


def resolve_data_path(cfg: Config, override: Optional[str] = None) -> Path:
    """Dataset location: `override`, else ``[data] path`` resolved against
    ``$CREDO_DATA_DIR`` (if set) or the config file's directory."""
    raw = override or cfg.section("data")["path"]
    if not raw:
        raise ConfigError("[data] path is required for real-data runs")
    p = Path(raw).expanduser()
    if override or p.is_absolute():
        return p
    if os.environ.get(DATA_DIR_ENV):
        return Path(os.environ[DATA_DIR_ENV]) / p
    return cfg.resolve_path(raw)


def run_real(cfg: Config, seed: int, out_dir: Path, data: Optional[str] = None,
             runs: Optional[int] = None, horizon: Optional[int] = None, workers: int = 1) -> Outcome:
    """Benchmark and CREDO on a real dataset, one pass over the training rows."""
    d = cfg.section("data")
    e = cfg.section("experiment")
    path = resolve_data_path(cfg, data)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    ds = load_csv(path, d["target_column"], name=path.stem)
    preset = PARTITION_PRESETS.get(ds.name.lower(), (None, None, None))
    n_nodes = d["nodes"] or preset[0]
    per_node = d["per_node"] or preset[1]
    test = d["test"] if d["test"] is not None else preset[2]
    if None in (n_nodes, per_node, test):
        raise ConfigError("[data] nodes, per_node and test are required for datasets without a preset")
    if d["manifest"] and cfg.resolve_path(d["manifest"]).is_file():
        part = read_manifest(cfg.resolve_path(d["manifest"]))
    else:
        part = partition(ds, n_nodes, per_node, test, d["partition_seed"])
    problem = build_static_model(ds, part, None if d["noise_var"] == AUTO else d["noise_var"],
                                 d["noise_fraction"])
    topology = generate_rgg(part.n_nodes, cfg.section("network")["radius"], domain_rng(seed, DOMAIN_TOPOLOGY))
    schedule = resolve_schedule(cfg, problem.model, topology)
    horizon = horizon or problem.horizon
    if horizon > problem.horizon:
        raise ConfigError(f"horizon {horizon} exceeds one pass ({problem.horizon} rows per node)")
    runs = runs or e["runs"]
    specs = estimator_specs(cfg, schedule)
    exp = hz.ExperimentConfig(topology, problem.model, specs, horizon, runs, seed, source=problem.source,
                              probes=hz.make_probe_grid(horizon, e["probes_per_decade"]),
                              metrics={"test_error": test_error_metric(problem)})
    ensembles = hz.monte_carlo(exp, workers)
    for ens in ensembles.values():
        te = ens.mean_metrics["test_error"]
        ens.mean_metrics["rel_test_error"] = te / te[0]
    prov = _provenance(cfg, seed, runs=runs, horizon=horizon, data=str(path),
                       schedule=schedule_dict(schedule), noise_var=problem.noise_var,
                       n_edges=topology.n_edges, relative_degree=topology.n_edges * 2 /
                       (part.n_nodes * (part.n_nodes - 1)))
    summary = {"seed": seed, "config": prov, "dataset": ds.name, "rows": ds.n_rows,
               "features": ds.n_features, "dropped_rows": ds.n_dropped, "estimators": {}}
    lines = []
    for label, ens in ensembles.items():
        summary["estimators"][label] = {
            "final_comm_per_node": float(ens.mean_comm[-1]),
            "final_test_error": float(ens.mean_metrics["test_error"][-1]),
            "final_rel_test_error": float(ens.mean_metrics["rel_test_error"][-1]),
        }
        lines.append(f"{label}: comm/node {ens.mean_comm[-1]:.1f}, test error "
                     f"{ens.mean_metrics['test_error'][-1]:.4g} (relative "
                     f"{ens.mean_metrics['rel_test_error'][-1]:.4g})")
    credo = next((k for k in ensembles if k.startswith("credo")), None)
    if credo and "benchmark" in ensembles:
        c, b = summary["estimators"][credo], summary["estimators"]["benchmark"]
        ratio = c["final_comm_per_node"] / b["final_comm_per_node"]
        gap = c["final_rel_test_error"] / b["final_rel_test_error"] - 1.0
        summary["comm_ratio"] = ratio
        summary["rel_test_error_gap"] = gap
        _check(lines, "communication ratio", ratio <= d["comm_ratio_max"],
               f"CREDO/benchmark = {ratio:.3f} (<= {d['comm_ratio_max']})")
        _check(lines, "final relative test error", abs(gap) <= d["test_error_tol"],
               f"CREDO vs benchmark {100 * gap:+.1f}% (tolerance {100 * d['test_error_tol']:.0f}%)")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path, man = out_dir / "results.csv", out_dir / "summary.json", out_dir / "partition.json"
    tx_path = out_dir / "transmissions.csv"
    hz.write_results_csv(csv_path, ensembles, prov, seed, extra_columns=("test_error", "rel_test_error"))
    hz.write_transmissions_csv(tx_path, ensembles)
    hz.write_summary_json(json_path, summary)
    write_manifest(part, man)
    return Outcome(True, lines, summary, [csv_path, tx_path, json_path, man])
