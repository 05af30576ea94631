"""Monte Carlo ensembles, rate fits, covariance and moment checks, artifacts."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .estimators import DistributedState, EstimatorKind, RunRecord, as_kind, run_batch
from .schedules import WeightSchedule, expected_comm_curve, rho, zeta
from .seeding import DOMAIN_SENSING, DOMAIN_THETA, DOMAIN_TOPOLOGY, domain_rng, run_seed, run_streams
from .sensing import SensingModel, gamma_matrix, generate_sparse_sensing
from .topology import Topology, generate_rgg, spectral_summary

#: Probes per decade of the default geometric grid.
PROBES_PER_DECADE = 30

#: Fraction of divergent runs above which an ensemble is rejected.
MAX_DIVERGED_FRACTION = 0.5


class EnsembleError(RuntimeError):
    pass


class CovarianceError(ValueError):
    pass


# --------------------------------------------------------------------------
# metrics and grids
# --------------------------------------------------------------------------


def relative_mse(state, theta, x0) -> float:
    """``(1/N) sum_n ||x_n(t) - theta||^2 / ||x_n(0) - theta||^2``.

    `state` may be a :class:`DistributedState` or an ``N x M`` array.
    """
    x = np.asarray(state.estimates if isinstance(state, DistributedState) else state, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), x.shape)
    denom = np.sum((x0 - theta) ** 2, axis=1)
    if np.any(denom == 0):
        raise ValueError("relative MSE undefined: an initial estimate equals theta")
    return float(np.mean(np.sum((x - theta) ** 2, axis=1) / denom))


def make_probe_grid(horizon: int, per_decade: int = PROBES_PER_DECADE, include_zero: bool = True) -> np.ndarray:
    """Geometric integer grid on ``[1, horizon]`` (plus 0), horizon included."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    n = max(2, int(math.ceil(per_decade * math.log10(max(horizon, 10)))) + 1)
    grid = np.unique(np.round(np.logspace(0, math.log10(horizon), n)).astype(np.int64))
    grid = np.union1d(grid, [horizon])
    if include_zero:
        grid = np.concatenate([[0], grid])
    return grid


# --------------------------------------------------------------------------
# rate fits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through ``(log x, log value)``.

    ``target`` is the slope predicted by theory when one applies.
    """

    slope: float
    intercept: float
    window: tuple
    r_squared: float
    n_points: int
    target: Optional[float] = None


def fit_loglog(t, values, window=None, target: Optional[float] = None, x=None) -> RateFit:
    """Fit ``log value = slope log t + intercept`` on ``window[0] <= t <= window[1]``.

    Parameters
    ----------
    t, values : array_like
        Series to fit, ``t`` increasing.
    window : (float, float), optional
        Inclusive time window; defaults to everything after the first
        decade of ``t``.
    x : array_like, optional
        Abscissa to regress on instead of ``t`` (the window still applies
        to ``t``); used for MSE against communication count.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("t and values must have the same length")
    if window is None:
        pos = t[t > 0]
        window = (10.0 * pos.min(), pos.max())
    lo, hi = window
    if not lo < hi:
        raise ValueError(f"empty fit window {window}")
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 5:
        raise ValueError(f"need at least 5 points in window {window}, got {int(sel.sum())}")
    xs = t[sel] if x is None else np.asarray(x, dtype=float)[sel]
    vs = v[sel]
    if np.any(~np.isfinite(vs)) or np.any(vs <= 0) or np.any(xs <= 0):
        raise ValueError("log-log fit needs positive finite values inside the window")
    res = stats.linregress(np.log(xs), np.log(vs))
    r2 = float(res.rvalue ** 2) if np.isfinite(res.rvalue) else 1.0
    return RateFit(float(res.slope), float(res.intercept), (float(lo), float(hi)),
                   min(1.0, r2), int(sel.sum()), target)


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator to run: its kind, gains and a display label."""

    kind: str
    schedule: WeightSchedule
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", as_kind(self.kind).value)
        if not self.label:
            object.__setattr__(self, "label", self.kind)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a set of ensembles."""

    topology: Topology
    model: SensingModel
    estimators: tuple
    horizon: int
    n_runs: int
    master_seed: int
    theta: Optional[np.ndarray] = None
    probes: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    output: Optional[Path] = None
    source: object = None
    metrics: Optional[Mapping[str, Callable]] = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not self.estimators:
            raise ValueError("no estimators requested")
        probes = make_probe_grid(self.horizon) if self.probes is None else np.asarray(self.probes, dtype=np.int64)
        if np.any(np.diff(probes) <= 0) or probes[-1] > self.horizon or probes[0] < 0:
            raise ValueError("probe grid must be strictly increasing within [0, horizon]")
        object.__setattr__(self, "probes", probes)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate estimator labels {labels}")


@dataclass
class Ensemble:
    """Runs of one estimator and their mean curves (divergent runs excluded)."""

    spec: EstimatorSpec
    records: list
    probe_times: np.ndarray
    mean_rel_mse: Optional[np.ndarray]
    std_rel_mse: Optional[np.ndarray]
    mean_comm: np.ndarray
    expected_comm: np.ndarray
    mean_metrics: dict = field(default_factory=dict)

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.records)

    @property
    def ok_records(self) -> list:
        return [r for r in self.records if not r.diverged]


def expected_comm_for(spec: EstimatorSpec, times) -> np.ndarray:
    times = np.asarray(times)
    if spec.kind == EstimatorKind.CREDO.value:
        return expected_comm_curve(spec.schedule, times)
    return times.astype(float)


def _chunk_job(args):
    spec, cfg, seeds = args
    return run_batch(spec.kind, cfg.model, cfg.topology, spec.schedule, cfg.theta, cfg.horizon,
                     seeds, cfg.probes, x0=cfg.x0, source=cfg.source, metrics=cfg.metrics,
                     snapshot_times=cfg.snapshot_times)


def _chunks(seq, n):
    k = max(1, math.ceil(len(seq) / n))
    return [seq[i:i + k] for i in range(0, len(seq), k)]


def summarize(spec: EstimatorSpec, records: Sequence[RunRecord], probe_times) -> Ensemble:
    """Aggregate records in run-index order into an :class:`Ensemble`."""
    records = list(records)
    n_div = sum(r.diverged for r in records)
    if n_div > MAX_DIVERGED_FRACTION * len(records):
        raise EnsembleError(f"{spec.label}: {n_div} of {len(records)} runs diverged")
    ok = [r for r in records if not r.diverged]
    if not ok:
        raise EnsembleError(f"{spec.label}: every run diverged")
    mean_rel = std_rel = None
    if ok[0].rel_mse is not None:
        rel = np.stack([r.rel_mse for r in ok])
        mean_rel = rel.mean(axis=0)
        std_rel = rel.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros_like(mean_rel)
    comm = np.stack([r.comm_realized for r in ok]).mean(axis=0)
    mm = {k: np.stack([r.metrics[k] for r in ok]).mean(axis=0) for k in ok[0].metrics}
    return Ensemble(spec, records, np.asarray(probe_times), mean_rel, std_rel, comm,
                    expected_comm_for(spec, probe_times), mm)


def run_ensemble(cfg: ExperimentConfig, spec: EstimatorSpec, workers: int = 1) -> Ensemble:
    """All runs of one estimator; per-run seeds depend only on the run index."""
    seeds = [run_seed(cfg.master_seed, i) for i in range(cfg.n_runs)]
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    workers = min(workers, cfg.n_runs)
    if workers == 1:
        records = _chunk_job((spec, cfg, seeds))
    else:
        jobs = [(spec, cfg, chunk) for chunk in _chunks(seeds, workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for part in pool.map(_chunk_job, jobs) for r in part]
    return summarize(spec, records, cfg.probes)


def monte_carlo(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Run every requested estimator; returns ``{label: Ensemble}``.

    All estimators share the per-run seeds, hence the observation streams
    (common random numbers).
    """
    return {spec.label: run_ensemble(cfg, spec, workers) for spec in cfg.estimators}


def mse_vs_comm(ensemble: Ensemble, window=None) -> RateFit:
    """Fit mean relative MSE against mean realized communication count.

    The window is in iterations ``t``. The theory target is ``-1`` for
    always-on estimators and ``-2 / (eps - tau1 + 2)`` for CREDO.
    """
    if ensemble.mean_rel_mse is None:
        raise ValueError("ensemble has no relative MSE curve")
    if ensemble.spec.kind == EstimatorKind.CREDO.value:
        target = ensemble.spec.schedule.mse_comm_exponent
    else:
        target = -1.0
    return fit_loglog(ensemble.probe_times, ensemble.mean_rel_mse, window, target=target,
                      x=ensemble.mean_comm)


def mse_rate(ensemble: Ensemble, window=None) -> RateFit:
    if ensemble.mean_rel_mse is None:
        raise ValueError("ensemble has no relative MSE curve")
    return fit_loglog(ensemble.probe_times, ensemble.mean_rel_mse, window, target=-1.0)


# --------------------------------------------------------------------------
# gain selection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceScales:
    """Spectral quantities that set the scale of the gains."""

    gamma_min: float
    local_max: float
    laplacian_max: float


def instance_scales(model: SensingModel, topology: Topology) -> InstanceScales:
    """``lambda_min(Gamma)``, ``max_n lambda_max(H_n^T Sigma_n^-1 H_n)`` and ``lambda_max(L)``."""
    lam_min = float(np.linalg.eigvalsh(gamma_matrix(model))[0])
    local = max(float(np.linalg.eigvalsh(D)[-1]) for D in model.local_information())
    return InstanceScales(lam_min, local, spectral_summary(topology).largest_eigenvalue)


def recommended_schedule(model: SensingModel, topology: Topology, a_factor: float = 0.75,
                         b_factor: float = 1.5, a: Optional[float] = None, shift: Optional[int] = None,
                         rho0: Optional[float] = None, benchmark_b: Optional[float] = None,
                         **fixed) -> WeightSchedule:
    """Gains scaled to the problem instance.

    Each of `a`, `shift`, `rho0` and `benchmark_b` left as None is derived:

    * ``a = a_factor / lambda_min(Gamma)``, so ``a lambda_min(Gamma) > 1/2``
      for ``a_factor > 1/2`` (the condition for a ``1/t`` rate and a finite
      limit covariance).
    * ``shift = ceil(a max_n lambda_max(H_n^T Sigma_n^-1 H_n))``, so no
      local innovation step exceeds unit gain.
    * ``b = b_factor / lambda_max(L)`` and ``rho0 = sqrt(b)``; with
      ``zeta0 = 1`` CREDO's mean Laplacian ``beta0 L`` then equals the
      benchmark's consensus matrix at ``t = 0``.

    Remaining keyword arguments (``eps``, ``tau1``, ...) are passed through.
    """
    sc = instance_scales(model, topology)
    if a is None:
        if sc.gamma_min <= 0:
            raise ValueError("Gamma is singular; the model is not globally observable")
        a = a_factor / sc.gamma_min
    if shift is None:
        shift = int(math.ceil(a * sc.local_max))
    if benchmark_b is None:
        benchmark_b = b_factor / sc.laplacian_max if sc.laplacian_max > 0 else 0.1
    if rho0 is None:
        rho0 = math.sqrt(benchmark_b)
    return WeightSchedule(a=a, shift=shift, rho0=rho0, benchmark_b=benchmark_b, **fixed)


@dataclass(frozen=True)
class SyntheticInstance:
    topology: Topology
    model: SensingModel
    theta: np.ndarray


def synthetic_instance(master_seed: int, n_nodes: int = 20, param_dim: int = 10, sparsity: int = 2,
                       noise_var: float = 0.25, radius: float = 0.6, min_gamma_eig: float = 0.05,
                       theta_scale: float = 0.03) -> SyntheticInstance:
    """Random geometric network, sparse scalar sensing and a true parameter.

    Each piece is drawn from its own seed domain, so changing one setting
    (say the radius) leaves the others' draws unchanged.
    """
    topology = generate_rgg(n_nodes, radius, domain_rng(master_seed, DOMAIN_TOPOLOGY))
    model = generate_sparse_sensing(n_nodes, param_dim, sparsity, noise_var,
                                    domain_rng(master_seed, DOMAIN_SENSING),
                                    min_gamma_eig=min_gamma_eig)
    theta = theta_scale * domain_rng(master_seed, DOMAIN_THETA).standard_normal(param_dim)
    return SyntheticInstance(topology, model, theta)


# --------------------------------------------------------------------------
# covariance
# --------------------------------------------------------------------------


def theoretical_covariance(model: SensingModel, a: float) -> np.ndarray:
    """Limit covariance ``a I / 2N + (Gamma - I / 2a)^-1 / 4N`` of every node."""
    n, m = model.n_nodes, model.param_dim
    gamma = gamma_matrix(model)
    shifted = gamma - np.eye(m) / (2.0 * a)
    eig = np.linalg.eigvalsh(shifted)
    if eig[0] <= 1e-12 * max(1.0, abs(eig[-1])):
        raise CovarianceError(
            f"Gamma - I/(2a) is not positive definite (min eigenvalue {eig[0]:.3g}); "
            f"the gain condition M4 is violated for a={a:g}")
    cov = a * np.eye(m) / (2.0 * n) + np.linalg.inv(shifted) / (4.0 * n)
    return 0.5 * (cov + cov.T)


def oracle_covariance(model: SensingModel) -> np.ndarray:
    """Limit covariance ``(N Gamma)^-1`` of the centralized estimator."""
    cov = np.linalg.inv(model.n_nodes * gamma_matrix(model))
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class CovarianceReport:
    """Sample covariance of ``sqrt(t+1) (x_n(t) - theta)`` against theory.

    ``empirical`` is taken at a single node; ``pooled`` stacks the scaled
    errors of all nodes before estimating (its samples are correlated).
    """

    empirical: np.ndarray
    theoretical: np.ndarray
    relative_error: float
    pooled: np.ndarray
    pooled_relative_error: float
    per_node: tuple
    node: int
    t: int
    n_runs: int

    @property
    def standard_error(self) -> np.ndarray:
        """Gaussian-theory standard error of each entry of ``empirical``."""
        c = self.empirical
        d = np.diag(c)
        return np.sqrt((c ** 2 + np.outer(d, d)) / (self.n_runs - 1))


def _rel_frobenius(a, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def empirical_covariance(records: Sequence[RunRecord], theta, t_probe: int,
                         theoretical: np.ndarray, node: int = 0, min_runs: int = 100) -> CovarianceReport:
    """Compare the spread of scaled errors across runs with `theoretical`.

    Records must carry a snapshot of the estimates at `t_probe` (or have
    `t_probe` as their horizon).
    """
    ok = [r for r in records if not r.diverged]
    if len(ok) < min_runs:
        raise CovarianceError(f"need at least {min_runs} non-divergent runs, got {len(ok)}")
    theta = np.asarray(theta, dtype=float)
    snaps = []
    for r in ok:
        if t_probe in r.snapshots:
            snaps.append(r.snapshots[t_probe])
        elif t_probe == r.horizon:
            snaps.append(r.final_estimates)
        else:
            raise CovarianceError(f"no snapshot at t={t_probe}; pass snapshot_times to the runs")
    Z = math.sqrt(t_probe + 1.0) * (np.stack(snaps) - theta)   # (R, N, M)
    theoretical = 0.5 * (np.asarray(theoretical) + np.asarray(theoretical).T)
    per_node = tuple(np.atleast_2d(np.cov(Z[:, n, :], rowvar=False)) for n in range(Z.shape[1]))
    pooled = np.atleast_2d(np.cov(Z.reshape(-1, Z.shape[2]), rowvar=False))
    emp = per_node[node]
    return CovarianceReport(emp, theoretical, _rel_frobenius(emp, theoretical), pooled,
                            _rel_frobenius(pooled, theoretical), per_node, node, int(t_probe), len(ok))


def covariances_agree(first: CovarianceReport, second: CovarianceReport, z: float = 3.0) -> bool:
    """Entrywise ``|C1 - C2| <= z sqrt(se1^2 + se2^2)``.

    The bound treats the two ensembles as independent, which is
    conservative when they share random numbers.
    """
    tol = z * np.sqrt(first.standard_error ** 2 + second.standard_error ** 2)
    return bool(np.all(np.abs(first.empirical - second.empirical) <= tol))


# --------------------------------------------------------------------------
# moment checks and communication law
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentCheck:
    """Worst entry of one identity at one time: the largest ``|z|`` score."""

    identity: str
    t: int
    estimate: float
    expected: float
    standard_error: float
    z: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.identity} t={self.t}: estimate {self.estimate:.6g} "
                f"expected {self.expected:.6g} (se {self.standard_error:.3g}, |z|={self.z:.2f})")


def _worst(identity, t, est, expected, se, z_tol) -> MomentCheck:
    est, expected, se = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                              for v in (est, expected, se)))
    # Deterministic cases (zeta_t = 1, rho_t = 0) have zero spread; allow
    # the rounding error of the Monte Carlo sums.
    dev = np.abs(est - expected)
    dev = np.where(dev <= 1e-9 * np.abs(expected), 0.0, dev)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(se > 0, dev / se, np.where(dev == 0, 0.0, np.inf))
    k = int(np.argmax(zs))
    return MomentCheck(identity, int(t), float(est[k]), float(expected[k]), float(se[k]),
                       float(zs[k]), bool(zs[k] <= z_tol))


def check_laplacian_moments(schedule: WeightSchedule, topology: Topology, times=(0, 10, 100),
                            n_draws: int = 100_000, rng=None, z_tol: float = 4.0,
                            beta_exponent_error: float = 0.0, chunk: int = 20_000) -> list[MomentCheck]:
    """Monte Carlo check of the gated-Laplacian moment identities.

    For each edge ``{i, j}``: ``E[L_ij] = -beta_t`` and ``E[L_ij^2] =
    rho_t^4 zeta_t^2``; entrywise ``E[L(t)] = beta_t L``; and the gate
    activation frequency equals ``zeta_t``. Each check reports its worst
    entry; it passes when every entry lies within `z_tol` standard errors.

    `beta_exponent_error` perturbs the exponent used for the *expected*
    ``beta_t``; a nonzero value serves as a negative control.
    """
    rng = np.random.default_rng(rng)
    n = topology.n_nodes
    edges = np.array(sorted(topology.edges), dtype=np.int64).reshape(-1, 2)
    I, J = edges[:, 0], edges[:, 1]
    Lbar = topology.laplacian
    out = []
    for t in times:
        r, z = rho(schedule, t), zeta(schedule, t)
        beta_exp = schedule.beta0 * (t + 1.0) ** (-(schedule.tau1 + beta_exponent_error))
        s_off = np.zeros(len(I))
        s_off2 = np.zeros(len(I))
        s_diag = np.zeros(n)
        s_diag2 = np.zeros(n)
        s_act = np.zeros(n)
        done = 0
        while done < n_draws:
            k = min(chunk, n_draws - done)
            active = rng.random((k, n)) < z
            psi = np.where(active, r, 0.0)
            w = psi[:, I] * psi[:, J]
            diag = psi * (psi @ topology.adjacency)
            s_off += w.sum(0)
            s_off2 += (w ** 2).sum(0)
            s_diag += diag.sum(0)
            s_diag2 += (diag ** 2).sum(0)
            s_act += active.sum(0)
            done += k

        def mean_se(s1, s2):
            m = s1 / n_draws
            var = np.maximum(s2 / n_draws - m ** 2, 0.0) * n_draws / max(n_draws - 1, 1)
            return m, np.sqrt(var / n_draws)

        m_off, se_off = mean_se(-s_off, s_off2)            # L_ij = -psi_i psi_j
        m_sq = s_off2 / n_draws
        # Second moment of L_ij^2 needs E[L_ij^4] for its standard error;
        # L_ij^2 is rho^4 times a Bernoulli(zeta^2) variable.
        p2 = z ** 2
        se_sq = r ** 4 * math.sqrt(p2 * (1 - p2) / n_draws) * np.ones_like(m_sq)
        m_diag, se_diag = mean_se(s_diag, s_diag2)
        m_act = s_act / n_draws
        se_act = math.sqrt(z * (1 - z) / n_draws) * np.ones(n)

        if len(I):
            out.append(_worst("E[L_ij] = -beta_t", t, m_off, -beta_exp, se_off, z_tol))
            out.append(_worst("E[L_ij^2] = rho_t^4 zeta_t^2", t, m_sq, r ** 4 * z ** 2, se_sq, z_tol))
        mean_L_est = np.concatenate([m_diag, m_off, m_off])
        mean_L_exp = np.concatenate([beta_exp * np.diag(Lbar), beta_exp * Lbar[I, J], beta_exp * Lbar[J, I]])
        mean_L_se = np.concatenate([se_diag, se_off, se_off])
        out.append(_worst("E[L(t)] = beta_t L", t, mean_L_est, mean_L_exp, mean_L_se, z_tol))
        out.append(_worst("P(active) = zeta_t", t, m_act, z, se_act, z_tol))
    return out


@dataclass(frozen=True)
class CommReport:
    """Realized versus expected per-node transmission counts."""

    probe_times: np.ndarray
    mean_realized: np.ndarray
    expected: np.ndarray
    tolerance: np.ndarray
    growth: RateFit

    @property
    def within_tolerance(self) -> bool:
        return bool(np.all(np.abs(self.mean_realized - self.expected) <= self.tolerance))


def communication_experiment(schedule: WeightSchedule, n_nodes: int, n_runs: int, horizon: int,
                             master_seed: int, probes=None, window=None, z_tol: float = 4.0) -> CommReport:
    """Mean realized CREDO transmission counts from the runs' gate streams.

    Gate draws are taken from the same per-run streams as the estimator
    engine, so the counts equal those of full CREDO runs with these seeds.
    The tolerance at time ``t`` is ``z_tol sqrt(sum_{s<t} zeta_s (1 - zeta_s))``,
    the standard deviation of a single node's count.
    """
    grid = make_probe_grid(horizon) if probes is None else np.asarray(probes, dtype=np.int64)
    z = zeta(schedule, np.arange(horizon))
    totals = np.zeros(len(grid))
    from .estimators import BLOCK_STEPS
    for i in range(n_runs):
        _, g = run_streams(run_seed(master_seed, i))
        u = np.concatenate([g.random((min(BLOCK_STEPS, horizon - t0), n_nodes))
                            for t0 in range(0, horizon, BLOCK_STEPS)])
        cum = np.concatenate([[0.0], np.cumsum((u < z[:, None]).mean(axis=1))])
        totals += cum[grid]
    mean = totals / n_runs
    expected = expected_comm_curve(schedule, grid)
    var = np.concatenate([[0.0], np.cumsum(z * (1 - z))])[grid]
    if window is None:
        window = (horizon / 10.0, float(horizon))
    growth = fit_loglog(grid, mean, window, target=schedule.comm_exponent)
    return CommReport(grid, mean, expected, z_tol * np.sqrt(var), growth)


# --------------------------------------------------------------------------
# non-convergence diagnostic
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    threshold: float
    n_runs: int
    n_stalled: int
    n_diverged: int
    final_rel_mse: np.ndarray

    @property
    def stalled_fraction(self) -> float:
        return (self.n_stalled + self.n_diverged) / self.n_runs


def nonconvergence_diagnostic(records: Sequence[RunRecord], threshold: float = 0.5) -> ConvergenceDiagnostic:
    """Count runs whose final relative MSE is not below `threshold`.

    Relative MSE is normalized by the initial error, so this asks whether
    the error fell below ``threshold`` times its starting value by the
    horizon. Divergent runs count as not converged. A heuristic: a slow
    but convergent run can also be flagged.
    """
    finals = np.array([np.nan if r.diverged else r.rel_mse[-1] for r in records])
    stalled = int(np.sum(finals[np.isfinite(finals)] >= threshold))
    return ConvergenceDiagnostic(threshold, len(records), stalled,
                                 int(np.sum(~np.isfinite(finals))), finals)


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

CSV_COLUMNS = ("kind", "t", "C_t_expected", "C_t_realized_mean", "rel_mse_mean", "rel_mse_std")


def provenance_header(config: Mapping, seed: int) -> str:
    """Comment block carrying the resolved config and master seed."""
    lines = [f"# master_seed: {seed}"]
    lines += ["# config: " + ln for ln in json.dumps(config, indent=1, sort_keys=True, default=_json_default).splitlines()]
    return "\n".join(lines) + "\n"


def write_results_csv(path, ensembles: Mapping[str, Ensemble], config: Mapping, seed: int,
                      extra_columns: Sequence[str] = ()) -> None:
    """Long-format CSV, one row per (estimator, probe time)."""
    buf = io.StringIO()
    buf.write(provenance_header(config, seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_COLUMNS) + list(extra_columns))
    for label, ens in ensembles.items():
        for k, t in enumerate(ens.probe_times):
            row = [label, int(t), _fmt(ens.expected_comm[k]), _fmt(ens.mean_comm[k]),
                   _fmt(None if ens.mean_rel_mse is None else ens.mean_rel_mse[k]),
                   _fmt(None if ens.std_rel_mse is None else ens.std_rel_mse[k])]
            row += [_fmt(ens.mean_metrics[c][k]) if c in ens.mean_metrics else "" for c in extra_columns]
            w.writerow(row)
    Path(path).write_text(buf.getvalue())


def write_transmissions_csv(path, ensembles: Mapping[str, Ensemble]) -> None:
    """Run-mean total transmissions of every node, one row per estimator."""
    first = next(iter(ensembles.values()))
    n = len(first.records[0].per_node_transmissions)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind"] + [f"node_{k}" for k in range(n)] + ["total"])
    for label, ens in ensembles.items():
        per_node = np.mean([r.per_node_transmissions for r in ens.ok_records], axis=0)
        w.writerow([label] + [_fmt(v) for v in per_node] + [_fmt(per_node.sum())])
    Path(path).write_text(buf.getvalue())


def write_summary_json(path, summary: Mapping) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")


def rate_fit_dict(fit: RateFit) -> dict:
    return {"slope": fit.slope, "intercept": fit.intercept, "window": list(fit.window),
            "r_squared": fit.r_squared, "n_points": fit.n_points, "target": fit.target}


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
