"""Oracle, benchmark and CREDO recursions.

The module has two layers. The single-step functions (:func:`oracle_step`,
:func:`benchmark_step`, :func:`credo_step`) follow the update formulas node
by node and are meant for inspection and cross-checking. :func:`run` and
:func:`run_batch` drive a vectorized engine that advances many independent
runs at once; each run consumes its own random streams in fixed-size
blocks, so its trajectory does not depend on which batch it is part of.

Both layers write the consensus term in edge-difference form,
``sum_l w_nl (x_n - x_l)``, which is exactly zero when all estimates agree.
Together with an innovation that vanishes exactly on noiseless data, this
makes ``x(0) = 1 (x) theta`` a bit-for-bit fixed point.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .schedules import GateVector, WeightSchedule, gated_laplacian
from .seeding import coerce_seed, run_streams
from .sensing import ObservationBatch, SensingModel, observability_gram
from .topology import Topology

#: Steps of noise and gate draws taken from a run's streams at once.
BLOCK_STEPS = 1024


class EstimatorKind(str, Enum):
    ORACLE = "oracle"
    BENCHMARK = "benchmark"
    CREDO = "credo"


def as_kind(kind) -> EstimatorKind:
    try:
        return EstimatorKind(kind)
    except ValueError:
        choices = ", ".join(k.value for k in EstimatorKind)
        raise ValueError(f"unknown estimator kind {kind!r} (choose from {choices})") from None


class StructuralError(ValueError):
    """Inconsistent dimensions or missing step inputs."""


class DivergenceError(RuntimeError):
    """A run produced a non-finite estimate."""

    def __init__(self, time_index: int, run_seed: Optional[int] = None):
        self.time_index = time_index
        self.run_seed = run_seed
        where = f" (run seed {run_seed})" if run_seed is not None else ""
        super().__init__(f"divergence: non-finite estimate at t={time_index}{where}")


# --------------------------------------------------------------------------
# states and single steps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributedState:
    """Estimates of all nodes, row ``n`` holding ``x_n(t)``."""

    estimates: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        x = np.array(self.estimates, dtype=float)
        if x.ndim != 2:
            raise StructuralError(f"estimates must be an N x M matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DivergenceError(self.time_index)
        if self.time_index < 0:
            raise ValueError("time_index must be nonnegative")
        x.setflags(write=False)
        object.__setattr__(self, "estimates", x)

    @classmethod
    def zeros(cls, n_nodes: int, param_dim: int) -> "DistributedState":
        return cls(np.zeros((n_nodes, param_dim)))

    @property
    def n_nodes(self) -> int:
        return self.estimates.shape[0]

    @property
    def param_dim(self) -> int:
        return self.estimates.shape[1]


@dataclass(frozen=True)
class OracleState:
    """Fusion-center estimate ``x_c(t)``."""

    estimate: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        x = np.array(self.estimate, dtype=float)
        if x.ndim != 1:
            raise StructuralError(f"oracle estimate must be a vector, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DivergenceError(self.time_index)
        x.setflags(write=False)
        object.__setattr__(self, "estimate", x)


@dataclass(frozen=True)
class StepContext:
    """Inputs of one update: this step's data, gates, and the static model."""

    observations: ObservationBatch
    model: SensingModel
    topology: Topology
    schedule: WeightSchedule
    gates: Optional[GateVector] = None

    def __post_init__(self):
        n = self.model.n_nodes
        if self.topology.n_nodes != n:
            raise StructuralError(f"topology has {self.topology.n_nodes} nodes, model has {n}")
        if len(self.observations.per_node) != n:
            raise StructuralError(f"expected {n} observations, got {len(self.observations.per_node)}")
        for k, (y, md) in enumerate(zip(self.observations.per_node, self.model.obs_dims)):
            if np.shape(y) != (md,):
                raise StructuralError(f"observation of node {k} has shape {np.shape(y)}, expected ({md},)")
        if self.gates is not None:
            if self.gates.time_index != self.observations.time_index:
                raise StructuralError(
                    f"gate time {self.gates.time_index} != observation time "
                    f"{self.observations.time_index}")
            if np.shape(self.gates.values) != (n,):
                raise StructuralError(f"expected {n} gate values, got {np.shape(self.gates.values)}")

    @property
    def time_index(self) -> int:
        return self.observations.time_index


def _check_time(state_time: int, ctx: StepContext) -> None:
    if state_time != ctx.time_index:
        raise StructuralError(f"state is at t={state_time} but context is for t={ctx.time_index}")


def _check_dims(x: np.ndarray, model: SensingModel) -> None:
    if x.shape[-1] != model.param_dim:
        raise StructuralError(f"estimate dimension {x.shape[-1]} != parameter dimension {model.param_dim}")


def local_innovations(model: SensingModel, obs: ObservationBatch, estimates: np.ndarray) -> np.ndarray:
    """Rows ``H_n^T Sigma_n^-1 (y_n - H_n x_n)`` for every node."""
    return np.stack([H.T @ (Si @ (y - H @ x)) for H, Si, y, x in
                     zip(model.sensing_matrices, model.sigma_inv, obs.per_node, estimates)])


def oracle_step(state: OracleState, ctx: StepContext) -> OracleState:
    """Centralized step ``x_c + alpha_t sum_n H_n^T Sigma_n^-1 (y_n - H_n x_c)``."""
    _check_time(state.time_index, ctx)
    _check_dims(state.estimate, ctx.model)
    x = state.estimate
    g = np.zeros_like(x)
    for H, Si, y in zip(ctx.model.sensing_matrices, ctx.model.sigma_inv, ctx.observations.per_node):
        g = g + H.T @ (Si @ (y - H @ x))
    return OracleState(x + ctx.schedule.alpha(ctx.time_index) * g, state.time_index + 1)


def _edge_consensus(estimates: np.ndarray, topology: Topology, weight) -> np.ndarray:
    """``sum_{l in N(n)} weight(n, l) (x_n - x_l)`` for each node ``n``."""
    out = np.zeros_like(estimates)
    for i, j in sorted(topology.edges):
        w = weight(i, j)
        if w:
            d = estimates[i] - estimates[j]
            out[i] = out[i] + w * d
            out[j] = out[j] - w * d
    return out


def benchmark_step(state: DistributedState, ctx: StepContext,
                   weight: Optional[float] = None) -> DistributedState:
    """Always-on consensus plus local innovation.

    `weight` overrides the consensus gain ``b (t+1)^(-delta1)``.
    """
    _check_time(state.time_index, ctx)
    _check_dims(state.estimates, ctx.model)
    t = ctx.time_index
    w = ctx.schedule.benchmark_weight(t) if weight is None else float(weight)
    x = state.estimates
    cons = _edge_consensus(x, ctx.topology, lambda i, j: w)
    innov = local_innovations(ctx.model, ctx.observations, x)
    return DistributedState(x - cons + ctx.schedule.alpha(t) * innov, state.time_index + 1)


def credo_step(state: DistributedState, ctx: StepContext, form: str = "nodewise") -> DistributedState:
    """Gated consensus plus local innovation.

    Parameters
    ----------
    form : {"nodewise", "stacked"}
        ``"nodewise"`` sums ``psi_n psi_l (x_n - x_l)`` over neighbors.
        ``"stacked"`` evaluates ``(I - L(t) (x) I_M) x + alpha_t G_H Sigma^-1
        (y - G_H^T x)`` with explicit block matrices.
    """
    if ctx.gates is None:
        raise StructuralError("credo_step needs the gate vector of this step")
    _check_time(state.time_index, ctx)
    _check_dims(state.estimates, ctx.model)
    if form == "stacked":
        return _credo_step_stacked(state, ctx)
    if form != "nodewise":
        raise ValueError(f"unknown form {form!r}")
    psi = np.asarray(ctx.gates.values, dtype=float)
    x = state.estimates
    cons = _edge_consensus(x, ctx.topology, lambda i, j: psi[i] * psi[j])
    innov = local_innovations(ctx.model, ctx.observations, x)
    return DistributedState(x - cons + ctx.schedule.alpha(ctx.time_index) * innov, state.time_index + 1)


def _credo_step_stacked(state: DistributedState, ctx: StepContext) -> DistributedState:
    model = ctx.model
    n, m = state.estimates.shape
    L = gated_laplacian(ctx.topology, ctx.gates)
    H_rows, owner, S_inv, _ = model.stacked()
    # G_H is block diagonal with blocks H_n^T, so G_H^T x stacks the H_n x_n.
    G_H = np.zeros((n * m, H_rows.shape[0]))
    for p, k in enumerate(owner):
        G_H[k * m:(k + 1) * m, p] = H_rows[p]
    xv = state.estimates.reshape(-1)
    y = ctx.observations.stacked()
    nxt = (np.eye(n * m) - np.kron(L, np.eye(m))) @ xv
    nxt = nxt + ctx.schedule.alpha(ctx.time_index) * (G_H @ (S_inv @ (y - G_H.T @ xv)))
    return DistributedState(nxt.reshape(n, m), state.time_index + 1)


def averaged_estimate(state: DistributedState) -> np.ndarray:
    """Network average ``(1/N) sum_n x_n(t)``."""
    return state.estimates.mean(axis=0)


def averaged_recursion(x_avg: np.ndarray, state: DistributedState, ctx: StepContext) -> np.ndarray:
    """Advance the network average by one step without the consensus term.

    Because ``1^T L(t) = 0`` the gated consensus leaves the average
    unchanged, and::

        x_avg(t+1) = (I - alpha_t Gamma) x_avg(t)
                     - (alpha_t / N) sum_n D_n (x_n(t) - x_avg(t))
                     + (alpha_t / N) sum_n H_n^T Sigma_n^-1 y_n(t)

    with ``D_n = H_n^T Sigma_n^-1 H_n`` and ``Gamma = (1/N) sum_n D_n``.
    """
    _check_time(state.time_index, ctx)
    model = ctx.model
    n = model.n_nodes
    a = ctx.schedule.alpha(ctx.time_index)
    D = model.local_information()
    gamma = sum(D) / n
    spread = sum(Dn @ (xn - x_avg) for Dn, xn in zip(D, state.estimates))
    data = sum(H.T @ (Si @ y) for H, Si, y in
               zip(model.sensing_matrices, model.sigma_inv, ctx.observations.per_node))
    return x_avg - a * (gamma @ x_avg) - (a / n) * spread + (a / n) * data


# --------------------------------------------------------------------------
# observation sources
# --------------------------------------------------------------------------


class GaussianSource:
    """Fresh observations ``y_n(t) = H_n theta + gamma_n(t)`` in stacked form.

    Noise is ``C z`` with ``C`` the block Cholesky factor and ``z`` drawn
    from the model's noise sampler.
    """

    def __init__(self, model: SensingModel, theta, noiseless: bool = False):
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        if self.theta.shape != (model.param_dim,):
            raise StructuralError(f"theta must have shape ({model.param_dim},), got {self.theta.shape}")
        self.noiseless = noiseless
        H, owner, _, C = model.stacked()
        self._chol_t = C.T
        self.n_rows = H.shape[0]
        # Same reduction as the engine's prediction, so noiseless residuals
        # at x = theta are exactly zero.
        self.clean = _predict(H, owner, np.tile(self.theta, (1, model.n_nodes, 1)))[0]

    def open(self, rng: np.random.Generator) -> Callable[[int, int], np.ndarray]:
        def draw(t0: int, n: int) -> np.ndarray:
            if self.noiseless:
                return np.tile(self.clean, (n, 1))
            z = self.model.noise_sampler(rng, (n, self.n_rows))
            return self.clean + z @ self._chol_t
        return draw


# --------------------------------------------------------------------------
# run engine
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Probe-time history of one run.

    Attributes
    ----------
    probe_times : ndarray of int
        Iteration counts ``t`` at which the state ``x(t)`` was recorded.
    rel_mse : ndarray or None
        Relative MSE averaged across nodes (None when no true parameter).
    comm_realized : ndarray
        Cumulative per-node transmissions averaged across nodes.
    metrics : dict
        Extra per-probe series, e.g. test error.
    final_estimates : ndarray
        ``N x M`` estimates at the horizon.
    per_node_transmissions : ndarray
        Total transmissions of each node over the run.
    diverged_at : int or None
        First ``t`` with a non-finite estimate.
    snapshots : dict
        ``{t: N x M estimates}`` for requested snapshot times.
    """

    kind: str
    probe_times: np.ndarray
    rel_mse: Optional[np.ndarray]
    comm_realized: np.ndarray
    final_estimates: np.ndarray
    per_node_transmissions: np.ndarray
    metrics: dict = field(default_factory=dict)
    diverged_at: Optional[int] = None
    seed: Optional[int] = None
    snapshots: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.probe_times[-1])

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def fingerprint(self) -> str:
        """SHA-256 over all numeric content, for determinism checks."""
        h = hashlib.sha256()
        h.update(f"{self.kind}|{self.diverged_at}|{self.seed}".encode())
        arrays = [self.probe_times, self.comm_realized, self.final_estimates, self.per_node_transmissions]
        if self.rel_mse is not None:
            arrays.append(self.rel_mse)
        arrays += [self.metrics[k] for k in sorted(self.metrics)]
        arrays += [self.snapshots[k] for k in sorted(self.snapshots)]
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _predict(H: np.ndarray, owner: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Stacked predictions ``h_p^T x_owner(p)`` for a batch ``X`` (R, N, M)."""
    return (X[:, owner, :] * H[None, :, :]).sum(axis=-1)


def _probe_grid(probes, horizon: int) -> np.ndarray:
    if probes is None:
        from .harness import make_probe_grid
        return make_probe_grid(horizon)
    p = np.asarray(probes, dtype=np.int64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probes must be a nonempty 1-D sequence")
    if np.any(np.diff(p) <= 0):
        raise ValueError("probe grid must be strictly increasing")
    if p[0] < 0 or p[-1] > horizon:
        raise ValueError(f"probe times must lie in [0, {horizon}]")
    return p


class _Engine:
    """Vectorized recursion over R independent runs."""

    def __init__(self, kind, model, topology, schedule, x0, force_gates, benchmark_weight):
        self.kind = kind
        self.model = model
        self.schedule = schedule
        self.force_gates = force_gates
        self.bw = schedule.benchmark_weight if benchmark_weight is None else benchmark_weight
        self.H, self.owner, S_inv, _ = model.stacked()
        self.N, self.M = model.n_nodes, model.param_dim
        P = self.H.shape[0]
        self.sinv_diag = np.diag(S_inv).copy() if all(d == 1 for d in model.obs_dims) else None
        self.S_inv = S_inv
        self.E = np.zeros((self.N, P))
        self.E[self.owner, np.arange(P)] = 1.0
        self.identity_owner = P == self.N and np.array_equal(self.owner, np.arange(self.N))
        edges = np.array(sorted(topology.edges), dtype=np.int64).reshape(-1, 2)
        self.I, self.J = edges[:, 0], edges[:, 1]
        self.B = np.zeros((self.N, len(edges)))
        self.B[self.I, np.arange(len(edges))] = 1.0
        self.B[self.J, np.arange(len(edges))] = -1.0
        self.x0 = x0

    def _weighted_residual(self, y, pred):
        r = y - pred
        if self.sinv_diag is not None:
            return r * self.sinv_diag
        return np.einsum("pq,rq->rp", self.S_inv, r)

    def _innovation(self, w):
        contrib = w[:, :, None] * self.H[None, :, :]
        if self.identity_owner:
            return contrib
        return self.E @ contrib

    def step(self, X, y, t, u):
        """One update of all runs; returns new X and per-node activity.

        Activity is None when every node transmits.
        """
        a = self.schedule.alpha(t)
        if self.kind is EstimatorKind.ORACLE:
            Xo = np.ascontiguousarray(np.broadcast_to(X[:, :1, :], X.shape))
            w = self._weighted_residual(y, _predict(self.H, self.owner, Xo))
            g = (w[:, :, None] * self.H[None, :, :]).sum(axis=1)
            xc = X[:, 0, :] + a * g
            return np.ascontiguousarray(np.broadcast_to(xc[:, None, :], X.shape)), None
        active = None
        if self.kind is EstimatorKind.CREDO and not self.force_gates:
            active = u < self.schedule.zeta(t)
        innov = self._innovation(self._weighted_residual(y, _predict(self.H, self.owner, X)))
        if len(self.I) == 0:
            return X + a * innov, active
        diff = X[:, self.I, :] - X[:, self.J, :]
        if self.kind is EstimatorKind.BENCHMARK:
            cons = self.B @ (self.bw(t) * diff)
        else:
            rho = self.schedule.rho(t)
            psi = np.full((X.shape[0], self.N), rho) if active is None else np.where(active, rho, 0.0)
            cons = self.B @ ((psi[:, self.I] * psi[:, self.J])[:, :, None] * diff)
        return X - cons + a * innov, active


def run_batch(kind, model: SensingModel, topology: Topology, schedule: WeightSchedule,
              theta, horizon: int, seeds: Sequence[int], probes=None, *,
              x0=None, source=None, metrics: Optional[Mapping[str, Callable]] = None,
              noiseless: bool = False, force_gates: bool = False,
              benchmark_weight: Optional[Callable[[int], float]] = None,
              snapshot_times: Sequence[int] = ()) -> list[RunRecord]:
    """Advance one independent run per seed and return their records.

    Divergent runs are flagged through ``RunRecord.diverged_at`` rather than
    raised; see :func:`run` for the single-run interface and the parameters.
    """
    kind = as_kind(kind)
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon}")
    horizon = int(horizon)
    if topology.n_nodes != model.n_nodes:
        raise StructuralError(f"topology has {topology.n_nodes} nodes, model has {model.n_nodes}")
    if not observability_gram(model)[1]:
        warnings.warn("sensing model is not globally observable", RuntimeWarning, stacklevel=2)
    seeds = [coerce_seed(s) for s in seeds]
    R, N, M = len(seeds), model.n_nodes, model.param_dim
    if R == 0:
        return []
    grid = _probe_grid(probes, horizon)
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (M,):
            raise StructuralError(f"theta must have shape ({M},), got {theta.shape}")
    if source is None:
        if theta is None:
            raise ValueError("either theta or an observation source is required")
        source = GaussianSource(model, theta, noiseless=noiseless)

    X0 = np.zeros((N, M)) if x0 is None else np.array(x0, dtype=float)
    if X0.shape == (M,):
        X0 = np.tile(X0, (N, 1))
    if X0.shape != (N, M):
        raise StructuralError(f"x0 must have shape ({N}, {M}) or ({M},), got {X0.shape}")
    if kind is EstimatorKind.ORACLE and not np.all(X0 == X0[0]):
        raise StructuralError("oracle initial estimate must be the same at every node")

    denom = None
    if theta is not None:
        denom = np.sum((X0 - theta) ** 2, axis=1)
        if np.any(denom == 0):
            warnings.warn("an initial estimate equals theta; relative MSE is not recorded",
                          RuntimeWarning, stacklevel=2)
            denom = None

    engine = _Engine(kind, model, topology, schedule, X0, force_gates, benchmark_weight)
    streams = [run_streams(s) for s in seeds]
    draws = [source.open(obs) for obs, _ in streams]
    X = np.tile(X0, (R, 1, 1))
    counts = np.zeros((R, N), dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    diverged_at = [None] * R
    metrics = dict(metrics or {})

    n_probes = len(grid)
    rel = np.full((R, n_probes), np.nan) if denom is not None else None
    comm = np.zeros((R, n_probes))
    extra = {k: np.full((R, n_probes), np.nan) for k in metrics}
    probe_pos = {int(t): k for k, t in enumerate(grid)}
    snap_times = sorted({int(t) for t in snapshot_times})
    if snap_times and (snap_times[0] < 0 or snap_times[-1] > horizon):
        raise ValueError(f"snapshot times must lie in [0, {horizon}]")
    snaps = {t: None for t in snap_times}

    def record(t):
        if t in snaps:
            snaps[t] = np.where(alive[:, None, None], X, np.nan)
        k = probe_pos.get(t)
        if k is None:
            return
        comm[:, k] = counts.mean(axis=1)
        if rel is not None:
            rel[:, k] = np.where(alive, np.mean(np.sum((X - theta) ** 2, axis=2) / denom, axis=1), np.nan)
        for name, fn in metrics.items():
            extra[name][:, k] = np.where(alive, fn(X), np.nan)

    record(0)
    gated = kind is EstimatorKind.CREDO and not force_gates
    with np.errstate(over="ignore", invalid="ignore"):
        for t0 in range(0, horizon, BLOCK_STEPS):
            n = min(BLOCK_STEPS, horizon - t0)
            Y = np.stack([d(t0, n) for d in draws], axis=1)
            U = np.stack([g.random((n, N)) for _, g in streams], axis=1) if gated else None
            for s in range(n):
                t = t0 + s
                X, active = engine.step(X, Y[s], t, None if U is None else U[s])
                if active is None:
                    counts += 1
                else:
                    counts += active
                bad = alive & ~np.isfinite(X).all(axis=(1, 2))
                if bad.any():
                    for r in np.flatnonzero(bad):
                        diverged_at[r] = t + 1
                    alive &= ~bad
                    X[bad] = 0.0
                record(t + 1)

    records = []
    for r in range(R):
        final = X[r].copy() if alive[r] else np.full((N, M), np.nan)
        records.append(RunRecord(
            kind=kind.value, probe_times=grid.copy(),
            rel_mse=None if rel is None else rel[r].copy(),
            comm_realized=comm[r].copy(), final_estimates=final,
            per_node_transmissions=counts[r].copy(),
            metrics={k: v[r].copy() for k, v in extra.items()},
            diverged_at=diverged_at[r], seed=seeds[r],
            snapshots={t: v[r].copy() for t, v in snaps.items()}))
    return records


def run(kind, model: SensingModel, topology: Topology, schedule: WeightSchedule,
        theta, horizon: int, rng, probes=None, **options) -> RunRecord:
    """Simulate one run of an estimator.

    Parameters
    ----------
    kind : {"oracle", "benchmark", "credo"}
    model, topology, schedule
        Static problem description.
    theta : array_like or None
        True parameter. May be None when `source` supplies the data, in
        which case relative MSE is not recorded.
    horizon : int
        Number of updates; the final state is ``x(horizon)``.
    rng : int, SeedSequence or Generator
        Seed of the run's observation and gate streams.
    probes : sequence of int, optional
        Times at which to record metrics (default: geometric grid).
    **options
        ``x0``, ``source``, ``metrics``, ``noiseless``, ``force_gates``,
        ``benchmark_weight``; see :func:`run_batch`.

    Raises
    ------
    DivergenceError
        If an estimate becomes non-finite.
    """
    rec = run_batch(kind, model, topology, schedule, theta, horizon, [coerce_seed(rng)], probes, **options)[0]
    if rec.diverged:
        raise DivergenceError(rec.diverged_at, rec.seed)
    return rec
