import numpy as np
import pytest

from credo.estimators import (DistributedState, DivergenceError, OracleState, StepContext, StructuralError,
                              averaged_estimate, averaged_recursion, benchmark_step, credo_step, oracle_step,
                              run, run_batch)
from credo.schedules import GateVector, WeightSchedule, draw_gates, gated_laplacian
from credo.seeding import run_streams
from credo.sensing import ObservationBatch, SensingModel, generate_sparse_sensing, observe, scalar_model
from credo.topology import Topology, generate_rgg

ONE = WeightSchedule(a=1.0, shift=0, rho0=1.0, zeta0=1.0, eps=0.02, tau1=0.49,
                     benchmark_b=1.0, benchmark_delta1=0.0)


def ctx_for(model, topo, schedule, theta, t=0, gates=None, rng=None):
    obs = observe(model, theta, rng, time_index=t, noiseless=rng is None)
    return StepContext(obs, model, topo, schedule, gates)


def test_oracle_examples():
    m1 = scalar_model(1)
    out = oracle_step(OracleState(np.zeros(1)), ctx_for(m1, Topology(1), ONE, [1.0]))
    assert out.estimate.tolist() == [1.0] and out.time_index == 1
    m2 = scalar_model(2)
    out = oracle_step(OracleState(np.zeros(1)), ctx_for(m2, Topology.complete(2), ONE, [1.0]))
    assert out.estimate.tolist() == [2.0]


def test_benchmark_example():
    st = DistributedState(np.array([[0.0], [1.0]]))
    out = benchmark_step(st, ctx_for(scalar_model(2), Topology.complete(2), ONE, [1.0]))
    assert out.estimates.ravel().tolist() == [2.0, 0.0]


def test_credo_examples():
    s = ONE.with_(a=0.5)
    gates = GateVector(np.array([1.0, 1.0]), 0)
    ctx = ctx_for(scalar_model(2), Topology.complete(2), s, [1.0], gates=gates)
    assert credo_step(DistributedState(np.zeros((2, 1))), ctx).estimates.ravel().tolist() == [0.5, 0.5]
    out = credo_step(DistributedState(np.array([[0.0], [1.0]])), ctx)
    assert out.estimates.ravel().tolist() == [1.5, 0.0]


def test_credo_all_gates_off_no_innovation(rng):
    model = generate_sparse_sensing(4, 3, 2, 0.25, rng)
    topo = generate_rgg(4, 0.9, rng)
    x = rng.standard_normal((4, 3))
    ctx = ctx_for(model, topo, ONE.with_(a=0.0), rng.standard_normal(3), gates=GateVector(np.zeros(4), 0))
    assert np.array_equal(credo_step(DistributedState(x), ctx).estimates, x)


def test_consensus_vanishes_on_equal_rows(rng):
    model = generate_sparse_sensing(5, 3, 2, 0.25, rng)
    topo = Topology.complete(5)
    theta = rng.standard_normal(3)
    x = np.tile(theta, (5, 1))
    ctx = ctx_for(model, topo, ONE.with_(benchmark_b=123.0), theta)
    assert np.array_equal(benchmark_step(DistributedState(x), ctx).estimates, x)


def test_missing_gates_is_structural(rng):
    ctx = ctx_for(scalar_model(2), Topology.complete(2), ONE, [1.0])
    with pytest.raises(StructuralError, match="gate"):
        credo_step(DistributedState(np.zeros((2, 1))), ctx)


def test_dimension_mismatch_is_structural():
    ctx = ctx_for(scalar_model(2), Topology.complete(2), ONE, [1.0])
    with pytest.raises(StructuralError):
        benchmark_step(DistributedState(np.zeros((2, 2))), ctx)
    with pytest.raises(StructuralError):
        StepContext(ObservationBatch((np.zeros(1),), 0), scalar_model(2), Topology.complete(2), ONE)
    with pytest.raises(StructuralError, match="t=3"):
        benchmark_step(DistributedState(np.zeros((2, 1)), time_index=3), ctx)


def test_states_reject_nonfinite():
    with pytest.raises(DivergenceError):
        DistributedState(np.array([[np.inf]]))
    with pytest.raises(StructuralError):
        DistributedState(np.zeros(3))


def test_averaged_estimate():
    assert averaged_estimate(DistributedState(np.tile([1.0, 2.0], (3, 1)))).tolist() == [1.0, 2.0]
    assert averaged_estimate(DistributedState(np.array([[0.0], [1.0]]))).tolist() == [0.5]


def small_instances(count, seed=0):
    r = np.random.default_rng(seed)
    for _ in range(count):
        n, m = int(r.integers(2, 6)), int(r.integers(1, 4))
        topo = generate_rgg(n, 0.9, r)
        rows = [r.standard_normal((int(r.integers(1, 3)), m)) for _ in range(n)]
        covs = []
        for H in rows:
            A = r.standard_normal((H.shape[0], H.shape[0]))
            covs.append(A @ A.T + 0.5 * np.eye(H.shape[0]))
        model = SensingModel(tuple(rows), tuple(covs))
        s = WeightSchedule(a=r.uniform(0.01, 1), rho0=r.uniform(0.1, 1), zeta0=r.uniform(0.2, 1))
        t = int(r.integers(0, 50))
        theta = r.standard_normal(m)
        x = r.standard_normal((n, m))
        gates = draw_gates(s, t, n, r)
        ctx = StepContext(observe(model, theta, r, time_index=t), model, topo, s, gates)
        yield DistributedState(x, t), ctx


def test_nodewise_matches_stacked():
    for state, ctx in small_instances(100):
        a = credo_step(state, ctx).estimates
        b = credo_step(state, ctx, form="stacked").estimates
        assert np.max(np.abs(a - b)) <= 1e-12


def test_averaged_recursion_identity():
    for state, ctx in small_instances(50, seed=1):
        nxt = credo_step(state, ctx, form="stacked")
        pred = averaged_recursion(averaged_estimate(state), state, ctx)
        assert np.allclose(averaged_estimate(nxt), pred, rtol=0, atol=1e-12)


def test_gate_symmetry():
    for state, ctx in small_instances(30, seed=2):
        L = gated_laplacian(ctx.topology, ctx.gates)
        assert np.array_equal(L != 0, (L != 0).T)


@pytest.fixture(scope="module")
def instance():
    r = np.random.default_rng(11)
    topo = generate_rgg(6, 0.7, r)
    model = generate_sparse_sensing(6, 3, 2, 0.25, r)
    theta = r.standard_normal(3)
    sched = WeightSchedule(a=0.5, shift=3, rho0=0.4, zeta0=0.9, eps=0.02, tau1=0.49,
                           benchmark_b=0.15, benchmark_delta1=0.3)
    return topo, model, theta, sched


@pytest.mark.parametrize("kind", ["oracle", "benchmark", "credo"])
def test_fixed_point_bit_exact(instance, kind):
    topo, model, theta, sched = instance
    with pytest.warns(RuntimeWarning, match="not recorded"):
        rec = run(kind, model, topo, sched, theta + 1.0, 300, 0, x0=theta + 1.0, noiseless=True)
    assert rec.rel_mse is None
    assert np.array_equal(rec.final_estimates, np.tile(theta + 1.0, (6, 1)))


def replay(kind, topo, model, theta, sched, horizon, seed, x0):
    """Reference loop over the single-step functions with the engine's draws."""
    obs_rng, gate_rng = run_streams(seed)
    H = np.vstack(model.sensing_matrices)
    from scipy.linalg import block_diag
    C = block_diag(*model.chol)
    Y = H @ theta + model.noise_sampler(obs_rng, (horizon, H.shape[0])) @ C.T
    U = gate_rng.random((horizon, model.n_nodes)) if kind == "credo" else None
    splits = np.cumsum(model.obs_dims)[:-1]
    xs = DistributedState(np.tile(x0, (model.n_nodes, 1)))
    xc = OracleState(np.asarray(x0, dtype=float))
    for t in range(horizon):
        obs = ObservationBatch(tuple(np.split(Y[t], splits)), t)
        if kind == "oracle":
            xc = oracle_step(xc, StepContext(obs, model, topo, sched))
        elif kind == "benchmark":
            xs = benchmark_step(xs, StepContext(obs, model, topo, sched))
        else:
            g = GateVector(np.where(U[t] < sched.zeta(t), sched.rho(t), 0.0), t)
            xs = credo_step(xs, StepContext(obs, model, topo, sched, g))
    return np.tile(xc.estimate, (model.n_nodes, 1)) if kind == "oracle" else xs.estimates


@pytest.mark.parametrize("kind", ["oracle", "benchmark", "credo"])
@pytest.mark.parametrize("horizon", [1, 40])
def test_engine_matches_single_steps(instance, kind, horizon):
    topo, model, theta, sched = instance
    x0 = np.full(3, 0.3)
    rec = run(kind, model, topo, sched, theta, horizon, 99, x0=x0)
    ref = replay(kind, topo, model, theta, sched, horizon, 99, x0)
    assert np.allclose(rec.final_estimates, ref, rtol=1e-12, atol=1e-13)


def test_forced_gates_equal_benchmark_with_rho_squared(instance):
    topo, model, theta, sched = instance
    a = run("credo", model, topo, sched, theta, 500, 5, force_gates=True)
    b = run("benchmark", model, topo, sched, theta, 500, 5, benchmark_weight=lambda t: sched.rho(t) ** 2)
    assert np.array_equal(a.final_estimates, b.final_estimates)
    assert np.array_equal(a.rel_mse, b.rel_mse)


def test_benchmark_comm_equals_horizon(instance):
    topo, model, theta, sched = instance
    rec = run("benchmark", model, topo, sched, theta, 250, 1)
    assert np.all(rec.per_node_transmissions == 250)
    assert rec.comm_realized[-1] == 250 and rec.horizon == 250


def test_credo_comm_counts_active_nodes(instance):
    topo, model, theta, sched = instance
    rec = run("credo", model, topo, sched, theta, 300, 2)
    _, gate_rng = run_streams(rec.seed)
    U = gate_rng.random((300, 6))
    active = U < sched.zeta(np.arange(300))[:, None]
    assert np.array_equal(rec.per_node_transmissions, active.sum(axis=0))


def test_determinism(instance):
    topo, model, theta, sched = instance
    a = run("credo", model, topo, sched, theta, 400, 17)
    b = run("credo", model, topo, sched, theta, 400, 17)
    c = run("credo", model, topo, sched, theta, 400, 18)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_batch_matches_single_runs(instance):
    topo, model, theta, sched = instance
    seeds = [3, 4, 5]
    batch = run_batch("credo", model, topo, sched, theta, 1500, seeds)
    for s, rec in zip(seeds, batch):
        assert rec.fingerprint() == run("credo", model, topo, sched, theta, 1500, s).fingerprint()


def test_common_random_numbers():
    # on one node all kinds reduce to the same recursion, so equal outputs
    # mean they consumed the same observation stream
    model, topo = scalar_model(1, h=1.5, noise_var=0.7), Topology(1)
    recs = [run(k, model, topo, ONE.with_(a=0.3), [2.0], 200, 8) for k in ("oracle", "benchmark", "credo")]
    assert all(np.array_equal(recs[0].final_estimates, r.final_estimates) for r in recs[1:])


def test_probes_and_relative_mse(instance):
    topo, model, theta, sched = instance
    rec = run("oracle", model, topo, sched, theta, 100, 0, probes=[0, 10, 100])
    assert rec.probe_times.tolist() == [0, 10, 100]
    assert rec.rel_mse[0] == 1.0
    with pytest.raises(ValueError, match="increasing"):
        run("oracle", model, topo, sched, theta, 100, 0, probes=[10, 5])


def test_divergence_reported():
    model, topo = scalar_model(3), Topology.complete(3)
    bad = WeightSchedule(a=1e4)
    with pytest.raises(DivergenceError, match=r"t=\d+"):
        run("benchmark", model, topo, bad, [1.0], 2000, 0)
    recs = run_batch("benchmark", model, topo, bad, [1.0], 2000, [0, 1])
    assert all(r.diverged and r.diverged_at > 0 for r in recs)


def test_unobservable_model_warns():
    model = SensingModel(tuple(np.array([[1.0, 0.0]]) for _ in range(3)), tuple(np.eye(1) for _ in range(3)))
    with pytest.warns(RuntimeWarning, match="observable"):
        run("oracle", model, Topology.complete(3), ONE.with_(a=0.1), [1.0, 1.0], 10, 0)
