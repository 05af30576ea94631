"""Decaying gains, stochastic link gating and communication accounting.

All gains are pure functions of the schedule parameters and the time index
``t`` (``t = 0, 1, ...``) and accept scalar or array ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .topology import Topology


@dataclass(frozen=True)
class WeightSchedule:
    """Gain sequences of the three estimators.

    Parameters
    ----------
    a : float
        Innovation gain numerator, ``alpha_t = a / (t + 1 + shift)``.
    shift : int
        Time shift of the innovation gain (0 gives the unshifted ``a/(t+1)``).
    rho0, zeta0 : float
        Link weight ``rho_t = rho0 (t+1)^(-eps/2)`` and activation probability
        ``zeta_t = zeta0 (t+1)^(-(tau1-eps)/2)``.
    eps, tau1 : float
        Exponents, ``0 < eps < tau1``. The mean consensus gain is
        ``beta_t = (rho_t zeta_t)^2 = beta0 (t+1)^(-tau1)``.
    benchmark_b, benchmark_delta1 : float
        Consensus weight ``b (t+1)^(-delta1)`` of the always-on benchmark.
    """

    a: float = 1.0
    shift: int = 0
    rho0: float = 0.1
    zeta0: float = 1.0
    eps: float = 0.02
    tau1: float = 0.49
    benchmark_b: float = 0.1
    benchmark_delta1: float = 0.49

    def __post_init__(self):
        if not self.a >= 0:
            raise ValueError(f"a must be nonnegative, got {self.a}")
        if int(self.shift) != self.shift or self.shift < 0:
            raise ValueError(f"shift must be a nonnegative integer, got {self.shift}")
        object.__setattr__(self, "shift", int(self.shift))
        if self.rho0 < 0:
            raise ValueError(f"rho0 must be nonnegative, got {self.rho0}")
        if not 0 < self.zeta0 <= 1:
            raise ValueError(f"zeta0 must lie in (0, 1], got {self.zeta0}")
        if not 0 < self.eps < self.tau1:
            raise ValueError(f"need 0 < eps < tau1, got eps={self.eps}, tau1={self.tau1}")
        if not self.benchmark_b > 0:
            raise ValueError("benchmark_b must be positive")
        if not 0 <= self.benchmark_delta1 < 1:
            raise ValueError(f"benchmark_delta1 must lie in [0, 1), got {self.benchmark_delta1}")

    @classmethod
    def from_exponents(cls, rho_exponent: float, zeta_exponent: float, **kwargs) -> "WeightSchedule":
        """Build from the decay exponents of ``rho_t`` and ``zeta_t`` directly.

        ``rho_t ~ (t+1)^(-rho_exponent)`` and ``zeta_t ~ (t+1)^(-zeta_exponent)``
        give ``eps = 2 rho_exponent`` and ``tau1 = eps + 2 zeta_exponent``.
        """
        eps = 2.0 * rho_exponent
        return cls(eps=eps, tau1=eps + 2.0 * zeta_exponent, **kwargs)

    def with_(self, **changes) -> "WeightSchedule":
        return replace(self, **changes)

    @property
    def beta0(self) -> float:
        return (self.rho0 * self.zeta0) ** 2

    @property
    def comm_exponent(self) -> float:
        """Growth exponent of the expected per-node communication count."""
        return 1.0 + (self.eps - self.tau1) / 2.0

    @property
    def mse_comm_exponent(self) -> float:
        """Predicted log-log slope of MSE against communication count."""
        return -2.0 / (self.eps - self.tau1 + 2.0)

    def alpha(self, t):
        return alpha(self, t)

    def rho(self, t):
        return rho(self, t)

    def zeta(self, t):
        return zeta(self, t)

    def beta(self, t):
        return beta(self, t)

    def benchmark_weight(self, t):
        return benchmark_weight(self, t)


def _t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time index must be nonnegative")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def alpha(schedule: WeightSchedule, t):
    return _out(schedule.a / (_t(t) + 1.0 + schedule.shift))


def rho(schedule: WeightSchedule, t):
    return _out(schedule.rho0 * (_t(t) + 1.0) ** (-schedule.eps / 2.0))


def zeta(schedule: WeightSchedule, t):
    return _out(schedule.zeta0 * (_t(t) + 1.0) ** (-(schedule.tau1 - schedule.eps) / 2.0))


def beta(schedule: WeightSchedule, t):
    return _out(schedule.beta0 * (_t(t) + 1.0) ** (-schedule.tau1))


def benchmark_weight(schedule: WeightSchedule, t):
    return _out(schedule.benchmark_b * (_t(t) + 1.0) ** (-schedule.benchmark_delta1))


@dataclass(frozen=True)
class GateVector:
    """Per-node gate values at one time step: ``rho_t`` if active, else 0."""

    values: np.ndarray
    time_index: int

    @property
    def active(self) -> np.ndarray:
        return self.values != 0


def draw_gates(schedule: WeightSchedule, t: int, n_nodes: int,
               rng: np.random.Generator) -> GateVector:
    """Independent Bernoulli(zeta_t) activations scaled by rho_t."""
    active = rng.random(n_nodes) < zeta(schedule, t)
    return GateVector(np.where(active, rho(schedule, t), 0.0), int(t))


def gated_laplacian(topology: Topology, gates) -> np.ndarray:
    """Random Laplacian with weight ``psi_i psi_j`` on each edge ``{i, j}``.

    A link carries weight only when both endpoints are active.
    """
    psi = np.asarray(getattr(gates, "values", gates), dtype=float)
    if psi.shape != (topology.n_nodes,):
        raise ValueError(f"expected {topology.n_nodes} gate values, got shape {psi.shape}")
    W = topology.adjacency * np.outer(psi, psi)
    return np.diag(W.sum(axis=1)) - W


def batched_gated_laplacian(adjacency: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Gated Laplacians for a batch of gate vectors ``psi`` of shape (R, N)."""
    W = adjacency[None, :, :] * psi[:, :, None] * psi[:, None, :]
    deg = W.sum(axis=2)
    L = -W
    idx = np.arange(adjacency.shape[0])
    L[:, idx, idx] = deg
    return L


def expected_comm_cost(schedule: WeightSchedule, t: int) -> float:
    """Exact expected per-node transmissions before time ``t``: ``sum_{s<t} zeta_s``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    return float(np.sum(zeta(schedule, np.arange(t))))


def expected_comm_curve(schedule: WeightSchedule, times) -> np.ndarray:
    """``expected_comm_cost`` evaluated at each entry of `times` (vectorised)."""
    times = np.asarray(times, dtype=int)
    if times.size == 0:
        return np.zeros(0)
    csum = np.concatenate([[0.0], np.cumsum(zeta(schedule, np.arange(times.max())))])
    return csum[times]


@dataclass
class CommLedger:
    """Running per-node transmission counts.

    A node is charged one transmission in every step where its gate is
    active (broadcast model).
    """

    n_nodes: int
    per_node_transmissions: np.ndarray = None
    steps: int = 0
    expected_cost_cache: float = 0.0

    def __post_init__(self):
        if self.per_node_transmissions is None:
            self.per_node_transmissions = np.zeros(self.n_nodes, dtype=np.int64)

    @property
    def mean_transmissions(self) -> float:
        return float(self.per_node_transmissions.mean())


def record_transmissions(ledger: CommLedger, gates, schedule: WeightSchedule = None) -> CommLedger:
    """Return a new ledger with one more step of `gates` charged.

    If `schedule` is given, the expected cost ``sum zeta_s`` is advanced too.
    """
    active = np.asarray(getattr(gates, "active", np.asarray(gates) != 0))
    if active.shape != (ledger.n_nodes,):
        raise ValueError(f"expected {ledger.n_nodes} gates, got {active.shape}")
    exp = ledger.expected_cost_cache
    if schedule is not None:
        exp += zeta(schedule, ledger.steps)
    return CommLedger(ledger.n_nodes, ledger.per_node_transmissions + active.astype(np.int64),
                      ledger.steps + 1, exp)
