"""Heterogeneous linear sensing model ``y_n = H_n theta + noise_n``."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .topology import Topology, laplacian_of

#: Relative eigenvalue threshold used for the global observability rank test.
RANK_RTOL = 1e-8


class ObservabilityError(RuntimeError):
    pass


def _gaussian(rng: np.random.Generator, size) -> np.ndarray:
    return rng.standard_normal(size)


@dataclass(frozen=True, eq=False)
class SensingModel:
    """Per-node sensing matrices and noise covariances.

    Parameters
    ----------
    sensing_matrices : sequence of (M_n, M) arrays
    noise_covs : sequence of (M_n, M_n) arrays
        Symmetric positive definite.
    noise_moment_eps : float, default inf
        Moment exponent slack of the noise law; metadata only.
    noise_sampler : callable, optional
        ``sampler(rng, size) -> array`` of zero-mean, unit-variance,
        independent entries. They are coloured with the Cholesky factor of
        each ``Sigma_n``. Defaults to standard Gaussian.
    """

    sensing_matrices: tuple
    noise_covs: tuple
    noise_moment_eps: float = math.inf
    noise_sampler: Callable = field(default=_gaussian, repr=False)

    def __post_init__(self):
        Hs = tuple(np.atleast_2d(np.asarray(H, dtype=float)) for H in self.sensing_matrices)
        Ss = tuple(np.atleast_2d(np.asarray(S, dtype=float)) for S in self.noise_covs)
        if not Hs:
            raise ValueError("at least one node is required")
        if len(Hs) != len(Ss):
            raise ValueError(f"{len(Hs)} sensing matrices but {len(Ss)} noise covariances")
        m = Hs[0].shape[1]
        chols = []
        for n, (H, S) in enumerate(zip(Hs, Ss)):
            if H.shape[1] != m:
                raise ValueError(f"node {n}: H has {H.shape[1]} columns, expected {m}")
            if S.shape != (H.shape[0], H.shape[0]):
                raise ValueError(f"node {n}: Sigma shape {S.shape} does not match H rows {H.shape[0]}")
            if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
                raise ValueError(f"node {n}: Sigma is not symmetric")
            try:
                chols.append(np.linalg.cholesky(S))
            except np.linalg.LinAlgError:
                raise ValueError(f"node {n}: Sigma is not positive definite") from None
            H.setflags(write=False)
            S.setflags(write=False)
        object.__setattr__(self, "sensing_matrices", Hs)
        object.__setattr__(self, "noise_covs", Ss)
        object.__setattr__(self, "_chol", tuple(chols))
        inv = []
        for C in chols:
            Ci = np.linalg.inv(C)
            inv.append(Ci.T @ Ci)
        object.__setattr__(self, "_sigma_inv", tuple(inv))

    @property
    def n_nodes(self) -> int:
        return len(self.sensing_matrices)

    @property
    def param_dim(self) -> int:
        return self.sensing_matrices[0].shape[1]

    @property
    def obs_dims(self) -> list[int]:
        return [H.shape[0] for H in self.sensing_matrices]

    @property
    def sigma_inv(self) -> tuple:
        return self._sigma_inv

    @property
    def chol(self) -> tuple:
        return self._chol

    def locally_unobservable(self) -> bool:
        """True when every node has fewer observations than parameters."""
        return all(md < self.param_dim for md in self.obs_dims)

    def local_information(self) -> list[np.ndarray]:
        """Per-node ``H_n^T Sigma_n^{-1} H_n``."""
        return [H.T @ Si @ H for H, Si in zip(self.sensing_matrices, self._sigma_inv)]

    # Stacked views used by the vectorised run engine.
    def stacked(self):
        """Return ``(H_rows, node_of_row, Sigma_inv_block, chol_block)``.

        ``H_rows`` stacks all sensing rows into a ``(P, M)`` array with
        ``P = sum(M_n)``; the two block-diagonal matrices are ``(P, P)``.
        """
        H = np.vstack(self.sensing_matrices)
        owner = np.concatenate([np.full(md, n) for n, md in enumerate(self.obs_dims)])
        P = H.shape[0]
        S_inv = np.zeros((P, P))
        C = np.zeros((P, P))
        k = 0
        for Si, Ci in zip(self._sigma_inv, self._chol):
            d = Si.shape[0]
            S_inv[k:k + d, k:k + d] = Si
            C[k:k + d, k:k + d] = Ci
            k += d
        return H, owner, S_inv, C


@dataclass(frozen=True)
class ObservationBatch:
    per_node: tuple
    time_index: int = 0

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.per_node)


def _as_theta(theta, model: SensingModel) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != (model.param_dim,):
        raise ValueError(f"theta has length {theta.size}, model expects {model.param_dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def observe(model: SensingModel, theta, rng: Optional[np.random.Generator] = None,
            time_index: int = 0, noiseless: bool = False) -> ObservationBatch:
    """Draw one observation per node: ``y_n = H_n theta + gamma_n``."""
    theta = _as_theta(theta, model)
    out = []
    for H, C in zip(model.sensing_matrices, model.chol):
        y = H @ theta
        if not noiseless:
            y = y + C @ model.noise_sampler(rng, H.shape[0])
        out.append(y)
    return ObservationBatch(tuple(out), time_index)


def observability_gram(model: SensingModel) -> tuple[np.ndarray, bool]:
    """``G = sum_n H_n^T Sigma_n^{-1} H_n`` and whether it is full rank.

    Full rank means the smallest eigenvalue exceeds ``RANK_RTOL`` times the
    largest.
    """
    G = sum(model.local_information())
    G = 0.5 * (G + G.T)
    eig = np.linalg.eigvalsh(G)
    full = bool(eig[-1] > 0 and eig[0] > RANK_RTOL * eig[-1])
    return G, full


def gamma_matrix(model: SensingModel) -> np.ndarray:
    G, _ = observability_gram(model)
    return G / model.n_nodes


def network_information_matrix(model: SensingModel, topology: Topology) -> np.ndarray:
    """``L kron I_M + blockdiag(H_n^T Sigma_n^{-1} H_n)``, an ``NM x NM`` matrix."""
    if topology.n_nodes != model.n_nodes:
        raise ValueError(f"topology has {topology.n_nodes} nodes, model has {model.n_nodes}")
    M = model.param_dim
    out = np.kron(laplacian_of(topology), np.eye(M))
    for n, D in enumerate(model.local_information()):
        out[n * M:(n + 1) * M, n * M:(n + 1) * M] += D
    return out


@dataclass(frozen=True)
class GainCondition:
    """Terms of the innovation gain condition ``a * min(...) >= 1``."""

    a: float
    gamma_min_eig: float
    network_min_eig: float
    inv_beta0: float

    @property
    def bound(self) -> float:
        return min(self.gamma_min_eig, self.network_min_eig, self.inv_beta0)

    @property
    def satisfied(self) -> bool:
        return self.a * self.bound >= 1.0

    def __bool__(self):
        return self.satisfied


def check_assumption_m4(a: float, model: SensingModel, topology: Topology,
                        beta0: float) -> GainCondition:
    """Evaluate the lower bound on the innovation gain ``a``.

    The condition is ``a * min(lambda_min(Gamma), lambda_min(L kron I +
    blockdiag(H^T Sigma^-1 H)), 1 / beta0) >= 1``. The returned object is
    truthy iff it holds and carries each term.
    """
    g = float(np.linalg.eigvalsh(gamma_matrix(model))[0])
    net = float(np.linalg.eigvalsh(network_information_matrix(model, topology))[0])
    return GainCondition(a=float(a), gamma_min_eig=g, network_min_eig=net, inv_beta0=1.0 / beta0)


def generate_sparse_sensing(n_nodes: int, param_dim: int, sparsity: int, noise_var: float,
                            rng: np.random.Generator, max_attempts: int = 1000,
                            min_gamma_eig: float = 0.0) -> SensingModel:
    """Scalar-observation model with `sparsity`-sparse Gaussian rows.

    Each node observes ``h_n^T theta + noise`` where ``h_n`` has `sparsity`
    nonzero standard normal entries at uniformly random positions and the
    noise variance is `noise_var`. Draws are rejected until the model is
    globally observable and, optionally, ``lambda_min(Gamma) >=
    min_gamma_eig``.
    """
    if not 1 <= sparsity <= param_dim:
        raise ValueError(f"sparsity must be in [1, {param_dim}], got {sparsity}")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    for _ in range(max_attempts):
        H = np.zeros((n_nodes, param_dim))
        for n in range(n_nodes):
            idx = rng.choice(param_dim, size=sparsity, replace=False)
            H[n, idx] = rng.standard_normal(sparsity)
        model = SensingModel(tuple(H[n:n + 1] for n in range(n_nodes)),
                             tuple(np.array([[noise_var]]) for _ in range(n_nodes)))
        G, full = observability_gram(model)
        if full and np.linalg.eigvalsh(G)[0] / n_nodes >= min_gamma_eig:
            return model
    raise ObservabilityError(
        f"could not satisfy global observability with N={n_nodes}, M={param_dim}, "
        f"sparsity={sparsity} after {max_attempts} attempts"
    )


def scalar_model(n_nodes: int, h: float = 1.0, noise_var: float = 1.0) -> SensingModel:
    """Every node observes the scalar parameter directly."""
    return SensingModel(tuple(np.array([[h]]) for _ in range(n_nodes)),
                        tuple(np.array([[noise_var]]) for _ in range(n_nodes)))


# -- text serialisation ------------------------------------------------------
#
# Grammar (one item per line, '#' starts a comment):
#
#     format = credo-sensing/1
#     n_nodes = <int>
#     param_dim = <int>
#     noise_moment_eps = <float | inf>
#     [node <n>]
#     H = [[...], ...]        # Python-style nested list literal, M_n x M
#     Sigma = [[...], ...]    # M_n x M_n
#
# Floats are written with repr() so a round trip is bit-exact.

def _matrix_literal(a: np.ndarray) -> str:
    return "[" + ", ".join("[" + ", ".join(repr(float(v)) for v in row) + "]" for row in a) + "]"


def dump_sensing(model: SensingModel, path) -> None:
    lines = ["format = credo-sensing/1",
             f"n_nodes = {model.n_nodes}",
             f"param_dim = {model.param_dim}",
             f"noise_moment_eps = {model.noise_moment_eps!r}"]
    for n, (H, S) in enumerate(zip(model.sensing_matrices, model.noise_covs)):
        lines += ["", f"[node {n}]", f"H = {_matrix_literal(H)}", f"Sigma = {_matrix_literal(S)}"]
    Path(path).write_text("\n".join(lines) + "\n")


def load_sensing(path) -> SensingModel:
    header: dict[str, str] = {}
    nodes: dict[int, dict[str, np.ndarray]] = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if line.startswith("["):
            parts = line.strip("[]").split()
            if len(parts) != 2 or parts[0] != "node":
                raise ValueError(f"{where}: expected '[node <n>]', got {line!r}")
            current = int(parts[1])
            nodes[current] = {}
            continue
        if "=" not in line:
            raise ValueError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if current is None:
            header[key] = value
        else:
            try:
                nodes[current][key] = np.array(ast.literal_eval(value), dtype=float)
            except (ValueError, SyntaxError) as exc:
                raise ValueError(f"{where}: bad matrix literal for {key}: {exc}") from None
    n = int(header.get("n_nodes", len(nodes)))
    if sorted(nodes) != list(range(n)):
        raise ValueError(f"{path}: expected node sections 0..{n - 1}, found {sorted(nodes)}")
    try:
        Hs = [nodes[i]["H"] for i in range(n)]
        Ss = [nodes[i]["Sigma"] for i in range(n)]
    except KeyError as exc:
        raise ValueError(f"{path}: node section missing {exc}") from None
    eps = float(header.get("noise_moment_eps", "inf"))
    model = SensingModel(tuple(Hs), tuple(Ss), noise_moment_eps=eps)
    if "param_dim" in header and int(header["param_dim"]) != model.param_dim:
        raise ValueError(f"{path}: param_dim {header['param_dim']} does not match H")
    return model

