"""Communication graphs: random geometric generation, Laplacians, spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: Smallest second eigenvalue accepted as "connected".
CONNECTIVITY_TOL = 1e-9


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on ``n_nodes`` nodes.

    Parameters
    ----------
    n_nodes : int
        Number of nodes, labelled ``0 .. n_nodes - 1``.
    edges : iterable of pairs
        Unordered node pairs. Duplicates are merged; self-loops are rejected.
    """

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.n_nodes) < 1:
            raise ValueError(f"n_nodes must be positive, got {self.n_nodes}")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.n_nodes} nodes")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_adjacency(cls, adjacency) -> "Topology":
        adj = np.asarray(adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        i, j = np.nonzero(np.triu(adj, 1))
        return cls(adj.shape[0], frozenset(zip(i.tolist(), j.tolist())))

    @classmethod
    def complete(cls, n_nodes: int) -> "Topology":
        return cls(n_nodes, frozenset((i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)))

    @classmethod
    def path(cls, n_nodes: int) -> "Topology":
        return cls(n_nodes, frozenset((i, i + 1) for i in range(n_nodes - 1)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes))
        if self.edges:
            i, j = np.array(sorted(self.edges)).T
            adj[i, j] = 1.0
            adj[j, i] = 1.0
        return adj

    @property
    def laplacian(self) -> np.ndarray:
        return laplacian_of(self)

    def neighbors(self, node: int) -> list[int]:
        return [j if i == node else i for i, j in sorted(self.edges) if node in (i, j)]

    def is_connected(self) -> bool:
        return spectral_summary(self).algebraic_connectivity > CONNECTIVITY_TOL


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray
    algebraic_connectivity: float
    relative_degree: float

    @property
    def largest_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])


def laplacian_of(topology: Topology) -> np.ndarray:
    """Return the combinatorial Laplacian ``D - A`` of `topology`."""
    adj = topology.adjacency
    return np.diag(adj.sum(axis=1)) - adj


def spectral_summary(topology: Topology) -> SpectralSummary:
    """Laplacian eigenvalues, algebraic connectivity and relative degree.

    For a single node the algebraic connectivity is reported as 0.
    """
    try:
        eig = np.linalg.eigvalsh(laplacian_of(topology))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"Laplacian eigensolve failed for a {topology.n_nodes}-node graph: {exc}"
        ) from exc
    eig = np.sort(eig)
    n = topology.n_nodes
    lam2 = float(eig[1]) if n > 1 else 0.0
    possible = n * (n - 1) / 2
    rel = topology.n_edges / possible if possible else 0.0
    return SpectralSummary(eigenvalues=eig, algebraic_connectivity=lam2, relative_degree=rel)


def default_radius(n_nodes: int) -> float:
    """Connectivity-threshold radius ``sqrt(ln N / N)``."""
    return math.sqrt(math.log(n_nodes) / n_nodes)


def generate_rgg(n_nodes: int, radius: float, rng: np.random.Generator,
                 max_attempts: int = 1000) -> Topology:
    """Draw a connected random geometric graph in the unit square.

    Node positions are uniform in ``[0, 1]^2`` and two nodes are linked iff
    their Euclidean distance is at most `radius`. Disconnected draws are
    rejected and the positions redrawn, up to `max_attempts` times.

    Raises
    ------
    GraphGenerationError
        If no connected graph was produced within `max_attempts` draws.
    """
    if n_nodes < 2:
        raise ValueError(f"n_nodes must be >= 2, got {n_nodes}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if max_attempts < 1:
        raise ValueError("max_attempts must be positive")
    for _ in range(max_attempts):
        pos = rng.random((n_nodes, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        adj = (dist <= radius).astype(float)
        np.fill_diagonal(adj, 0.0)
        topo = Topology.from_adjacency(adj)
        if topo.is_connected():
            return topo
    raise GraphGenerationError(
        f"could not generate connected graph with n={n_nodes}, radius={radius:g} "
        f"after {max_attempts} attempts"
    )


def write_edge_list(topology: Topology, path) -> None:
    """Write ``N`` on the first line, then one ``i j`` pair per line (0-indexed)."""
    lines = [str(topology.n_nodes)] + [f"{i} {j}" for i, j in sorted(topology.edges)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Topology:
    """Parse the format of :func:`write_edge_list`; ``#`` starts a comment."""
    rows = [(k, ln.split("#", 1)[0].strip()) for k, ln in enumerate(Path(path).read_text().splitlines(), 1)]
    rows = [(k, r) for k, r in rows if r]
    if not rows:
        raise ValueError(f"{path}: empty edge list")
    lineno, first = rows[0]
    try:
        n = int(first)
    except ValueError:
        raise ValueError(f"{path}: line {lineno}: expected the node count, got {first!r}") from None
    edges = []
    for lineno, r in rows[1:]:
        parts = r.split()
        try:
            if len(parts) != 2:
                raise ValueError
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: expected 'i j', got {r!r}") from None
    try:
        return Topology(n, frozenset(edges))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
