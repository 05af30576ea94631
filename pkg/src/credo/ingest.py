"""Real regression data: loading, node partitioning and the static model.

Every node averages the regressors of its training rows into a single
sensing row ``H_n``; the observation stream of a node replays its training
targets once, in random order, with added Gaussian noise.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .sensing import ObservabilityError, SensingModel, observability_gram

log = logging.getLogger(__name__)

#: Node count, rows per node and test rows of the bundled real-data setups.
PARTITION_PRESETS = {
    "cadata": (20, 900, 2640),
    "abalone": (10, 360, 577),
    "bank": (20, 350, 1192),
}

_MISSING = {"", "na", "nan", "?", "null", "none"}


@dataclass(frozen=True)
class Dataset:
    """Numeric regression data ``targets ~ features``."""

    features: np.ndarray
    targets: np.ndarray
    name: str = ""
    feature_names: tuple = ()
    n_dropped: int = 0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"features {X.shape} and targets {y.shape} do not match")
        if X.shape[0] == 0:
            raise ValueError("dataset has no rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def load_csv(path, target_column: Union[str, int] = -1, name: Optional[str] = None) -> Dataset:
    """Read a numeric CSV with a header row.

    Parameters
    ----------
    target_column : str or int
        Header name or column index of the target (default: last column).

    Rows with a missing or non-numeric entry are dropped; the count is
    logged and stored in ``Dataset.n_dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if target_column not in header:
            raise ValueError(f"{path}: no column named {target_column!r} (have {header})")
        tcol = header.index(target_column)
    else:
        tcol = int(target_column)
        if not -len(header) <= tcol < len(header):
            raise ValueError(f"{path}: target column {tcol} out of range for {len(header)} columns")
        tcol %= len(header)
    values, dropped = [], 0
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(r)}")
        if any(c.strip().lower() in _MISSING for c in r):
            dropped += 1
            continue
        try:
            values.append([float(c) for c in r])
        except ValueError:
            dropped += 1
    if not values:
        raise ValueError(f"{path}: no complete numeric rows")
    if dropped:
        log.info("%s: dropped %d rows with missing or non-numeric values", path, dropped)
    A = np.array(values)
    keep = [k for k in range(len(header)) if k != tcol]
    return Dataset(A[:, keep], A[:, tcol], name or path.stem,
                   tuple(header[k] for k in keep), dropped)


@dataclass(frozen=True)
class NodePartition:
    """Held-out test rows and equal-size per-node training rows."""

    test_indices: np.ndarray
    train_indices: tuple
    seed: int

    def __post_init__(self):
        sizes = {len(ix) for ix in self.train_indices}
        if len(sizes) > 1:
            raise ValueError(f"per-node training sets differ in size: {sorted(sizes)}")
        everything = np.concatenate([self.test_indices, *self.train_indices])
        if len(np.unique(everything)) != len(everything):
            raise ValueError("partition blocks overlap")

    @property
    def n_nodes(self) -> int:
        return len(self.train_indices)

    @property
    def per_node(self) -> int:
        return len(self.train_indices[0])

    @property
    def all_train(self) -> np.ndarray:
        return np.concatenate(self.train_indices)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "test": self.test_indices.tolist(),
                           "train": [ix.tolist() for ix in self.train_indices]})

    @classmethod
    def from_json(cls, text: str) -> "NodePartition":
        d = json.loads(text)
        return cls(np.asarray(d["test"], dtype=np.int64),
                   tuple(np.asarray(ix, dtype=np.int64) for ix in d["train"]), int(d["seed"]))


def write_manifest(partition: NodePartition, path) -> None:
    Path(path).write_text(partition.to_json() + "\n")


def read_manifest(path) -> NodePartition:
    return NodePartition.from_json(Path(path).read_text())


def partition(dataset: Dataset, n_nodes: int, per_node: int, test_count: int, seed: int) -> NodePartition:
    """Uniformly random split into a test set and `n_nodes` training blocks."""
    need = n_nodes * per_node + test_count
    if n_nodes < 1 or per_node < 1 or test_count < 0:
        raise ValueError("n_nodes and per_node must be positive, test_count nonnegative")
    if need > dataset.n_rows:
        raise ValueError(f"partition needs {need} rows but {dataset.name or 'dataset'} has {dataset.n_rows}")
    perm = np.random.default_rng(seed).permutation(dataset.n_rows)
    test = np.sort(perm[:test_count])
    train = tuple(np.sort(perm[test_count + k * per_node: test_count + (k + 1) * per_node])
                  for k in range(n_nodes))
    return NodePartition(test, train, int(seed))


@dataclass(frozen=True)
class Standardizer:
    """Affine maps to zero mean, unit variance, fitted on training rows."""

    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: float
    target_scale: float

    @classmethod
    def fit(cls, dataset: Dataset, part: NodePartition) -> "Standardizer":
        X = dataset.features[part.all_train]
        y = dataset.targets[part.all_train]
        sx = X.std(axis=0)
        sy = float(y.std())
        return cls(X.mean(axis=0), np.where(sx > 0, sx, 1.0), float(y.mean()), sy if sy > 0 else 1.0)

    def features(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.feature_mean) / self.feature_scale

    def targets(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_scale


class ReplaySource:
    """Observation source replaying each node's targets without replacement.

    Each run draws its own visiting order per node and its own noise.
    """

    def __init__(self, node_targets: np.ndarray, noise_var: float):
        self.node_targets = np.asarray(node_targets, dtype=float)   # (N, per_node)
        if self.node_targets.ndim != 2:
            raise ValueError("node_targets must be N x per_node")
        self.noise_std = math.sqrt(noise_var)
        self.n_rows = self.node_targets.shape[0]

    @property
    def length(self) -> int:
        return self.node_targets.shape[1]

    def open(self, rng: np.random.Generator):
        order = np.stack([rng.permutation(self.length) for _ in range(self.n_rows)])
        rows = np.arange(self.n_rows)

        def draw(t0: int, n: int) -> np.ndarray:
            if t0 + n > self.length:
                raise ValueError(f"horizon exceeds the {self.length} training rows per node")
            idx = order[:, t0:t0 + n].T                      # (n, N)
            noise = self.noise_std * rng.standard_normal((n, self.n_rows))
            return self.node_targets[rows[None, :], idx] + noise
        return draw


@dataclass(frozen=True)
class StaticProblem:
    """Everything the estimators need for one real-data partition."""

    model: SensingModel
    source: ReplaySource
    standardizer: Standardizer
    test_features: np.ndarray
    test_targets: np.ndarray
    noise_var: float

    @property
    def horizon(self) -> int:
        """Iterations in one pass over the training data."""
        return self.source.length


def build_static_model(dataset: Dataset, part: NodePartition, noise_var: Optional[float] = None,
                       noise_fraction: float = 0.25) -> StaticProblem:
    """Averaged-regressor sensing model plus replay streams.

    Features and targets are standardized on the training rows. Node ``n``
    gets ``H_n`` equal to the mean standardized feature row of its training
    set and noise variance `noise_var`, by default ``noise_fraction`` times
    the variance of the standardized training targets.

    Raises
    ------
    ObservabilityError
        If the averaged regressors do not span the feature space.
    """
    std = Standardizer.fit(dataset, part)
    X = std.features(dataset.features)
    y = std.targets(dataset.targets)
    if noise_var is None:
        noise_var = noise_fraction * float(np.var(y[part.all_train]))
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    H = tuple(X[ix].mean(axis=0)[None, :] for ix in part.train_indices)
    model = SensingModel(H, tuple(np.array([[noise_var]]) for _ in H))
    if not observability_gram(model)[1]:
        raise ObservabilityError("global observability violated for this partition; reseed")
    targets = np.stack([y[ix] for ix in part.train_indices])
    return StaticProblem(model, ReplaySource(targets, noise_var), std,
                         X[part.test_indices], y[part.test_indices], float(noise_var))


@dataclass(frozen=True)
class TestError:
    per_node: np.ndarray
    mean: float


def test_error(estimate, dataset: Dataset, part: NodePartition,
               standardizer: Optional[Standardizer] = None) -> TestError:
    """Mean squared prediction error on the held-out rows.

    `estimate` is an ``M``-vector or an ``N x M`` matrix of node estimates
    in standardized coordinates. Errors are computed on standardized test
    rows (the standardizer is refitted on the partition if not given).
    """
    std = standardizer or Standardizer.fit(dataset, part)
    X = std.features(dataset.features[part.test_indices])
    y = std.targets(dataset.targets[part.test_indices])
    est = np.atleast_2d(np.asarray(estimate, dtype=float))
    if est.shape[1] != X.shape[1]:
        raise ValueError(f"estimate has dimension {est.shape[1]}, data has {X.shape[1]} features")
    err = np.mean((y[None, :] - est @ X.T) ** 2, axis=1)
    return TestError(err, float(err.mean()))


test_error.__test__ = False  # not a pytest test despite the name


def test_error_metric(problem: StaticProblem):
    """Engine metric: across-node mean test error for a batch ``(R, N, M)``."""
    Xt = problem.test_features
    yt = problem.test_targets

    def metric(X: np.ndarray) -> np.ndarray:
        pred = X @ Xt.T                                     # (R, N, T)
        return np.mean((yt - pred) ** 2, axis=(1, 2))
    return metric


test_error_metric.__test__ = False
