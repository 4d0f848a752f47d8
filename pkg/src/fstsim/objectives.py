"""Differentiable training tasks, their data, and non-IID partitioning.

Three desk-scale objective families share one interface: a mean quadratic
bowl, multinomial logistic regression, and a one-hidden-layer tanh network.
All models are flat float64 parameter vectors; gradients are written by
hand and checked against finite differences in the test suite.

The global objective over a client population is the unweighted mean of
per-client local losses, each of which is the mean over that client's
samples.
"""

from __future__ import annotations

import abc
import csv
import enum
from dataclasses import dataclass, field

import numpy as np


class ObjectiveKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    TINY_MLP = "tiny_mlp"


@dataclass(eq=False)
class Dataset:
    """A bag of samples: feature rows plus optional integer labels."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array (n_samples, n_features)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels must be one integer per feature row")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(eq=False)
class ClientShard:
    """One client's local slice of a task's data."""

    client_id: int
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("shard features must be 2-D")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.features.shape[0]


class Objective(abc.ABC):
    """Mean loss, its gradient, and an accuracy measure over sample rows."""

    kind: ObjectiveKind
    dim: int
    l2: float
    #: True when `accuracy` is a monotone surrogate rather than argmax
    #: correctness; surfaced in run summaries.
    accuracy_is_surrogate: bool = False

    @abc.abstractmethod
    def loss(self, x: np.ndarray, features: np.ndarray, labels: np.ndarray | None) -> float:
        ...

    @abc.abstractmethod
    def grad(self, x: np.ndarray, features: np.ndarray, labels: np.ndarray | None) -> np.ndarray:
        ...

    @abc.abstractmethod
    def accuracy(self, x: np.ndarray, features: np.ndarray, labels: np.ndarray | None) -> float:
        ...

    def _l2_loss(self, x: np.ndarray) -> float:
        return 0.5 * self.l2 * float(x @ x) if self.l2 else 0.0

    def _l2_grad(self, x: np.ndarray) -> np.ndarray:
        return self.l2 * x if self.l2 else np.zeros_like(x)


@dataclass(frozen=True)
class QuadraticObjective(Objective):
    """f(x) = mean_j 0.5 * ||x - a_j||^2 over target points a_j.

    Accuracy is reported as the surrogate 1 / (1 + loss) so classification
    and quadratic tasks share a "higher is better" metric axis.
    """

    dim: int
    l2: float = 0.0
    kind: ObjectiveKind = field(default=ObjectiveKind.QUADRATIC, init=False)
    accuracy_is_surrogate: bool = field(default=True, init=False)

    def loss(self, x, features, labels=None):
        diffs = x[None, :] - features
        return float(0.5 * np.mean(np.sum(diffs * diffs, axis=1))) + self._l2_loss(x)

    def grad(self, x, features, labels=None):
        return (x - features.mean(axis=0)) + self._l2_grad(x)

    def accuracy(self, x, features, labels=None):
        return 1.0 / (1.0 + self.loss(x, features, labels))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


@dataclass(frozen=True)
class LogisticObjective(Objective):
    """Multinomial logistic regression, weights W in R^{classes x features}."""

    n_features: int
    n_classes: int = 2
    l2: float = 0.0
    kind: ObjectiveKind = field(default=ObjectiveKind.LOGISTIC, init=False)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.n_classes * self.n_features

    def _weights(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.n_classes, self.n_features)

    def loss(self, x, features, labels):
        probs = _softmax(features @ self._weights(x).T)
        return _cross_entropy(probs, labels) + self._l2_loss(x)

    def grad(self, x, features, labels):
        probs = _softmax(features @ self._weights(x).T)
        probs[np.arange(len(labels)), labels] -= 1.0
        g = probs.T @ features / len(labels)
        return g.reshape(-1) + self._l2_grad(x)

    def accuracy(self, x, features, labels):
        pred = np.argmax(features @ self._weights(x).T, axis=1)
        return float(np.mean(pred == labels))


@dataclass(frozen=True)
class TinyMlpObjective(Objective):
    """One tanh hidden layer followed by a softmax readout.

    Parameter layout (C-order flatten): W1 (hidden x features), b1 (hidden),
    W2 (classes x hidden), b2 (classes).
    """

    n_features: int
    hidden_units: int = 8
    n_classes: int = 2
    l2: float = 0.0
    kind: ObjectiveKind = field(default=ObjectiveKind.TINY_MLP, init=False)

    @property
    def dim(self) -> int:  # type: ignore[override]
        h, f, c = self.hidden_units, self.n_features, self.n_classes
        return h * f + h + c * h + c

    def _unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        h, f, c = self.hidden_units, self.n_features, self.n_classes
        i = 0
        w1 = x[i : i + h * f].reshape(h, f)
        i += h * f
        b1 = x[i : i + h]
        i += h
        w2 = x[i : i + c * h].reshape(c, h)
        i += c * h
        b2 = x[i : i + c]
        return w1, b1, w2, b2

    def _forward(self, x, features):
        w1, b1, w2, b2 = self._unpack(x)
        hidden = np.tanh(features @ w1.T + b1)
        logits = hidden @ w2.T + b2
        return hidden, logits

    def loss(self, x, features, labels):
        _, logits = self._forward(x, features)
        return _cross_entropy(_softmax(logits), labels) + self._l2_loss(x)

    def grad(self, x, features, labels):
        w1, b1, w2, b2 = self._unpack(x)
        n = len(labels)
        hidden = np.tanh(features @ w1.T + b1)
        probs = _softmax(hidden @ w2.T + b2)
        dlogits = probs
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dw2 = dlogits.T @ hidden
        db2 = dlogits.sum(axis=0)
        dhidden = dlogits @ w2
        dz1 = dhidden * (1.0 - hidden * hidden)
        dw1 = dz1.T @ features
        db1 = dz1.sum(axis=0)
        flat = np.concatenate([dw1.reshape(-1), db1, dw2.reshape(-1), db2])
        return flat + self._l2_grad(x)

    def accuracy(self, x, features, labels):
        _, logits = self._forward(x, features)
        return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one trainable task.

    ``eta_c`` is the client step size, ``eta_s`` the server step size and
    ``tau`` the number of local steps per request. ``target_metric`` is the
    stopping threshold, interpreted per ``target_kind`` ("accuracy": reach
    at least the value; "loss": reach at most the value).
    """

    task_id: int
    objective: Objective
    tau: int
    eta_c: float
    eta_s: float
    target_metric: float
    target_kind: str = "accuracy"
    batch_size: int = 1

    def __post_init__(self) -> None:
        if self.task_id < 0:
            raise ValueError("task_id must be nonnegative")
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.eta_c <= 0 or self.eta_s <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.target_kind not in ("accuracy", "loss"):
            raise ValueError("target_kind must be 'accuracy' or 'loss'")
        if self.objective.dim < 1:
            raise ValueError("objective dimension must be positive")

    @property
    def dim(self) -> int:
        return self.objective.dim

    def new_model(self) -> np.ndarray:
        return np.zeros(self.dim, dtype=np.float64)

    def target_reached(self, loss: float, accuracy: float) -> bool:
        if self.target_kind == "loss":
            return loss <= self.target_metric
        return accuracy >= self.target_metric


def _check_model(task: TaskSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (task.dim,):
        raise ValueError(f"model has shape {x.shape}, task {task.task_id} expects ({task.dim},)")
    return x


def global_loss(task: TaskSpec, shards: list[ClientShard], x: np.ndarray) -> float:
    """Exact arithmetic mean of per-client local losses."""
    x = _check_model(task, x)
    if not shards:
        raise ValueError("global loss over an empty client list is undefined")
    total = 0.0
    for shard in shards:
        if shard.size == 0:
            raise ValueError(f"client {shard.client_id} has an empty shard")
        total += task.objective.loss(x, shard.features, shard.labels)
    return total / len(shards)


def global_grad(task: TaskSpec, shards: list[ClientShard], x: np.ndarray) -> np.ndarray:
    """Gradient of `global_loss`: mean of per-client full-batch gradients."""
    x = _check_model(task, x)
    if not shards:
        raise ValueError("global gradient over an empty client list is undefined")
    acc = np.zeros(task.dim)
    for shard in shards:
        acc += task.objective.grad(x, shard.features, shard.labels)
    return acc / len(shards)


def local_stoch_grad(
    task: TaskSpec, shard: ClientShard, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Gradient of the client loss on a uniformly sampled minibatch.

    Sampling is without replacement within the batch. When ``batch_size``
    covers the whole shard the full shard is used and no randomness is
    consumed, so the result is deterministic.
    """
    x = _check_model(task, x)
    if shard.size == 0:
        raise ValueError(f"client {shard.client_id} has an empty shard")
    if task.batch_size >= shard.size:
        feats, labs = shard.features, shard.labels
    else:
        idx = rng.choice(shard.size, size=task.batch_size, replace=False)
        feats = shard.features[idx]
        labs = shard.labels[idx] if shard.labels is not None else None
    return task.objective.grad(x, feats, labs)


def evaluate(task: TaskSpec, x: np.ndarray, eval_set: Dataset) -> tuple[float, float]:
    """Loss and accuracy of a model on a held-out set.

    Classification accuracy is argmax correctness (ties resolve to the
    lowest class index); quadratic tasks report 1/(1+loss).
    """
    x = _check_model(task, x)
    if eval_set.size == 0:
        raise ValueError("evaluation set is empty")
    loss = task.objective.loss(x, eval_set.features, eval_set.labels)
    acc = task.objective.accuracy(x, eval_set.features, eval_set.labels)
    return loss, acc


def partition_dirichlet(
    dataset: Dataset,
    n_clients: int,
    alpha: float,
    rng: np.random.Generator,
    ensure_nonempty: bool = True,
) -> list[ClientShard]:
    """Split a labelled dataset across clients with Dirichlet(alpha) skew.

    For each class, client proportions are drawn from a symmetric
    Dirichlet(alpha) and converted to counts by largest remainder, then that
    class's (shuffled) samples are dealt out contiguously. Every sample
    lands in exactly one shard. Small alpha concentrates classes on few
    clients; large alpha approaches a uniform split.

    With ``ensure_nonempty`` (default) any client left with zero samples
    steals one from the currently largest shard, so every shard is
    trainable. Disable to get the raw Dirichlet split.
    """
    if n_clients < 1:
        raise ValueError("need at least one client")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if dataset.labels is None:
        raise ValueError("Dirichlet partitioning needs labelled data")
    if dataset.size < n_clients and ensure_nonempty:
        raise ValueError("fewer samples than clients; cannot make every shard nonempty")

    assigned: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in np.unique(dataset.labels):
        cls_idx = np.flatnonzero(dataset.labels == cls)
        rng.shuffle(cls_idx)
        props = rng.dirichlet(np.full(n_clients, alpha))
        counts = _proportional_counts(props, len(cls_idx))
        start = 0
        for client, cnt in enumerate(counts):
            assigned[client].extend(cls_idx[start : start + cnt])
            start += cnt

    if ensure_nonempty:
        for client in range(n_clients):
            if not assigned[client]:
                donor = max(range(n_clients), key=lambda c: len(assigned[c]))
                assigned[client].append(assigned[donor].pop())

    shards = []
    for client in range(n_clients):
        idx = np.sort(np.asarray(assigned[client], dtype=np.int64))
        shards.append(
            ClientShard(
                client_id=client,
                features=dataset.features[idx],
                labels=dataset.labels[idx],
            )
        )
    return shards


def _proportional_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`, closest to `proportions * total`."""
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # ties broken by lower index via stable argsort on negated remainders
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def generate_blobs(
    n_samples: int,
    n_features: int,
    n_classes: int,
    rng: np.random.Generator,
    center_scale: float = 3.0,
    cluster_std: float = 1.0,
) -> Dataset:
    """Isotropic Gaussian class blobs with centers drawn once per class."""
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    centers = rng.normal(scale=center_scale, size=(n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    features = centers[labels] + rng.normal(scale=cluster_std, size=(n_samples, n_features))
    return Dataset(features=features, labels=labels)


def generate_quadratic_shards(
    n_clients: int,
    dim: int,
    mu: float | np.ndarray,
    sigma_g: float,
    rng: np.random.Generator,
    points_per_client: int = 1,
    local_spread: float = 0.0,
) -> tuple[list[ClientShard], Dataset]:
    """Per-client quadratic targets a_i = mu + sigma_g * z_i, z_i standard normal.

    Heterogeneity enters through sigma_g directly, so no label partitioning
    is involved. Returns the shards and an evaluation set holding the pooled
    target points (its mean loss equals the population objective when every
    client holds the same number of points).
    """
    if n_clients < 1 or dim < 1 or points_per_client < 1:
        raise ValueError("n_clients, dim and points_per_client must be positive")
    if sigma_g < 0 or local_spread < 0:
        raise ValueError("spread parameters must be nonnegative")
    mu_vec = np.broadcast_to(np.asarray(mu, dtype=np.float64), (dim,))
    centers = mu_vec + sigma_g * rng.standard_normal((n_clients, dim))
    shards = []
    pool = []
    for client in range(n_clients):
        pts = np.repeat(centers[client][None, :], points_per_client, axis=0)
        if local_spread > 0:
            pts = pts + local_spread * rng.standard_normal(pts.shape)
        shards.append(ClientShard(client_id=client, features=pts))
        pool.append(pts)
    return shards, Dataset(features=np.concatenate(pool, axis=0))


def load_csv_dataset(path: str) -> Dataset:
    """Read a dataset from CSV: header row, numeric features, integer label last."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric cell ({exc})") from exc
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus a label column")
    labels = data[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: label column must hold integers")
    return Dataset(features=data[:, :-1], labels=labels.astype(np.int64))
