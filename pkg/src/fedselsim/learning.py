"""Synthetic classification task: data, Dirichlet partitioning, local SGD, FedAvg."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

BYTES_PER_PARAM = 8


@dataclass
class Dataset:
    """Gaussian-blob classification data with a fixed train/test split."""

    features: np.ndarray   # (n, d) float64
    labels: np.ndarray     # (n,) int64 in [0, K)
    train_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


def num_params(classes_k: int, features_d: int) -> int:
    return classes_k * features_d + classes_k


def model_size_bytes(classes_k: int, features_d: int) -> int:
    return BYTES_PER_PARAM * num_params(classes_k, features_d)


def init_params(classes_k: int, features_d: int) -> np.ndarray:
    """Zero-initialized flat parameter vector (K x d weights then K biases)."""
    return np.zeros(num_params(classes_k, features_d))


def _unpack(params: np.ndarray, classes_k: int, features_d: int):
    w = params[: classes_k * features_d].reshape(classes_k, features_d)
    b = params[classes_k * features_d :]
    return w, b


def make_dataset(
    num_samples: int, features_d: int, classes_k: int, class_sep: float, seed
) -> Dataset:
    """Balanced Gaussian blobs with an ~80/20 stratified split.

    Every class lands in both splits; requires at least 5 samples per class.
    """
    if classes_k < 2 or features_d < 1:
        raise ValueError(f"need classes_k >= 2 and features_d >= 1, got {classes_k}, {features_d}")
    if num_samples < 5 * classes_k:
        raise ValueError(f"need at least {5 * classes_k} samples for {classes_k} classes")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(classes_k, features_d)) * class_sep

    base, rem = divmod(num_samples, classes_k)
    counts = [base + (1 if k < rem else 0) for k in range(classes_k)]
    labels = np.repeat(np.arange(classes_k, dtype=np.int64), counts)
    features = means[labels] + rng.normal(0.0, 1.0, size=(num_samples, features_d))

    train_parts, test_parts = [], []
    start = 0
    for count in counts:
        block = np.arange(start, start + count)
        n_test = max(1, round(0.2 * count))
        train_parts.append(block[: count - n_test])
        test_parts.append(block[count - n_test :])
        start += count
    return Dataset(
        features=features,
        labels=labels,
        train_idx=np.concatenate(train_parts),
        test_idx=np.concatenate(test_parts),
        num_classes=classes_k,
    )


def dirichlet_partition(dataset: Dataset, num_clients: int, alpha: float, seed) -> list[np.ndarray]:
    """Split the train set across clients with per-class Dirichlet proportions.

    For each class, proportions ~ Dirichlet(alpha, ..., alpha) over clients turn
    into integer counts by largest remainder, then contiguous slices of that
    class's samples. Shards are disjoint and cover the train split exactly.
    """
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if num_clients > len(dataset.train_idx):
        raise ValueError(
            f"cannot split {len(dataset.train_idx)} train samples across {num_clients} clients"
        )
    rng = np.random.default_rng(seed)
    shards: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    train_labels = dataset.labels[dataset.train_idx]
    for k in range(dataset.num_classes):
        idx_k = dataset.train_idx[train_labels == k]
        props = rng.dirichlet(np.full(num_clients, alpha))
        raw = props * len(idx_k)
        counts = np.floor(raw).astype(int)
        short = len(idx_k) - counts.sum()
        by_remainder = np.argsort(-(raw - counts), kind="stable")
        counts[by_remainder[:short]] += 1
        offsets = np.concatenate(([0], np.cumsum(counts)))
        for c in range(num_clients):
            shards[c].append(idx_k[offsets[c] : offsets[c + 1]])
    return [np.sort(np.concatenate(parts)) for parts in shards]


def _softmax_grad(w, b, features, labels, classes_k):
    logits = features @ w.T + b
    logits -= logits.max(axis=1, keepdims=True)   # numeric stability
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(labels)), labels] -= 1.0
    probs /= len(labels)
    return probs.T @ features, probs.sum(axis=0)


def local_train(
    global_params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    classes_k: int,
    epochs: int,
    batch_size: int,
    lr: float,
    seed,
) -> np.ndarray:
    """Mini-batch gradient descent on softmax cross-entropy; returns trained - global.

    An empty shard yields a zero delta (the client "trains" on nothing).
    """
    if epochs < 0 or batch_size < 1 or lr < 0:
        raise ValueError("need epochs >= 0, batch_size >= 1, lr >= 0")
    if len(labels) == 0:
        log.debug("local_train on an empty shard: zero delta")
        return np.zeros_like(global_params)
    features_d = features.shape[1]
    w, b = _unpack(global_params.copy(), classes_k, features_d)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(labels))
        for s in range(0, len(order), batch_size):
            batch = order[s : s + batch_size]
            grad_w, grad_b = _softmax_grad(w, b, features[batch], labels[batch], classes_k)
            w = w - lr * grad_w
            b = b - lr * grad_b
    return np.concatenate([w.ravel(), b]) - global_params


def fedavg(deltas: list[np.ndarray]) -> np.ndarray | None:
    """Unweighted element-wise mean of client deltas; None means no update."""
    if not deltas:
        return None
    length = len(deltas[0])
    if any(len(d) != length for d in deltas):
        raise ValueError("deltas must all have the same length")
    return np.mean(np.stack(deltas), axis=0)


def evaluate(params: np.ndarray, features: np.ndarray, labels: np.ndarray, classes_k: int) -> float:
    """Accuracy of argmax predictions; ties break to the lowest class index."""
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    w, b = _unpack(params, classes_k, features.shape[1])
    predicted = np.argmax(features @ w.T + b, axis=1)
    return float(np.mean(predicted == labels))
