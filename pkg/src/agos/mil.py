"""Classic MIL labels, score-level fusion alternatives and covariance diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STRATEGIES = ("mean", "max", "majority-vote", "least-squares")


@dataclass
class WeakInstanceLabels:
    labels: list[int]
    bag_category: int
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.labels:
            raise ValueError("instance label list is empty")
        if any(v not in (0, 1) for v in self.labels):
            raise ValueError("instance labels must be 0 or 1")

    def for_class(self, c: int) -> "WeakInstanceLabels":
        """Labels with respect to category ``c``: all zero unless ``c`` is the bag's category."""
        if c == self.bag_category:
            return self
        return WeakInstanceLabels([0] * len(self.labels), c, self.grid)


def classic_bag_label(labels) -> int:
    """0 iff every instance label is 0."""
    values = labels.labels if isinstance(labels, WeakInstanceLabels) else list(labels)
    if not values:
        raise ValueError("empty instance label list")
    return 0 if sum(values) == 0 else 1


@dataclass
class FusionStrategy:
    kind: str
    ls_weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.kind!r}")
        if self.ls_weights is not None and self.kind != "least-squares":
            raise ValueError("only least-squares carries fitted weights")


def _softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _stack(grain_scores) -> np.ndarray:
    if len(grain_scores) == 0:
        raise ValueError("no grain scores to fuse")
    arrs = [np.asarray(getattr(s, "data", s), dtype=np.float64) for s in grain_scores]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ValueError("grain score vectors differ in length")
    return np.stack(arrs)  # T+1 x [N x] C


def majority_vote(scores: np.ndarray) -> np.ndarray:
    """Per-grain argmax, plurality wins.

    Ties go to the class with the largest summed raw score, then the lowest index.
    """
    votes = scores.argmax(axis=-1)  # G x [N]
    c = scores.shape[-1]
    counts = np.stack([(votes == k).sum(axis=0) for k in range(c)], axis=-1)
    summed = scores.sum(axis=0)
    best = counts.max(axis=-1, keepdims=True)
    tie_score = np.where(counts == best, summed, -np.inf)
    return tie_score.argmax(axis=-1)


def fuse(grain_scores, strategy: FusionStrategy) -> np.ndarray:
    """Fuse per-grain raw score vectors into a bag distribution (rows sum to 1)."""
    s = _stack(grain_scores)
    if strategy.kind == "mean":
        return _softmax(s.mean(axis=0))
    if strategy.kind == "max":
        return _softmax(s.max(axis=0))
    if strategy.kind == "majority-vote":
        winner = majority_vote(s)
        return np.eye(s.shape[-1])[winner]
    if strategy.ls_weights is None:
        raise ValueError("least-squares fusion used before fitting")
    w = np.asarray(strategy.ls_weights, dtype=np.float64)
    if w.shape != (s.shape[0],):
        raise ValueError(f"{w.size} fitted weights for {s.shape[0]} grains")
    return _softmax(np.tensordot(w, s, axes=1))


def fit_least_squares(train_scores, train_labels, ridge: float = 1e-6) -> np.ndarray:
    """Per-grain scalar weights minimising sum ||sum_t w_t Y_t - onehot||^2 (+ ridge ||w||^2).

    ``train_scores`` is samples x grains x classes.
    """
    y = np.asarray(train_scores, dtype=np.float64)
    if y.ndim != 3 or y.shape[0] < 1:
        raise ValueError("train_scores must be samples x grains x classes with >= 1 sample")
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    labels = np.asarray(train_labels, dtype=np.int64)
    n, g, c = y.shape
    target = np.eye(c)[labels]
    a = y.transpose(0, 2, 1).reshape(n * c, g)
    gram = a.T @ a + ridge * np.eye(g)
    rhs = a.T @ target.reshape(-1)
    try:
        w = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"least-squares system degenerate even with ridge {ridge}") from exc
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("least-squares weights are not finite")
    return w


def covariance_matrix(distributions) -> np.ndarray:
    """Unbiased C x C sample covariance of probability vectors (rows = samples)."""
    if isinstance(distributions, np.ndarray):
        p = distributions.astype(np.float64)
    else:
        rows = [np.asarray(d.numpy() if hasattr(d, "numpy") else d, dtype=np.float64) for d in distributions]
        p = np.concatenate([r.reshape(-1, r.shape[-1]) for r in rows])
    if p.shape[0] < 2:
        raise ValueError("covariance needs at least 2 samples")
    centered = p - p.mean(axis=0)
    cov = centered.T @ centered / (p.shape[0] - 1)
    return 0.5 * (cov + cov.T)


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([f"{v:.9g}" for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
