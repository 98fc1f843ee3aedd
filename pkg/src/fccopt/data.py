"""Dataset loading, synthetic generators and the ranking metric.

The sparse text format handled here is one example per line,

    label index:value index:value ...

with 1-based strictly increasing indices and '#' starting a comment line.
Generators draw from a caller-supplied seeded generator so every dataset
is reproducible from its seed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .objectives import RankingDataset


@dataclass
class SparseDataset:
    """Rows of (label, entries) with entries sorted by 1-based index.

    ``dim`` is at least the largest index appearing in any row; rows may
    leave trailing features implicit zeros.
    """

    rows: list[tuple[float, list[tuple[int, float]]]]
    dim: int

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for label, _ in self.rows])


def parse_libsvm(source: Union[str, Iterable[str]]) -> SparseDataset:
    """Parse the sparse text format; str input is treated as file content.

    Raises ValueError naming the 1-based line number for malformed tokens
    and for indices that fail to increase strictly.
    """
    if isinstance(source, str):
        lines: Iterable[str] = io.StringIO(source)
    else:
        lines = source
    rows = []
    dim = 0
    for ln, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ValueError(f"line {ln}: bad label {tokens[0]!r}") from None
        entries = []
        prev_idx = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ValueError(f"line {ln}: bad feature token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ValueError(f"line {ln}: bad feature token {tok!r}") from None
            if idx < 1:
                raise ValueError(f"line {ln}: feature index {idx} must be >= 1")
            if idx <= prev_idx:
                raise ValueError(
                    f"line {ln}: feature index {idx} does not increase (after {prev_idx})"
                )
            prev_idx = idx
            entries.append((idx, val))
        rows.append((label, entries))
        if entries:
            dim = max(dim, entries[-1][0])
    return SparseDataset(rows=rows, dim=dim)


def serialize_libsvm(dataset: SparseDataset) -> str:
    """Inverse of :func:`parse_libsvm` up to whitespace and comments."""
    out = []
    for label, entries in dataset.rows:
        parts = [repr(label)] + [f"{idx}:{val!r}" for idx, val in entries]
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


def to_dense(dataset: SparseDataset) -> tuple[np.ndarray, np.ndarray]:
    """Densify to (features, labels); feature column k holds index k+1."""
    X = np.zeros((len(dataset.rows), dataset.dim))
    for r, (_, entries) in enumerate(dataset.rows):
        for idx, val in entries:
            X[r, idx - 1] = val
    return X, dataset.labels


def binarize_labels(labels: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Map raw labels to +-1: strictly above the threshold is positive."""
    labels = np.asarray(labels, dtype=float)
    return np.where(labels > threshold, 1, -1)


def split(
    dataset: SparseDataset, test_fraction: float, rng: np.random.Generator
) -> tuple[SparseDataset, SparseDataset]:
    """Disjoint seeded shuffle split; together the parts hold every row."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    m = len(dataset.rows)
    if m < 2:
        raise ValueError("need at least two rows to split")
    perm = rng.permutation(m)
    n_test = int(m * test_fraction + 1e-9)
    test_rows = [dataset.rows[i] for i in perm[:n_test]]
    train_rows = [dataset.rows[i] for i in perm[n_test:]]
    return (
        SparseDataset(rows=train_rows, dim=dataset.dim),
        SparseDataset(rows=test_rows, dim=dataset.dim),
    )


def gen_ranking(
    n_pos: int,
    n_neg: int,
    dim: int,
    separation: float,
    noise: float,
    rng: np.random.Generator,
) -> RankingDataset:
    """Two spherical Gaussians with mean gap ``separation`` along axis 0.

    ``noise`` is the per-coordinate standard deviation; zero collapses each
    class onto its mean.  Positives come first in the returned rows.
    """
    if n_pos < 1 or n_neg < 1:
        raise ValueError("need at least one example per class")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if separation < 0 or noise < 0:
        raise ValueError("separation and noise must be >= 0")
    mu = np.zeros(dim)
    mu[0] = separation / 2.0
    X_pos = mu + noise * rng.standard_normal((n_pos, dim))
    X_neg = -mu + noise * rng.standard_normal((n_neg, dim))
    features = np.vstack([X_pos, X_neg])
    labels = np.concatenate([np.ones(n_pos, dtype=int), -np.ones(n_neg, dtype=int)])
    return RankingDataset(features=features, labels=labels)


def gen_clusters(
    n_per_class: int,
    n_classes: int,
    dim: int,
    spread: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs around rng-drawn centers, ``n_per_class`` points each.

    Classes need at least two members so the soft neighbor ratio is
    defined for every point.
    """
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    centers = rng.standard_normal((n_classes, dim))
    points = []
    labels = []
    for c in range(n_classes):
        points.append(centers[c] + spread * rng.standard_normal((n_per_class, dim)))
        labels.extend([c] * n_per_class)
    return np.vstack(points), np.array(labels, dtype=int)


def gen_queries(
    n_queries: int,
    n_items: int,
    dim: int,
    rng: np.random.Generator,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Synthetic query lists with integer relevances in {0, 1, 2, 3}.

    Each query is guaranteed at least one positively relevant item.
    """
    if n_queries < 1 or n_items < 2 or dim < 1:
        raise ValueError("need n_queries >= 1, n_items >= 2, dim >= 1")
    queries = []
    for _ in range(n_queries):
        X = rng.standard_normal((n_items, dim))
        y = rng.integers(0, 4, size=n_items)
        while not np.any(y > 0):
            y = rng.integers(0, 4, size=n_items)
        queries.append((X, y.astype(float)))
    return queries


def ap_metric(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean precision at the rank of each positive, descending by score.

    Ties rank by original index (stable).  Requires at least one positive.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    pos = labels == 1
    if not pos.any():
        raise ValueError("no positive examples")
    order = np.argsort(-scores, kind="stable")
    ranked_pos = pos[order]
    hits = np.cumsum(ranked_pos)
    ranks = np.arange(1, len(scores) + 1)
    return float((hits[ranked_pos] / ranks[ranked_pos]).mean())
