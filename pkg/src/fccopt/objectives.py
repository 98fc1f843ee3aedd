"""Concrete coupled compositional objectives over linear scorers.

Each ``make_*_problem`` factory closes over its dataset and returns an
:class:`~fccopt.core.FccoProblem` whose inner values are means over the
per-index inner sets:

  average precision surrogate   outer set = positives, inner set = all
                                examples, d' = 2 ratio terms
  p-norm push                   outer set = negatives, inner set =
                                positives, d' = 1, outer power p
  neighborhood component ratio  outer set = all points, inner set =
                                everything but the point itself, d' = 2,
                                parameter is a linear map stored row-major
  list ranking likelihood       outer set = positively weighted items,
                                inner set = the item's whole query, d' = 1

Every factory supplies vectorized ``g_samples``/``g_vjp`` fast paths in
addition to the per-item callables, and the two routes agree to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import FccoProblem

SCORE_CLAMP = 30.0
RATIO_FLOOR = 1e-12


@dataclass(frozen=True)
class SurrogateLoss:
    """Scalar pairwise loss applied to score differences.

    ``squared_hinge`` is max(0, s + margin)^2; ``exponential`` is exp(s).
    ``value`` and ``deriv`` are vectorized over numpy arrays.
    """

    kind: str
    margin: float = 1.0

    def __post_init__(self):
        if self.kind not in ("squared_hinge", "exponential"):
            raise ValueError(f"unknown loss kind {self.kind!r}")

    @classmethod
    def squared_hinge(cls, margin: float = 1.0) -> "SurrogateLoss":
        return cls("squared_hinge", margin)

    @classmethod
    def exponential(cls) -> "SurrogateLoss":
        return cls("exponential")

    def value(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "squared_hinge":
            r = np.maximum(0.0, s + self.margin)
            return r * r
        return np.exp(s)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "squared_hinge":
            return 2.0 * np.maximum(0.0, s + self.margin)
        return np.exp(s)


@dataclass
class LinearScorer:
    """Score h(x) = <w, x>; the score gradient in w is x itself."""

    w: np.ndarray

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ np.asarray(self.w, dtype=float)


@dataclass
class RankingDataset:
    """Dense binary ranking data with labels in {-1, +1}.

    ``positives``/``negatives`` hold the row indices of each class and are
    derived from ``labels`` on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    positives: np.ndarray = field(init=False)
    negatives: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        self.positives = np.flatnonzero(self.labels == 1)
        self.negatives = np.flatnonzero(self.labels == -1)
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise ValueError("need at least one positive and one negative example")

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClampCounter:
    """Count of score values clipped before the exponential."""

    count: int = 0

    def add(self, k: int) -> None:
        self.count += int(k)


def _ratio_f(label: str):
    """Build (f_value, f_grad) for the ratio composition -u1/u2."""

    def f_value(i: int, u) -> float:
        u = np.asarray(u, dtype=float)
        if u[1] <= RATIO_FLOOR:
            raise ValueError(f"{label} denominator underflow at outer index {i}")
        return -float(u[0]) / float(u[1])

    def f_grad(i: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u[1] <= RATIO_FLOOR:
            raise ValueError(f"{label} denominator underflow at outer index {i}")
        return np.array([-1.0 / u[1], u[0] / (u[1] * u[1])])

    return f_value, f_grad


def make_ap_problem(data: RankingDataset, loss: Optional[SurrogateLoss] = None) -> FccoProblem:
    """Averaged pairwise precision surrogate.

    One outer term per positive example i; the inner set is every example.
    The two inner components accumulate the pairwise loss against positives
    only and against everyone, and the outer map takes minus their ratio,
    so smaller F means positives rank higher.  With all scores equal the
    value is minus the positive fraction of the dataset.
    """
    if loss is None:
        loss = SurrogateLoss.squared_hinge()
    if loss.kind != "squared_hinge":
        raise ValueError("averaged precision surrogate requires the squared hinge loss")
    X = data.features
    m = X.shape[0]
    pos = data.positives
    posmask = (data.labels == 1).astype(float)
    f_value, f_grad = _ratio_f("AP")

    def g_samples(w, i, jj):
        jj = np.asarray(jj, dtype=int)
        anchor = int(pos[i])
        s = X[jj] @ w - X[anchor] @ w
        ell = loss.value(s)
        return np.stack([posmask[jj] * ell, ell], axis=1)

    def g_vjp(w, i, jj, a):
        jj = np.asarray(jj, dtype=int)
        anchor = int(pos[i])
        s = X[jj] @ w - X[anchor] @ w
        coeff = (a[0] * posmask[jj] + a[1]) * loss.deriv(s)
        return (coeff @ X[jj] - coeff.sum() * X[anchor]) / len(jj)

    def g_sample(w, i, j):
        return g_samples(w, i, np.array([j]))[0]

    def g_grad_sample(w, i, j):
        return lambda a: g_vjp(w, i, np.array([j]), np.asarray(a, dtype=float))

    return FccoProblem(
        n_outer=len(pos),
        d_prime=2,
        dim_w=data.dim,
        inner_size=lambda i: m,
        g_sample=g_sample,
        g_grad_sample=g_grad_sample,
        f_value=f_value,
        f_grad=f_grad,
        g_samples=g_samples,
        g_vjp=g_vjp,
        meta={"kind": "ap", "data": data},
    )


def make_pnorm_push_problem(
    data: RankingDataset, p: float = 4.0, loss: Optional[SurrogateLoss] = None
) -> FccoProblem:
    """Push objective: mean pairwise loss per negative, raised to power p.

    One outer term per negative example; the inner set is the positives
    and the outer map is u -> u^p with p > 1.  With the exponential loss,
    score differences are clipped to +-SCORE_CLAMP before exponentiating
    and each clip increments ``meta['clamp_counter']``.  The composition is
    convex and monotone in the inner value, so the problem is flagged for
    the primal-dual variant.
    """
    if not p > 1:
        raise ValueError(f"p must be > 1, got {p}")
    if loss is None:
        loss = SurrogateLoss.exponential()
    X = data.features
    pos = data.positives
    neg = data.negatives
    clamp = ClampCounter()
    do_clamp = loss.kind == "exponential"

    def _diffs(w, i, jj):
        anchor = int(neg[i])
        s = X[pos[jj]] @ w - X[anchor] @ w
        if do_clamp:
            hit = np.abs(s) > SCORE_CLAMP
            if hit.any():
                clamp.add(hit.sum())
                s = np.clip(s, -SCORE_CLAMP, SCORE_CLAMP)
            return s, ~hit
        return s, np.ones(len(s), dtype=bool)

    def g_samples(w, i, jj):
        jj = np.asarray(jj, dtype=int)
        s, _ = _diffs(w, i, jj)
        return loss.value(s).reshape(-1, 1)

    def g_vjp(w, i, jj, a):
        jj = np.asarray(jj, dtype=int)
        anchor = int(neg[i])
        s, inside = _diffs(w, i, jj)
        coeff = a[0] * loss.deriv(s) * inside
        return (coeff @ X[pos[jj]] - coeff.sum() * X[anchor]) / len(jj)

    def g_sample(w, i, j):
        return g_samples(w, i, np.array([j]))[0]

    def g_grad_sample(w, i, j):
        return lambda a: g_vjp(w, i, np.array([j]), np.asarray(a, dtype=float))

    def f_value(i, u) -> float:
        u0 = float(np.asarray(u, dtype=float)[0])
        if u0 < 0:
            raise ValueError(f"inner value {u0} is negative at outer index {i}")
        return u0 ** p

    def f_grad(i, u) -> np.ndarray:
        u0 = float(np.asarray(u, dtype=float)[0])
        if u0 < 0:
            raise ValueError(f"inner value {u0} is negative at outer index {i}")
        return np.array([p * u0 ** (p - 1.0)])

    return FccoProblem(
        n_outer=len(neg),
        d_prime=1,
        dim_w=data.dim,
        inner_size=lambda i: len(pos),
        g_sample=g_sample,
        g_grad_sample=g_grad_sample,
        f_value=f_value,
        f_grad=f_grad,
        g_samples=g_samples,
        g_vjp=g_vjp,
        monotone_convex=True,
        meta={"kind": "pnorm_push", "data": data, "clamp_counter": clamp, "p": p},
    )


def make_nca_problem(points: np.ndarray, labels: np.ndarray, r: int) -> FccoProblem:
    """Soft neighbor ratio under a learned linear map A of shape (r, d).

    The parameter vector is A flattened row-major.  For each point i the
    inner set is every other point, with Gaussian affinities
    exp(-||A x_i - A x_j||^2); the two inner components accumulate the
    affinity over same-class points and over all points, and the outer map
    takes minus their ratio.  Every class needs at least two members so
    each numerator has support.
    """
    X = np.asarray(points, dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2:
        raise ValueError("points must be a 2-d array")
    m, d = X.shape
    if y.shape != (m,):
        raise ValueError("labels must have one entry per point")
    if r < 1:
        raise ValueError("r must be >= 1")
    values, counts = np.unique(y, return_counts=True)
    for cls, cnt in zip(values, counts):
        if cnt < 2:
            raise ValueError(f"class {cls!r} has a single member")
    f_value, f_grad = _ratio_f("NCA")

    def _others(i, jj):
        # Inner index space skips the anchor point itself.
        jj = np.asarray(jj, dtype=int)
        return jj + (jj >= i)

    def g_samples(w, i, jj):
        A = np.asarray(w, dtype=float).reshape(r, d)
        others = _others(i, jj)
        diff = X[others] - X[i]
        V = diff @ A.T
        e = np.exp(-(V * V).sum(axis=1))
        mask = (y[others] == y[i]).astype(float)
        return np.stack([mask * e, e], axis=1)

    def g_vjp(w, i, jj, a):
        A = np.asarray(w, dtype=float).reshape(r, d)
        others = _others(i, jj)
        diff = X[others] - X[i]
        V = diff @ A.T
        e = np.exp(-(V * V).sum(axis=1))
        mask = (y[others] == y[i]).astype(float)
        coeff = (a[0] * mask + a[1]) * (-2.0 * e)
        grad_A = (V * coeff[:, None]).T @ diff / len(others)
        return grad_A.reshape(-1)

    def g_sample(w, i, j):
        return g_samples(w, i, np.array([j]))[0]

    def g_grad_sample(w, i, j):
        return lambda a: g_vjp(w, i, np.array([j]), np.asarray(a, dtype=float))

    return FccoProblem(
        n_outer=m,
        d_prime=2,
        dim_w=r * d,
        inner_size=lambda i: m - 1,
        g_sample=g_sample,
        g_grad_sample=g_grad_sample,
        f_value=f_value,
        f_grad=f_grad,
        g_samples=g_samples,
        g_vjp=g_vjp,
        meta={"kind": "nca", "points": X, "labels": y, "r": r},
    )


def make_listnet_problem(queries: Sequence[tuple[np.ndarray, np.ndarray]]) -> FccoProblem:
    """Top-one list likelihood over per-query softmaxes.

    ``queries`` is a sequence of (features, relevance) pairs; relevances
    are nonnegative and normalize to a target distribution P within each
    query.  One outer term per item with positive weight: its inner set is
    the whole query, the scalar inner value g is the mean of
    exp(h(x) - h(x_i)), and the outer map is P_i * log(g).  Since
    1 / (m_q * g_i) is exactly the softmax weight of item i, driving F
    down concentrates the softmax on the heavily weighted items.  Equal
    scores give g = 1 for every item and hence F = 0.
    """
    prepared = []
    for q, (Xq, yq) in enumerate(queries):
        Xq = np.asarray(Xq, dtype=float)
        yq = np.asarray(yq, dtype=float)
        if Xq.ndim != 2 or yq.shape != (Xq.shape[0],):
            raise ValueError(f"query {q}: features and relevances do not line up")
        if Xq.shape[0] < 2:
            raise ValueError(f"query {q} has fewer than two items")
        if np.any(yq < 0):
            raise ValueError(f"query {q} has negative relevance")
        total = yq.sum()
        if total <= 0:
            raise ValueError(f"query {q} has all-zero relevance")
        prepared.append((Xq, yq / total))
    if not prepared:
        raise ValueError("need at least one query")
    dim = prepared[0][0].shape[1]
    for q, (Xq, _) in enumerate(prepared):
        if Xq.shape[1] != dim:
            raise ValueError(f"query {q} has feature dimension {Xq.shape[1]}, expected {dim}")
    # One outer index per (query, item) pair with positive weight.
    index = [
        (q, i, P[i]) for q, (Xq, P) in enumerate(prepared) for i in range(len(P)) if P[i] > 0
    ]

    def g_samples(w, k, jj):
        q, i, _ = index[k]
        Xq, _ = prepared[q]
        jj = np.asarray(jj, dtype=int)
        s = Xq[jj] @ w - Xq[i] @ w
        return np.exp(s).reshape(-1, 1)

    def g_vjp(w, k, jj, a):
        q, i, _ = index[k]
        Xq, _ = prepared[q]
        jj = np.asarray(jj, dtype=int)
        s = Xq[jj] @ w - Xq[i] @ w
        coeff = a[0] * np.exp(s)
        return (coeff @ Xq[jj] - coeff.sum() * Xq[i]) / len(jj)

    def g_sample(w, k, j):
        return g_samples(w, k, np.array([j]))[0]

    def g_grad_sample(w, k, j):
        return lambda a: g_vjp(w, k, np.array([j]), np.asarray(a, dtype=float))

    def f_value(k, u) -> float:
        u0 = float(np.asarray(u, dtype=float)[0])
        if u0 <= 0:
            raise ValueError(f"inner value {u0} is not positive at outer index {k}")
        return index[k][2] * float(np.log(u0))

    def f_grad(k, u) -> np.ndarray:
        u0 = float(np.asarray(u, dtype=float)[0])
        if u0 <= 0:
            raise ValueError(f"inner value {u0} is not positive at outer index {k}")
        return np.array([index[k][2] / u0])

    sizes = [prepared[q][0].shape[0] for q, _, _ in index]
    return FccoProblem(
        n_outer=len(index),
        d_prime=1,
        dim_w=dim,
        inner_size=lambda k: sizes[k],
        g_sample=g_sample,
        g_grad_sample=g_grad_sample,
        f_value=f_value,
        f_grad=f_grad,
        g_samples=g_samples,
        g_vjp=g_vjp,
        meta={"kind": "listnet", "queries": prepared, "index": index},
    )
