"""Problem bundle and exact evaluations for coupled compositional objectives.

The objective family handled throughout this package is

    F(w) = (1/n) * sum_i f_i( g(w; i, S_i) )

where the inner value g over the finite set S_i is the arithmetic mean of
per-item values g(w; i, j), each f_i maps that d'-dimensional mean to a
scalar, and the outer index i couples its own inner set to the summand.
Mini-batch estimators elsewhere in the package replace the inner mean by a
mean over a sampled subset; the functions here evaluate everything exactly
and serve as the ground truth the estimators are checked against.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ObjectiveOverflowError(RuntimeError):
    """An outer term produced a non-finite value.

    Carries the offending outer index as ``index``.
    """

    def __init__(self, index: int, value: float):
        super().__init__(f"objective overflow at outer index {index} (value {value!r})")
        self.index = index
        self.value = value


def identity_projection(w: np.ndarray) -> np.ndarray:
    return w


@dataclass(frozen=True)
class BatchSpec:
    """Outer and inner mini-batch sizes."""

    b1: int
    b2: int

    def __post_init__(self):
        if self.b1 < 1 or self.b2 < 1:
            raise ValueError(f"batch sizes must be >= 1, got b1={self.b1}, b2={self.b2}")


@dataclass(frozen=True)
class FccoProblem:
    """Bundle of everything that defines one coupled compositional objective.

    Parameters are flat float64 vectors of length ``dim_w`` (matrix-valued
    parameters are stored row-major flattened).  ``g_sample(w, i, j)``
    returns the length-``d_prime`` value of inner item j of outer index i,
    and ``g_grad_sample(w, i, j)`` returns an operator mapping a
    length-``d_prime`` vector ``a`` to the Jacobian-transpose product
    (d g_sample / d w)^T a.  The optional vectorized hooks ``g_samples``
    and ``g_vjp`` compute the same quantities for a whole index array at
    once; when absent the per-item callables are looped over.

    ``ridge`` adds (ridge/2) * ||w||^2 to the objective and ridge * w to
    every gradient, exact and estimated alike.  Instances are immutable;
    build new variants with :func:`with_ridge` or ``dataclasses.replace``.
    """

    n_outer: int
    d_prime: int
    dim_w: int
    inner_size: Callable[[int], int]
    g_sample: Callable[[np.ndarray, int, int], np.ndarray]
    g_grad_sample: Callable[[np.ndarray, int, int], Callable[[np.ndarray], np.ndarray]]
    f_value: Callable[[int, np.ndarray], float]
    f_grad: Callable[[int, np.ndarray], np.ndarray]
    projection: Callable[[np.ndarray], np.ndarray] = identity_projection
    g_samples: Optional[Callable[[np.ndarray, int, np.ndarray], np.ndarray]] = None
    g_vjp: Optional[Callable[[np.ndarray, int, np.ndarray, np.ndarray], np.ndarray]] = None
    monotone_convex: bool = False
    ridge: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_outer < 1:
            raise ValueError("n_outer must be >= 1")
        if self.d_prime < 1:
            raise ValueError("d_prime must be >= 1")
        if self.dim_w < 1:
            raise ValueError("dim_w must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")

    def total_inner_size(self) -> int:
        return sum(self.inner_size(i) for i in range(self.n_outer))


def with_ridge(problem: FccoProblem, mu: float) -> FccoProblem:
    """Return a copy of ``problem`` with (mu/2) * ||w||^2 added on."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return dataclasses.replace(problem, ridge=problem.ridge + mu)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; equal seeds give bit-identical draw sequences."""
    return np.random.default_rng(seed)


def draw_batch(rng: np.random.Generator, size: int, k: int) -> np.ndarray:
    """Draw k of range(size) without replacement, returned sorted ascending.

    Sorting fixes the summation order, so a full batch reproduces the
    deterministic full-set evaluation bit for bit.
    """
    if k > size:
        raise ValueError(f"cannot draw {k} items from {size} without replacement")
    return np.sort(rng.choice(size, size=k, replace=False))


def g_values(problem: FccoProblem, w: np.ndarray, i: int, jj: np.ndarray) -> np.ndarray:
    """Per-item inner values for index array jj, shape (len(jj), d_prime)."""
    if problem.g_samples is not None:
        return problem.g_samples(w, i, jj)
    return np.array([problem.g_sample(w, i, j) for j in jj], dtype=float).reshape(
        len(jj), problem.d_prime
    )


def g_mean_vjp(
    problem: FccoProblem, w: np.ndarray, i: int, jj: np.ndarray, a: np.ndarray
) -> np.ndarray:
    """Mean over jj of the per-item Jacobian-transpose products (d g / d w)^T a."""
    if problem.g_vjp is not None:
        return problem.g_vjp(w, i, jj, a)
    acc = np.zeros(problem.dim_w)
    for j in jj:
        acc += problem.g_grad_sample(w, i, int(j))(a)
    return acc / len(jj)


def g_batch(problem: FccoProblem, w: np.ndarray, i: int, inner_batch: np.ndarray) -> np.ndarray:
    """Mean inner value over the sampled inner batch."""
    inner_batch = np.asarray(inner_batch, dtype=int)
    if inner_batch.size == 0:
        raise ValueError("empty inner batch")
    return g_values(problem, w, i, inner_batch).mean(axis=0)


def g_full(problem: FccoProblem, w: np.ndarray, i: int) -> np.ndarray:
    """Exact inner value: mean over the whole inner set of outer index i."""
    jj = np.arange(problem.inner_size(i))
    return g_values(problem, w, i, jj).mean(axis=0)


def _checked_f(problem: FccoProblem, i: int, u: np.ndarray) -> float:
    try:
        val = float(problem.f_value(i, u))
    except OverflowError:
        # Python floats raise where numpy would return inf.
        raise ObjectiveOverflowError(i, float("inf")) from None
    if not np.isfinite(val):
        raise ObjectiveOverflowError(i, val)
    return val


def full_objective(problem: FccoProblem, w: np.ndarray) -> float:
    """Exact F(w), averaging every outer term over its full inner set."""
    w = np.asarray(w, dtype=float)
    acc = 0.0
    for i in range(problem.n_outer):
        acc += _checked_f(problem, i, g_full(problem, w, i))
    acc /= problem.n_outer
    if problem.ridge:
        acc += 0.5 * problem.ridge * float(w @ w)
    return acc


def full_gradient(problem: FccoProblem, w: np.ndarray) -> np.ndarray:
    """Exact gradient of F by the chain rule through every inner mean."""
    w = np.asarray(w, dtype=float)
    acc = np.zeros(problem.dim_w)
    for i in range(problem.n_outer):
        u = g_full(problem, w, i)
        _checked_f(problem, i, u)
        a = np.asarray(problem.f_grad(i, u), dtype=float)
        jj = np.arange(problem.inner_size(i))
        acc += g_mean_vjp(problem, w, i, jj, a)
    acc /= problem.n_outer
    if problem.ridge:
        acc = acc + problem.ridge * w
    return acc


# Field order here fixes the CSV column order used by the harness.
@dataclass
class RunRecord:
    """One per-iteration metrics row emitted by the optimizer loops.

    ``inner_oracle_count`` and ``decay_touches`` are cumulative.  The exact
    quantities train_F, grad_norm and metric are filled at evaluation
    strides only and are None elsewhere.  ``wallclock`` is elapsed seconds
    since the start of the run; it is carried in memory for console
    reporting but excluded from determinism comparisons and file output.
    """

    iteration: int
    epoch_equiv: float
    inner_oracle_count: int
    decay_touches: int
    train_F: Optional[float]
    grad_norm: Optional[float]
    metric: Optional[float]
    wallclock: float


RUN_RECORD_FIELDS = tuple(f.name for f in dataclasses.fields(RunRecord))
