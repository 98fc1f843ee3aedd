"""Independent numerical checks for objectives and estimators.

Everything here re-derives a quantity by a route separate from the code it
checks: gradients by central differences, estimator means by exhaustive
enumeration of batch combinations, optima by deterministic full-batch
descent, and tracker behavior by explicit sweeps at a frozen parameter.
"""

from __future__ import annotations

from itertools import combinations
from typing import Optional

import numpy as np

from .core import (
    BatchSpec,
    FccoProblem,
    ObjectiveOverflowError,
    draw_batch,
    full_gradient,
    full_objective,
    g_batch,
    g_full,
    g_mean_vjp,
)
from .tracker import TrackerTable

ENUM_LIMIT = 6


def fd_gradient(problem: FccoProblem, w: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the exact objective."""
    if not step > 0:
        raise ValueError("step must be > 0")
    w = np.asarray(w, dtype=float).copy()
    grad = np.zeros(problem.dim_w)
    for k in range(problem.dim_w):
        orig = w[k]
        try:
            w[k] = orig + step
            f_plus = full_objective(problem, w)
            w[k] = orig - step
            f_minus = full_objective(problem, w)
        except ObjectiveOverflowError as exc:
            raise RuntimeError(f"objective overflow probing coordinate {k}: {exc}") from exc
        finally:
            w[k] = orig
        grad[k] = (f_plus - f_minus) / (2.0 * step)
    return grad


def gradient_rel_error(problem: FccoProblem, w: np.ndarray, step: float = 1e-5) -> float:
    """Relative L2 gap between analytic and central-difference gradients.

    The denominator is max(1, ||analytic||) so flat regions do not inflate
    the ratio.
    """
    analytic = full_gradient(problem, w)
    numeric = fd_gradient(problem, w, step)
    return float(np.linalg.norm(numeric - analytic) / max(1.0, np.linalg.norm(analytic)))


def enumerate_estimator_bias(
    problem: FccoProblem, w: np.ndarray, batch: BatchSpec
) -> tuple[float, np.ndarray]:
    """Exact mean of the plug-in batch gradient estimator, and its bias.

    Averages the estimator over every outer subset of size b1 crossed with
    every inner subset of size b2 per sampled index, all equally weighted.
    Returns (||mean - exact gradient||, mean).  Guarded to tiny problems;
    anything with n_outer or an inner set above ENUM_LIMIT is refused.
    """
    n = problem.n_outer
    if n > ENUM_LIMIT or any(problem.inner_size(i) > ENUM_LIMIT for i in range(n)):
        raise ValueError("enumeration bound exceeded")
    b1, b2 = batch.b1, batch.b2
    if b1 > n:
        raise ValueError(f"b1={b1} exceeds n_outer={n}")

    # Inner average of each index's estimator term, over all b2-subsets.
    term_mean = []
    for i in range(n):
        size = problem.inner_size(i)
        if b2 > size:
            raise ValueError(f"b2={b2} exceeds inner set of index {i} ({size})")
        acc = np.zeros(problem.dim_w)
        count = 0
        for combo in combinations(range(size), b2):
            jj = np.array(combo, dtype=int)
            ghat = g_batch(problem, w, i, jj)
            a = np.asarray(problem.f_grad(i, ghat))
            acc += g_mean_vjp(problem, w, i, jj, a)
            count += 1
        term_mean.append(acc / count)

    mean_est = np.zeros(problem.dim_w)
    n_subsets = 0
    for subset in combinations(range(n), b1):
        contrib = np.zeros(problem.dim_w)
        for i in subset:
            contrib += term_mean[i]
        mean_est += contrib / b1
        n_subsets += 1
    mean_est /= n_subsets
    if problem.ridge:
        mean_est = mean_est + problem.ridge * np.asarray(w, dtype=float)
    bias = float(np.linalg.norm(mean_est - full_gradient(problem, w)))
    return bias, mean_est


def reference_gd(
    problem: FccoProblem,
    w0: np.ndarray,
    eta: float,
    T: int,
    backtracking: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic full-batch descent; returns (best iterate, F trace).

    With backtracking on, the step size is halved whenever a step would
    increase F, and the shrunken step persists.  Fifty consecutive accepted
    increases raise an error as divergence.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    w = np.asarray(w0, dtype=float).reshape(-1).copy()
    F = full_objective(problem, w)
    trace = [F]
    best_F, best_w = F, w.copy()
    step = eta
    consecutive_up = 0
    for _ in range(T):
        grad = full_gradient(problem, w)
        cand = problem.projection(w - step * grad)
        F_cand = full_objective(problem, cand)
        if backtracking:
            halvings = 0
            while F_cand > F and halvings < 60:
                step /= 2.0
                cand = problem.projection(w - step * grad)
                F_cand = full_objective(problem, cand)
                halvings += 1
        w, F = cand, F_cand
        trace.append(F)
        if F > trace[-2]:
            consecutive_up += 1
            if consecutive_up >= 50:
                raise RuntimeError("divergence: objective increased 50 consecutive steps")
        else:
            consecutive_up = 0
        if F < best_F:
            best_F, best_w = F, w.copy()
    return best_w, np.array(trace)


def contraction_check(
    problem: FccoProblem,
    w: np.ndarray,
    gamma: float,
    sweeps: int,
    b2: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Tracker error trace over full sweeps at a frozen parameter.

    Starts a table with every row initialized at zero, then per sweep
    feeds each index one estimate: the exact inner value when ``b2`` is
    None, otherwise a fresh mean over a b2-sized inner batch.  Returns the
    mean squared tracker error before any sweep and after each one; with
    exact values the trace contracts by (1 - gamma)^2 per sweep, while
    batch noise makes it plateau at a positive floor.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if b2 is not None and rng is None:
        raise ValueError("stochastic sweeps need an rng")
    w = np.asarray(w, dtype=float)
    n = problem.n_outer
    table = TrackerTable(n, problem.d_prime, gamma)
    table.initialized[:] = True
    exact = [g_full(problem, w, i) for i in range(n)]

    def xi() -> float:
        return float(
            sum(float((table.u[i] - exact[i]) @ (table.u[i] - exact[i])) for i in range(n)) / n
        )

    trace = [xi()]
    for _ in range(sweeps):
        for i in range(n):
            if b2 is None:
                est = exact[i]
            else:
                jj = draw_batch(rng, problem.inner_size(i), b2)
                est = g_batch(problem, w, i, jj)
            table.sox_update(i, est)
        trace.append(xi())
    return np.array(trace)
