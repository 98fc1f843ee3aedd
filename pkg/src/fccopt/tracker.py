"""Moving-average state shared by the optimizer loops.

A tracker table keeps one running estimate u_i of each outer index's inner
value.  Rows are created lazily: the first batch estimate an index ever
receives is written through unchanged, and only later estimates are blended
with weight gamma.  A fresh blend with gamma = 1 therefore coincides with
simply keeping the newest batch estimate.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import FccoProblem, g_full


class TrackerTable:
    """Per-outer-index moving averages u_i with first-touch initialization.

    ``u`` has shape (n_outer, d_prime).  Rows with ``initialized`` False
    have never been sampled; their stored zeros are placeholders that no
    optimizer reads.
    """

    def __init__(self, n_outer: int, d_prime: int, gamma: float):
        if n_outer < 1 or d_prime < 1:
            raise ValueError("n_outer and d_prime must be >= 1")
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        self.u = np.zeros((n_outer, d_prime))
        self.initialized = np.zeros(n_outer, dtype=bool)
        self.gamma = float(gamma)

    @property
    def n_outer(self) -> int:
        return self.u.shape[0]

    @property
    def d_prime(self) -> int:
        return self.u.shape[1]

    def sox_update(self, i: int, ghat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Blend a fresh batch estimate into row i.

        Returns ``(u_prev, u_new)``: the row value before and after the
        blend.  On first touch both equal ``ghat``.  Only row i changes.
        """
        ghat = np.asarray(ghat, dtype=float).reshape(self.d_prime)
        if not np.all(np.isfinite(ghat)):
            raise ValueError(f"non-finite inner estimate for index {i}")
        if self.initialized[i]:
            u_prev = self.u[i].copy()
            self.u[i] = (1.0 - self.gamma) * u_prev + self.gamma * ghat
        else:
            u_prev = ghat.copy()
            self.u[i] = ghat
            self.initialized[i] = True
        return u_prev, self.u[i].copy()

    def moap_update(
        self,
        sampled: Sequence[int],
        ghat_by_index: Mapping[int, np.ndarray],
        b1: int,
        n: int,
    ) -> None:
        """Scaled-decay update touching every row.

        Sampled rows blend in ghat scaled by n/b1; every other row decays
        by the factor (1 - gamma).  First-touch rows write ghat through
        unchanged, exactly as in :meth:`sox_update`.
        """
        sampled = list(sampled)
        if b1 < 1:
            raise ValueError("b1 must be >= 1")
        if len(sampled) != b1:
            raise ValueError(f"b1={b1} but {len(sampled)} sampled indices given")
        if n != self.n_outer:
            raise ValueError(f"n={n} does not match table with {self.n_outer} rows")
        scale = self.gamma * (n / b1)
        # Uninitialized rows hold zeros, so the blanket decay leaves them zero.
        self.u *= 1.0 - self.gamma
        for i in sampled:
            ghat = np.asarray(ghat_by_index[i], dtype=float).reshape(self.d_prime)
            if self.initialized[i]:
                self.u[i] += scale * ghat
            else:
                self.u[i] = ghat
                self.initialized[i] = True


class MomentumVector:
    """Exponential moving average of gradient estimates."""

    def __init__(self, dim_w: int, beta: float):
        if dim_w < 1:
            raise ValueError("dim_w must be >= 1")
        if not 0.0 < beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {beta}")
        self.v = np.zeros(dim_w)
        self.beta = float(beta)

    def momentum_update(self, grad_est: np.ndarray) -> np.ndarray:
        grad_est = np.asarray(grad_est, dtype=float)
        if grad_est.shape != self.v.shape:
            raise ValueError(
                f"gradient estimate has shape {grad_est.shape}, expected {self.v.shape}"
            )
        self.v = (1.0 - self.beta) * self.v + self.beta * grad_est
        return self.v.copy()


def tracker_error(table: TrackerTable, problem: FccoProblem, w: np.ndarray) -> float:
    """Mean squared distance between tracked rows and the exact inner values.

    Requires every row initialized; otherwise the comparison would read
    placeholder zeros.
    """
    if table.n_outer != problem.n_outer or table.d_prime != problem.d_prime:
        raise ValueError("table shape does not match problem")
    if not table.initialized.all():
        missing = int(np.flatnonzero(~table.initialized)[0])
        raise ValueError(f"tracker row {missing} uninitialized")
    acc = 0.0
    for i in range(problem.n_outer):
        diff = table.u[i] - g_full(problem, w, i)
        acc += float(diff @ diff)
    return acc / problem.n_outer
