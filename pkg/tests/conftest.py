"""Shared toy problems.

The linear family here has per-item inner values A[i][j] @ w + c[i][j], so
every exact quantity has a short closed form and the outer map can be
swapped between identity, affine and square to cover the unbiased and the
biased estimator regimes.
"""

import numpy as np
import pytest

from fccopt import FccoProblem, gen_ranking, make_rng


def linear_problem(f_kind="identity", n=3, dim=2, sizes=(2, 3, 2), seed=0,
                   vectorized=False):
    """Tiny problem with linear per-item inner values and a scalar outer map.

    f_kind picks f(u): "identity" u, "affine" 2u + 1, "square" u^2.
    """
    assert len(sizes) == n
    rng = make_rng(seed)
    A = [rng.integers(-2, 3, size=(sz, dim)).astype(float) for sz in sizes]
    c = [rng.integers(-1, 2, size=sz).astype(float) for sz in sizes]

    def g_sample(w, i, j):
        return np.array([A[i][j] @ w + c[i][j]])

    def g_grad_sample(w, i, j):
        return lambda a: a[0] * A[i][j]

    if f_kind == "identity":
        f_value = lambda i, u: float(u[0])
        f_grad = lambda i, u: np.array([1.0])
    elif f_kind == "affine":
        f_value = lambda i, u: 2.0 * float(u[0]) + 1.0
        f_grad = lambda i, u: np.array([2.0])
    elif f_kind == "square":
        f_value = lambda i, u: float(u[0]) ** 2
        f_grad = lambda i, u: np.array([2.0 * float(u[0])])
    else:
        raise ValueError(f_kind)

    kwargs = {}
    if vectorized:
        def g_samples(w, i, jj):
            jj = np.asarray(jj, dtype=int)
            return (A[i][jj] @ w + c[i][jj]).reshape(-1, 1)

        def g_vjp(w, i, jj, a):
            jj = np.asarray(jj, dtype=int)
            return a[0] * A[i][jj].mean(axis=0)

        kwargs = {"g_samples": g_samples, "g_vjp": g_vjp}

    problem = FccoProblem(
        n_outer=n,
        d_prime=1,
        dim_w=dim,
        inner_size=lambda i: sizes[i],
        g_sample=g_sample,
        g_grad_sample=g_grad_sample,
        f_value=f_value,
        f_grad=f_grad,
        monotone_convex=f_kind != "square",
        **kwargs,
    )
    # Stash the coefficients so tests can recompute everything by hand.
    problem.meta.update(A=A, c=c, f_kind=f_kind)
    return problem


@pytest.fixture(scope="session")
def pnorm_toy_data():
    return gen_ranking(40, 40, dim=3, separation=1.0, noise=0.7, rng=make_rng(11))


@pytest.fixture(scope="session")
def ap_toy_data():
    return gen_ranking(32, 96, dim=5, separation=0.5, noise=1.0, rng=make_rng(7))
