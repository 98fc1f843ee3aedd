import numpy as np
import pytest

from fccopt import (
    BatchSpec,
    FccoProblem,
    contraction_check,
    enumerate_estimator_bias,
    fd_gradient,
    full_gradient,
    full_objective,
    g_batch,
    gen_ranking,
    gradient_rel_error,
    make_pnorm_push_problem,
    make_rng,
    reference_gd,
    with_ridge,
)

from conftest import linear_problem


# ---------------------------------------------------------------------------
# finite differences


def test_fd_gradient_exact_on_quadratics():
    # Central differences are exact (to roundoff) for polynomials of
    # degree two, which the square toy is.
    prob = linear_problem("square")
    w = np.array([0.7, -0.4])
    assert np.allclose(fd_gradient(prob, w), full_gradient(prob, w), atol=1e-8)
    assert gradient_rel_error(prob, w) <= 1e-8


def test_fd_gradient_validation():
    prob = linear_problem("identity")
    with pytest.raises(ValueError):
        fd_gradient(prob, np.zeros(2), step=0.0)


def test_fd_gradient_reports_overflowing_coordinate():
    prob = linear_problem("identity")
    bad = FccoProblem(
        n_outer=prob.n_outer,
        d_prime=1,
        dim_w=prob.dim_w,
        inner_size=prob.inner_size,
        g_sample=prob.g_sample,
        g_grad_sample=prob.g_grad_sample,
        f_value=lambda i, u: float("nan"),
        f_grad=prob.f_grad,
    )
    with pytest.raises(RuntimeError, match="coordinate 0"):
        fd_gradient(bad, np.zeros(2))


# ---------------------------------------------------------------------------
# exhaustive estimator enumeration


def test_inner_value_estimator_is_unbiased():
    prob = linear_problem("identity")
    w = np.array([0.5, -1.0])
    from itertools import combinations

    from fccopt import g_full

    for i in range(prob.n_outer):
        size = prob.inner_size(i)
        for b2 in range(1, size + 1):
            subsets = list(combinations(range(size), b2))
            est = np.mean(
                [g_batch(prob, w, i, np.array(jj)) for jj in subsets], axis=0
            )
            assert np.allclose(est, g_full(prob, w, i), atol=1e-12)


def test_gradient_estimator_unbiased_for_affine_outer_maps():
    for kind in ("identity", "affine"):
        prob = linear_problem(kind)
        w = np.array([0.3, 0.9])
        bias, mean_est = enumerate_estimator_bias(prob, w, BatchSpec(2, 2))
        assert bias <= 1e-12
        assert np.allclose(mean_est, full_gradient(prob, w), atol=1e-12)


def test_gradient_estimator_bias_positive_and_shrinking_for_squares():
    prob = linear_problem("square", sizes=(3, 4, 3))
    w = np.array([0.7, 0.2])
    biases = [
        enumerate_estimator_bias(prob, w, BatchSpec(2, b2))[0] for b2 in (1, 2, 3)
    ]
    assert all(b > 1e-8 for b in biases)
    assert biases[0] > biases[1] > biases[2]


def test_bias_enumeration_respects_ridge():
    prob = with_ridge(linear_problem("affine"), 0.3)
    w = np.array([1.0, -1.0])
    bias, _ = enumerate_estimator_bias(prob, w, BatchSpec(2, 2))
    assert bias <= 1e-12


def test_bias_enumeration_guard_rails():
    big = linear_problem("identity", n=7, sizes=(2,) * 7)
    with pytest.raises(ValueError, match="enumeration bound"):
        enumerate_estimator_bias(big, np.zeros(2), BatchSpec(2, 2))
    prob = linear_problem("identity")
    with pytest.raises(ValueError, match="exceeds n_outer"):
        enumerate_estimator_bias(prob, np.zeros(2), BatchSpec(4, 2))
    with pytest.raises(ValueError, match="exceeds inner set"):
        enumerate_estimator_bias(prob, np.zeros(2), BatchSpec(2, 3))


# ---------------------------------------------------------------------------
# deterministic reference descent


def test_reference_gd_finds_quadratic_minimum():
    # F(w) = mean_i (a_i @ w + c_i)^2 has a closed-form least squares
    # minimizer; the toy aggregates per-index means first.
    prob = linear_problem("square", sizes=(2, 2, 2), seed=3)
    A, c = prob.meta["A"], prob.meta["c"]
    rows = np.array([Ai.mean(axis=0) for Ai in A])
    rhs = -np.array([ci.mean() for ci in c])
    w_star, *_ = np.linalg.lstsq(rows, rhs, rcond=None)

    w_best, trace = reference_gd(prob, np.zeros(2), eta=0.1, T=400)
    assert np.allclose(w_best, w_star, atol=1e-4)
    assert trace[-1] <= trace[0]
    assert full_objective(prob, w_best) == pytest.approx(min(trace), abs=1e-15)


def test_reference_gd_backtracking_never_accepts_increases():
    prob = linear_problem("square", seed=5)
    _, trace = reference_gd(prob, np.ones(2), eta=50.0, T=60)
    assert np.all(np.diff(trace) <= 1e-12)


def test_reference_gd_flags_divergence():
    prob = linear_problem("square", seed=5)
    with pytest.raises(RuntimeError, match="divergence"):
        reference_gd(prob, np.ones(2), eta=50.0, T=100, backtracking=False)


def test_reference_gd_validation():
    prob = linear_problem("square")
    with pytest.raises(ValueError):
        reference_gd(prob, np.zeros(2), eta=0.0, T=10)
    with pytest.raises(ValueError):
        reference_gd(prob, np.zeros(2), eta=0.1, T=0)


# ---------------------------------------------------------------------------
# tracker contraction sweeps


def frozen_w_problem():
    data = gen_ranking(6, 6, dim=3, separation=1.0, noise=0.6, rng=make_rng(13))
    return make_pnorm_push_problem(data, p=2.0)


def test_contraction_exact_sweeps_follow_the_geometric_rate():
    prob = frozen_w_problem()
    w = 0.2 * make_rng(0).standard_normal(prob.dim_w)
    for gamma in (0.1, 0.5):
        trace = contraction_check(prob, w, gamma, sweeps=5)
        assert trace[0] > 0
        for k in range(1, 6):
            want = (1.0 - gamma) ** (2 * k)
            assert trace[k] / trace[0] == pytest.approx(want, rel=1e-10)


def test_contraction_gamma_one_lands_exactly():
    prob = frozen_w_problem()
    w = 0.2 * make_rng(0).standard_normal(prob.dim_w)
    trace = contraction_check(prob, w, 1.0, sweeps=3)
    assert trace[0] > 0
    assert np.all(trace[1:] == 0.0)


def test_contraction_batch_noise_floor_scales_with_subsample_variance():
    # Mean of k draws without replacement from N has variance
    # sigma^2 (N-k) / (k (N-1)); going from k=1 to k=2 with N=6 gives a
    # 0.4 ratio, so the plateau should shrink by roughly that factor.
    prob = frozen_w_problem()
    w = 0.2 * make_rng(0).standard_normal(prob.dim_w)
    floors = []
    for b2 in (1, 2):
        trace = contraction_check(
            prob, w, 0.5, sweeps=600, b2=b2, rng=make_rng(42)
        )
        floors.append(float(trace[200:].mean()))
    assert floors[0] > 0 and floors[1] > 0
    ratio = floors[1] / floors[0]
    assert 0.25 <= ratio <= 0.7


def test_contraction_validation():
    prob = frozen_w_problem()
    with pytest.raises(ValueError):
        contraction_check(prob, np.zeros(prob.dim_w), 0.5, sweeps=0)
    with pytest.raises(ValueError, match="rng"):
        contraction_check(prob, np.zeros(prob.dim_w), 0.5, sweeps=2, b2=1)
