"""Stochastic optimizer loops for coupled compositional objectives.

All single-stage methods share one sampling code path: per iteration an
outer batch is drawn without replacement, then one inner batch per sampled
index, and the same inner batch feeds both the batch estimate ghat and the
Jacobian-vector product.  The methods differ only in what they plug into
the outer derivative and whether they keep momentum:

  sox   blends ghat into the tracker and differentiates at the row value
        from before the blend, then averages gradients with momentum beta
  soap  same tracker blend but differentiates at the post-blend row, no
        momentum
  bsgd  differentiates at ghat itself, no tracker, no momentum
  moap  scaled-decay tracker touching every row, differentiates at the
        post-update row, momentum beta

Because the sampling path is shared, runs with equal seeds draw identical
batches, so seed-matched comparisons isolate the estimator differences.
``sox_boost_run`` chains sox stages with halved step sizes, and
``pd_sox_run`` is the primal-dual special case beta = 1, gamma = 1/(1+tau)
with an optional Euclidean ball constraint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    BatchSpec,
    FccoProblem,
    ObjectiveOverflowError,
    RunRecord,
    draw_batch,
    full_gradient,
    full_objective,
    g_batch,
    g_mean_vjp,
    with_ridge,
)
from .tracker import MomentumVector, TrackerTable


def _default_decay() -> list[tuple[float, float]]:
    return [(0.5, 0.1), (0.75, 0.1)]


def _validate_decay(lr_decay):
    prev = 0.0
    for frac, mult in lr_decay:
        if not 0.0 < frac < 1.0:
            raise ValueError(f"decay fraction {frac} must lie in (0, 1)")
        if frac <= prev:
            raise ValueError("decay fractions must be strictly increasing")
        if mult <= 0:
            raise ValueError(f"decay multiplier {mult} must be > 0")
        prev = frac


@dataclass
class SoxConfig:
    """Hyperparameters for one single-stage run.

    ``lr_decay`` lists (fraction-of-T, multiplier) pairs; the step size is
    multiplied once each horizon fraction is passed.  The default cuts the
    step by 10x at 50% and again at 75% of the run.
    """

    eta: float
    batch: BatchSpec
    beta: float = 0.1
    gamma: float = 0.5
    T: int = 1000
    lr_decay: list[tuple[float, float]] = field(default_factory=_default_decay)

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        _validate_decay(self.lr_decay)


@dataclass
class BoostConfig:
    """Stage-1 hyperparameters for the stagewise restart scheme.

    Stage k runs sox with eta_k = eta1 / 2^(k-1) and T_k = T1 * 2^(k-1);
    beta and gamma shrink proportionally to eta (their ratios to eta1 are
    fixed at stage 1) and are clamped to (0, 1].  ``mu_reg`` > 0 adds
    (mu_reg/2) * ||w||^2 to the objective for the whole run, making flat
    problems strongly convex.
    """

    K: int
    eta1: float
    T1: int
    batch: BatchSpec
    beta1: float = 0.1
    gamma1: float = 0.5
    mu_reg: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.eta1 <= 0:
            raise ValueError("eta1 must be > 0")
        if self.T1 < 1:
            raise ValueError("T1 must be >= 1")
        if not 0.0 < self.beta1 <= 1.0:
            raise ValueError("beta1 must lie in (0, 1]")
        if not 0.0 < self.gamma1 <= 1.0:
            raise ValueError("gamma1 must lie in (0, 1]")
        if self.mu_reg < 0:
            raise ValueError("mu_reg must be >= 0")


@dataclass
class PdSoxConfig:
    """Primal-dual variant: tau sets gamma = 1/(1+tau), beta is pinned at 1.

    ``radius`` constrains iterates to the Euclidean ball of that radius;
    None leaves them unconstrained.  Large tau freezes every tracker row at
    its first-touch value; the run still completes, it just stops adapting
    the dual estimates.
    """

    eta: float
    tau: float
    T: int
    batch: BatchSpec
    radius: Optional[float] = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be > 0 or None")


class RunAborted(RuntimeError):
    """A run hit non-finite state and stopped.

    Carries the records accumulated so far, the failing iteration and a
    short reason string.
    """

    def __init__(self, records: list[RunRecord], iteration: int, reason: str):
        super().__init__(f"run aborted at iteration {iteration}: {reason}")
        self.records = records
        self.iteration = iteration
        self.reason = reason


@dataclass
class RunResult:
    """Output of one optimizer run.

    ``w`` is the final iterate and ``records`` the per-iteration rows.
    ``w_avg`` is filled by the primal-dual variant (uniform average of the
    iterates seen before each update).  ``w_trace`` is filled when the run
    was asked to capture every iterate.  ``table``/``momentum`` expose the
    final internal state so stages can be chained; ``stage_ws`` lists the
    iterate after each boost stage.
    """

    w: np.ndarray
    records: list[RunRecord]
    w_avg: Optional[np.ndarray] = None
    w_trace: Optional[list[np.ndarray]] = None
    table: Optional[TrackerTable] = None
    momentum: Optional[MomentumVector] = None
    stage_ws: Optional[list[np.ndarray]] = None


def project_ball(w: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the centered ball of the given radius."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    norm = float(np.linalg.norm(w))
    if norm <= radius:
        return w
    return w * (radius / norm)


def decay_multiplier(step: int, T: int, lr_decay) -> float:
    """Product of multipliers for horizon fractions passed by 1-based step."""
    mult = 1.0
    for frac, m in lr_decay:
        if step > frac * T:
            mult *= m
    return mult


def _run_loop(
    problem: FccoProblem,
    w0: np.ndarray,
    cfg,
    rng: np.random.Generator,
    method: str,
    *,
    gamma: float,
    beta: Optional[float],
    lr_decay,
    eval_every: Optional[int],
    metric_fn: Optional[Callable[[np.ndarray], float]],
    capture_w: bool,
    table: Optional[TrackerTable],
    momentum: Optional[MomentumVector],
    extra_projection: Optional[Callable[[np.ndarray], np.ndarray]],
    average_iterates: bool,
    iter0: int = 0,
    oracle0: int = 0,
    decay0: int = 0,
    records: Optional[list[RunRecord]] = None,
    t_start: Optional[float] = None,
) -> RunResult:
    w = np.array(w0, dtype=float).reshape(-1)
    if w.shape != (problem.dim_w,):
        raise ValueError(f"w0 has length {w.size}, problem expects {problem.dim_w}")
    if not np.all(np.isfinite(w)):
        raise ValueError("w0 must be finite")

    n = problem.n_outer
    b1, b2 = cfg.batch.b1, cfg.batch.b2
    if b1 > n:
        raise ValueError(f"b1={b1} exceeds n_outer={n}")
    min_inner = min(problem.inner_size(i) for i in range(n))
    if b2 > min_inner:
        raise ValueError(f"b2={b2} exceeds smallest inner set ({min_inner})")

    uses_tracker = method in ("sox", "soap", "moap")
    uses_momentum = method in ("sox", "moap")
    if uses_tracker:
        if table is None:
            table = TrackerTable(n, problem.d_prime, gamma)
        else:
            table.gamma = float(gamma)
    if uses_momentum:
        if momentum is None:
            momentum = MomentumVector(problem.dim_w, beta)
        else:
            momentum.beta = float(beta)

    records = [] if records is None else records
    w_trace: Optional[list[np.ndarray]] = [] if capture_w else None
    w_sum = np.zeros_like(w) if average_iterates else None
    oracle = oracle0
    decay_touches = decay0
    total_inner = problem.total_inner_size()
    t_start = time.perf_counter() if t_start is None else t_start

    for step in range(1, cfg.T + 1):
        t = iter0 + step
        if average_iterates:
            w_sum += w
        eta_t = cfg.eta * decay_multiplier(step, cfg.T, lr_decay)

        outer = draw_batch(rng, n, b1)
        drawn = []
        for i in outer:
            i = int(i)
            jj = draw_batch(rng, problem.inner_size(i), b2)
            ghat = g_batch(problem, w, i, jj)
            if not np.all(np.isfinite(ghat)):
                # Divergence surfaces here one step before w itself blows up.
                raise RunAborted(records, t, f"non-finite inner estimate for index {i}")
            drawn.append((i, jj, ghat))

        grad = np.zeros(problem.dim_w)
        if method in ("sox", "soap"):
            for i, jj, ghat in drawn:
                u_prev, u_new = table.sox_update(i, ghat)
                a = np.asarray(problem.f_grad(i, u_prev if method == "sox" else u_new))
                grad += g_mean_vjp(problem, w, i, jj, a)
        elif method == "bsgd":
            for i, jj, ghat in drawn:
                a = np.asarray(problem.f_grad(i, ghat))
                grad += g_mean_vjp(problem, w, i, jj, a)
        elif method == "moap":
            table.moap_update([i for i, _, _ in drawn], {i: gh for i, _, gh in drawn}, b1, n)
            if not np.all(np.isfinite(table.u)):
                raise RunAborted(records, t, "moap scale overflow")
            for i, jj, _ in drawn:
                a = np.asarray(problem.f_grad(i, table.u[i]))
                grad += g_mean_vjp(problem, w, i, jj, a)
            decay_touches += n - b1
        else:
            raise ValueError(f"unknown method {method!r}")
        grad /= b1
        if problem.ridge:
            grad = grad + problem.ridge * w

        v = momentum.momentum_update(grad) if uses_momentum else grad
        w = w - eta_t * v
        w = problem.projection(w)
        if extra_projection is not None:
            w = extra_projection(w)
        oracle += b1 * b2

        if not np.all(np.isfinite(w)):
            raise RunAborted(records, t, "non-finite parameter")
        if capture_w:
            w_trace.append(w.copy())

        do_eval = eval_every is not None and (step % eval_every == 0 or step == cfg.T)
        train_F = grad_norm = metric = None
        if do_eval:
            try:
                train_F = full_objective(problem, w)
                grad_norm = float(np.linalg.norm(full_gradient(problem, w)))
            except ObjectiveOverflowError as exc:
                raise RunAborted(records, t, str(exc)) from exc
            if metric_fn is not None:
                metric = float(metric_fn(w))
        records.append(
            RunRecord(
                iteration=t,
                epoch_equiv=oracle / total_inner,
                inner_oracle_count=oracle,
                decay_touches=decay_touches,
                train_F=train_F,
                grad_norm=grad_norm,
                metric=metric,
                wallclock=time.perf_counter() - t_start,
            )
        )

    w_avg = w_sum / cfg.T if average_iterates else None
    return RunResult(
        w=w, records=records, w_avg=w_avg, w_trace=w_trace, table=table, momentum=momentum
    )


def sox_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: SoxConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
    table: Optional[TrackerTable] = None,
    momentum: Optional[MomentumVector] = None,
) -> RunResult:
    """Tracker blend with pre-blend derivative point and gradient momentum."""
    return _run_loop(
        problem, w0, config, rng, "sox",
        gamma=config.gamma, beta=config.beta, lr_decay=config.lr_decay,
        eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
        table=table, momentum=momentum, extra_projection=None, average_iterates=False,
    )


def soap_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: SoxConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
) -> RunResult:
    """Tracker blend with post-blend derivative point, no momentum.

    ``config.beta`` is ignored.  With gamma = 1 each tracker row equals the
    fresh batch estimate, so the run reproduces bsgd bit for bit under a
    shared seed.
    """
    return _run_loop(
        problem, w0, config, rng, "soap",
        gamma=config.gamma, beta=None, lr_decay=config.lr_decay,
        eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
        table=None, momentum=None, extra_projection=None, average_iterates=False,
    )


def bsgd_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: SoxConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
) -> RunResult:
    """Plug the raw batch estimate straight into the outer derivative.

    ``config.beta`` and ``config.gamma`` are ignored.  With full batches
    the step direction is the exact gradient, so the trajectory matches
    deterministic gradient descent.
    """
    return _run_loop(
        problem, w0, config, rng, "bsgd",
        gamma=1.0, beta=None, lr_decay=config.lr_decay,
        eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
        table=None, momentum=None, extra_projection=None, average_iterates=False,
    )


def moap_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: SoxConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
) -> RunResult:
    """Scaled-decay tracker touching all rows, momentum on the gradient.

    The n - b1 unsampled-row decays per iteration are reported in the
    ``decay_touches`` column, separate from the inner oracle count.
    """
    return _run_loop(
        problem, w0, config, rng, "moap",
        gamma=config.gamma, beta=config.beta, lr_decay=config.lr_decay,
        eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
        table=None, momentum=None, extra_projection=None, average_iterates=False,
    )


def boost_schedule(config: BoostConfig, n_outer: int) -> list[dict]:
    """Per-stage (eta, beta, gamma, T) implied by the stage-1 settings."""
    b1 = config.batch.b1
    c_beta = config.beta1 / config.eta1
    c_gamma = config.gamma1 * b1 / (config.eta1 * n_outer)
    stages = []
    for k in range(1, config.K + 1):
        eta_k = config.eta1 / 2 ** (k - 1)
        stages.append(
            {
                "eta": eta_k,
                "beta": min(1.0, c_beta * eta_k),
                "gamma": min(1.0, c_gamma * eta_k * n_outer / b1),
                "T": config.T1 * 2 ** (k - 1),
            }
        )
    return stages


def sox_boost_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: BoostConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
) -> RunResult:
    """Chain sox stages, halving eta and doubling T each stage.

    Tracker, momentum and the iterate all carry across stage boundaries;
    only the scalars eta, beta, gamma are rewritten.  With K = 1 this is
    identical to :func:`sox_run` at the stage-1 parameters (and no step
    decay).  ``mu_reg`` > 0 optimizes the ridge-augmented objective, and
    every reported train_F refers to that augmented objective.
    """
    if config.mu_reg > 0:
        problem = with_ridge(problem, config.mu_reg)
    stages = boost_schedule(config, problem.n_outer)
    w = np.array(w0, dtype=float).reshape(-1)
    table: Optional[TrackerTable] = None
    momentum: Optional[MomentumVector] = None
    records: list[RunRecord] = []
    all_trace: list[np.ndarray] = []
    stage_ws: list[np.ndarray] = []
    iter0 = oracle0 = 0
    t_start = time.perf_counter()
    for st in stages:
        stage_cfg = SoxConfig(
            eta=st["eta"], batch=config.batch, beta=st["beta"], gamma=st["gamma"],
            T=st["T"], lr_decay=[],
        )
        res = _run_loop(
            problem, w, stage_cfg, rng, "sox",
            gamma=st["gamma"], beta=st["beta"], lr_decay=[],
            eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
            table=table, momentum=momentum, extra_projection=None,
            average_iterates=False, iter0=iter0, oracle0=oracle0,
            records=records, t_start=t_start,
        )
        w, table, momentum = res.w, res.table, res.momentum
        if capture_w:
            all_trace.extend(res.w_trace)
        stage_ws.append(w.copy())
        iter0 += st["T"]
        oracle0 = records[-1].inner_oracle_count
    return RunResult(
        w=w, records=records, w_trace=all_trace if capture_w else None,
        table=table, momentum=momentum, stage_ws=stage_ws,
    )


def pd_sox_run(
    problem: FccoProblem,
    w0: np.ndarray,
    config: PdSoxConfig,
    rng: np.random.Generator,
    *,
    eval_every: Optional[int] = None,
    metric_fn: Optional[Callable[[np.ndarray], float]] = None,
    capture_w: bool = False,
) -> RunResult:
    """Primal-dual run for scalar-inner monotone convex problems.

    Requires d' = 1 and a problem flagged ``monotone_convex``; for such
    problems the tracker blend with gamma = 1/(1+tau) is exactly a
    proximal dual ascent step, and the guarantee attaches to the uniform
    iterate average, returned as ``w_avg`` alongside the last iterate.
    """
    if problem.d_prime != 1:
        raise ValueError("pd-sox requires scalar inner value")
    if not problem.monotone_convex:
        raise ValueError("pd-sox requires a problem flagged monotone_convex")
    gamma = 1.0 / (1.0 + config.tau)
    extra = None
    if config.radius is not None:
        radius = float(config.radius)
        extra = lambda w: project_ball(w, radius)
    cfg = SoxConfig(
        eta=config.eta, batch=config.batch, beta=1.0, gamma=gamma, T=config.T, lr_decay=[]
    )
    return _run_loop(
        problem, w0, cfg, rng, "sox",
        gamma=gamma, beta=1.0, lr_decay=[],
        eval_every=eval_every, metric_fn=metric_fn, capture_w=capture_w,
        table=None, momentum=None, extra_projection=extra, average_iterates=True,
    )
