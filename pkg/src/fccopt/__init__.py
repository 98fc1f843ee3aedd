"""Stochastic optimization for finite-sum coupled compositional objectives.

The objective family is F(w) = (1/n) sum_i f_i(g(w; i, S_i)) with each
inner value a mean over a finite per-index set.  The package provides the
problem abstraction (:mod:`fccopt.core`), moving-average state
(:mod:`fccopt.tracker`), the optimizer loops (:mod:`fccopt.optim`), four
ranking and metric-learning objectives (:mod:`fccopt.objectives`), data
utilities (:mod:`fccopt.data`), independent numerical checks
(:mod:`fccopt.verify`) and an experiment harness with a CLI
(:mod:`fccopt.harness`, ``fccopt``).

Typical use::

    from fccopt import gen_ranking, make_pnorm_push_problem, SoxConfig, BatchSpec
    from fccopt import sox_run, make_rng

    data = gen_ranking(40, 40, dim=3, separation=1.0, noise=0.5, rng=make_rng(0))
    problem = make_pnorm_push_problem(data, p=4.0)
    cfg = SoxConfig(eta=0.05, batch=BatchSpec(8, 8), gamma=0.5, T=2000)
    result = sox_run(problem, [0.0] * problem.dim_w, cfg, make_rng(1), eval_every=10)
"""

from .core import (
    BatchSpec,
    FccoProblem,
    ObjectiveOverflowError,
    RunRecord,
    draw_batch,
    full_gradient,
    full_objective,
    g_batch,
    g_full,
    make_rng,
    with_ridge,
)
from .data import (
    SparseDataset,
    ap_metric,
    binarize_labels,
    gen_clusters,
    gen_queries,
    gen_ranking,
    parse_libsvm,
    serialize_libsvm,
    split,
    to_dense,
)
from .objectives import (
    LinearScorer,
    RankingDataset,
    SurrogateLoss,
    make_ap_problem,
    make_listnet_problem,
    make_nca_problem,
    make_pnorm_push_problem,
)
from .optim import (
    BoostConfig,
    PdSoxConfig,
    RunAborted,
    RunResult,
    SoxConfig,
    bsgd_run,
    moap_run,
    pd_sox_run,
    project_ball,
    soap_run,
    sox_boost_run,
    sox_run,
)
from .tracker import MomentumVector, TrackerTable, tracker_error
from .verify import (
    contraction_check,
    enumerate_estimator_bias,
    fd_gradient,
    gradient_rel_error,
    reference_gd,
)

__version__ = "0.1.0"

__all__ = [
    "BatchSpec", "FccoProblem", "ObjectiveOverflowError", "RunRecord", "draw_batch",
    "full_gradient", "full_objective", "g_batch", "g_full", "make_rng", "with_ridge",
    "SparseDataset", "ap_metric", "binarize_labels", "gen_clusters", "gen_queries",
    "gen_ranking", "parse_libsvm", "serialize_libsvm", "split", "to_dense",
    "LinearScorer", "RankingDataset", "SurrogateLoss", "make_ap_problem",
    "make_listnet_problem", "make_nca_problem", "make_pnorm_push_problem",
    "BoostConfig", "PdSoxConfig", "RunAborted", "RunResult", "SoxConfig",
    "bsgd_run", "moap_run", "pd_sox_run", "project_ball", "soap_run",
    "sox_boost_run", "sox_run",
    "MomentumVector", "TrackerTable", "tracker_error",
    "contraction_check", "enumerate_estimator_bias", "fd_gradient",
    "gradient_rel_error", "reference_gd",
]
