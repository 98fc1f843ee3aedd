"""Experiment harness: config files, runs, sweeps and delimited reports.

Config files are flat UTF-8 text, one ``section.key = value`` per line,
with '#' comment lines.  Booleans are true/false, lists are comma
separated, strings are unquoted.  Every run writes one CSV per seed whose
header names the RunRecord fields in declared order; evaluation-only
fields are empty strings at non-evaluation iterations, and the wallclock
column is always left empty so reruns with equal seeds are byte
identical.  Sweeps add comparison CSVs, and unless plotting is disabled
each delimited report is rendered to a PNG alongside it.

The FCCO_THREADS environment variable caps how many seeds or sweep points
run concurrently (default 1); results are assembled in submission order,
so concurrency never changes any output file.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    BatchSpec,
    FccoProblem,
    RUN_RECORD_FIELDS,
    RunRecord,
    full_objective,
    make_rng,
)
from .data import (
    ap_metric,
    binarize_labels,
    gen_clusters,
    gen_queries,
    gen_ranking,
    parse_libsvm,
    split,
    to_dense,
)
from .objectives import (
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
    soap_run,
    sox_boost_run,
    sox_run,
)
from .verify import gradient_rel_error
from . import plots

KNOWN_KEYS = {
    "objective.kind", "objective.loss", "objective.margin", "objective.p", "objective.rank",
    "data.source", "data.n_pos", "data.n_neg", "data.dim", "data.separation", "data.noise",
    "data.seed", "data.n_per_class", "data.n_classes", "data.spread", "data.n_queries",
    "data.n_items", "data.path", "data.label_threshold", "data.test_fraction",
    "data.split_seed",
    "optimizer.kind", "optimizer.eta", "optimizer.beta", "optimizer.gamma", "optimizer.T",
    "optimizer.lr_decay", "optimizer.K", "optimizer.eta1", "optimizer.beta1",
    "optimizer.gamma1", "optimizer.T1", "optimizer.mu_reg", "optimizer.tau",
    "optimizer.radius",
    "batch.b1", "batch.b2",
    "run.seeds", "run.eval_every", "run.out", "run.threshold", "run.plots",
    "sweep.b_total", "sweep.b1_list", "sweep.b_list", "sweep.gamma_list",
    "compare.optimizers",
}

SINGLE_STAGE_KINDS = ("sox", "soap", "bsgd", "moap")
OPTIMIZER_KINDS = SINGLE_STAGE_KINDS + ("sox_boost", "pd_sox")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines into a flat mapping."""
    out: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ValueError(f"line {ln}: expected 'section.key = value', got {stripped!r}")
        key = key.strip()
        value = value.strip()
        if "." not in key:
            raise ValueError(f"line {ln}: key {key!r} lacks a section prefix")
        if key in out:
            raise ValueError(f"line {ln}: duplicate key {key!r}")
        out[key] = value
    for key in out:
        if key not in KNOWN_KEYS:
            raise ValueError(f"unknown config key {key!r}")
    return out


def parse_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _get(raw, key, default=None):
    return raw.get(key, default)


def _get_int(raw, key, default=None):
    v = raw.get(key)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise ValueError(f"config key {key} = {v!r} is not an integer") from None


def _get_float(raw, key, default=None):
    v = raw.get(key)
    if v is None:
        return default
    try:
        return float(v)
    except ValueError:
        raise ValueError(f"config key {key} = {v!r} is not a number") from None


def _get_bool(raw, key, default=None):
    v = raw.get(key)
    if v is None:
        return default
    if v not in ("true", "false"):
        raise ValueError(f"config key {key} = {v!r} must be true or false")
    return v == "true"


def _get_int_list(raw, key, default=None):
    v = raw.get(key)
    if v is None:
        return default
    try:
        return [int(tok.strip()) for tok in v.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"config key {key} = {v!r} is not a comma list of integers") from None


def _get_float_list(raw, key, default=None):
    v = raw.get(key)
    if v is None:
        return default
    try:
        return [float(tok.strip()) for tok in v.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"config key {key} = {v!r} is not a comma list of numbers") from None


def _parse_lr_decay(v: str) -> list[tuple[float, float]]:
    if v in ("", "none"):
        return []
    pairs = []
    for tok in v.split(","):
        frac_s, sep, mult_s = tok.strip().partition(":")
        if not sep:
            raise ValueError(f"lr_decay entry {tok!r} is not fraction:multiplier")
        pairs.append((float(frac_s), float(mult_s)))
    return pairs


@dataclass
class ExperimentConfig:
    """Typed view of one parsed config mapping plus CLI overrides."""

    raw: dict[str, str]
    out: Path
    seeds: list[int]
    eval_every: int
    batch: BatchSpec
    plots: bool = True
    threshold: Optional[float] = None
    budget: Optional[int] = None

    @classmethod
    def from_raw(
        cls,
        raw: dict[str, str],
        *,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        eval_every: Optional[int] = None,
        budget: Optional[int] = None,
    ) -> "ExperimentConfig":
        seeds = [seed] if seed is not None else _get_int_list(raw, "run.seeds")
        if not seeds:
            raise ValueError("run.seeds is required and must be nonempty")
        out_path = Path(out if out is not None else _get(raw, "run.out", "out"))
        b1 = _get_int(raw, "batch.b1")
        b2 = _get_int(raw, "batch.b2")
        if b1 is None or b2 is None:
            raise ValueError("batch.b1 and batch.b2 are required")
        return cls(
            raw=raw,
            out=out_path,
            seeds=seeds,
            eval_every=eval_every if eval_every is not None else _get_int(raw, "run.eval_every", 10),
            batch=BatchSpec(b1, b2),
            plots=_get_bool(raw, "run.plots", True),
            threshold=_get_float(raw, "run.threshold"),
            budget=budget,
        )


@dataclass
class BuiltProblem:
    problem: FccoProblem
    w0: np.ndarray
    metric_fn: Optional[Callable[[np.ndarray], float]]
    metric_name: Optional[str] = None


def build_problem(cfg: ExperimentConfig) -> BuiltProblem:
    """Construct the objective named by the config, with its start point."""
    raw = cfg.raw
    kind = _get(raw, "objective.kind")
    if kind is None:
        raise ValueError("objective.kind is required")
    source = _get(raw, "data.source", "synthetic_ranking")
    data_rng = make_rng(_get_int(raw, "data.seed", 0))

    ranking: Optional[RankingDataset] = None
    test_ranking: Optional[RankingDataset] = None
    if source == "synthetic_ranking":
        ranking = gen_ranking(
            n_pos=_get_int(raw, "data.n_pos", 40),
            n_neg=_get_int(raw, "data.n_neg", 40),
            dim=_get_int(raw, "data.dim", 3),
            separation=_get_float(raw, "data.separation", 1.0),
            noise=_get_float(raw, "data.noise", 0.5),
            rng=data_rng,
        )
    elif source == "libsvm":
        path = _get(raw, "data.path")
        if path is None:
            raise ValueError("data.path is required for libsvm input")
        sparse = parse_libsvm(Path(path).read_text(encoding="utf-8"))
        frac = _get_float(raw, "data.test_fraction", 0.0)
        test_sparse = None
        if frac > 0:
            sparse, test_sparse = split(sparse, frac, make_rng(_get_int(raw, "data.split_seed", 0)))
        if kind in ("ap", "pnorm_push"):
            thr = _get_float(raw, "data.label_threshold", 0.0)
            X, y = to_dense(sparse)
            ranking = RankingDataset(features=X, labels=binarize_labels(y, thr))
            if test_sparse is not None and len(test_sparse.rows) > 0:
                Xt, yt = to_dense(test_sparse)
                yt = binarize_labels(yt, thr)
                if (yt == 1).any() and (yt == -1).any():
                    test_ranking = RankingDataset(features=Xt, labels=yt)

    if kind == "ap":
        if ranking is None:
            raise ValueError(f"data source {source!r} does not produce ranking data")
        margin = _get_float(raw, "objective.margin", 1.0)
        problem = make_ap_problem(ranking, SurrogateLoss.squared_hinge(margin))
        X, y = ranking.features, ranking.labels
        metric = lambda w: ap_metric(X @ w, y)
        return BuiltProblem(problem, np.zeros(problem.dim_w), metric, "train_ap")

    if kind == "pnorm_push":
        if ranking is None:
            raise ValueError(f"data source {source!r} does not produce ranking data")
        loss_name = _get(raw, "objective.loss", "exponential")
        if loss_name == "exponential":
            loss = SurrogateLoss.exponential()
        elif loss_name == "squared_hinge":
            loss = SurrogateLoss.squared_hinge(_get_float(raw, "objective.margin", 1.0))
        else:
            raise ValueError(f"unknown objective.loss {loss_name!r}")
        p = _get_float(raw, "objective.p", 4.0)
        problem = make_pnorm_push_problem(ranking, p=p, loss=loss)
        metric = None
        name = None
        if test_ranking is not None:
            test_problem = make_pnorm_push_problem(test_ranking, p=p, loss=loss)
            metric = lambda w: full_objective(test_problem, w)
            name = "test_F"
        return BuiltProblem(problem, np.zeros(problem.dim_w), metric, name)

    if kind == "nca":
        if source == "synthetic_clusters":
            points, labels = gen_clusters(
                n_per_class=_get_int(raw, "data.n_per_class", 8),
                n_classes=_get_int(raw, "data.n_classes", 3),
                dim=_get_int(raw, "data.dim", 4),
                spread=_get_float(raw, "data.spread", 0.3),
                rng=data_rng,
            )
        elif source == "libsvm":
            path = _get(raw, "data.path")
            if path is None:
                raise ValueError("data.path is required for libsvm input")
            sparse = parse_libsvm(Path(path).read_text(encoding="utf-8"))
            points, labels = to_dense(sparse)
            labels = labels.astype(int)
        else:
            raise ValueError(f"data source {source!r} does not produce labeled points")
        r = _get_int(raw, "objective.rank", min(2, points.shape[1]))
        problem = make_nca_problem(points, labels, r)
        w0 = np.eye(r, points.shape[1]).reshape(-1)
        return BuiltProblem(problem, w0, None, None)

    if kind == "listnet":
        if source != "synthetic_queries":
            raise ValueError(f"data source {source!r} does not produce query lists")
        queries = gen_queries(
            n_queries=_get_int(raw, "data.n_queries", 6),
            n_items=_get_int(raw, "data.n_items", 8),
            dim=_get_int(raw, "data.dim", 4),
            rng=data_rng,
        )
        problem = make_listnet_problem(queries)
        return BuiltProblem(problem, np.zeros(problem.dim_w), None, None)

    raise ValueError(f"unknown objective.kind {kind!r}")


def optimizer_settings(cfg: ExperimentConfig, kind_override: Optional[str] = None) -> dict:
    """Collect the optimizer section, applying any oracle budget override."""
    raw = cfg.raw
    kind = kind_override or _get(raw, "optimizer.kind", "sox")
    if kind not in OPTIMIZER_KINDS:
        raise ValueError(f"unknown optimizer.kind {kind!r}")
    T = _get_int(raw, "optimizer.T", 1000)
    if cfg.budget is not None:
        per_iter = cfg.batch.b1 * cfg.batch.b2
        T = max(1, cfg.budget // per_iter)
    settings = {
        "kind": kind,
        "eta": _get_float(raw, "optimizer.eta", 0.1),
        "beta": _get_float(raw, "optimizer.beta", 0.1),
        "gamma": _get_float(raw, "optimizer.gamma", 0.5),
        "T": T,
    }
    decay = _get(raw, "optimizer.lr_decay")
    if decay is not None:
        settings["lr_decay"] = _parse_lr_decay(decay)
    if kind == "sox_boost":
        settings.update(
            K=_get_int(raw, "optimizer.K", 3),
            eta1=_get_float(raw, "optimizer.eta1", settings["eta"]),
            beta1=_get_float(raw, "optimizer.beta1", settings["beta"]),
            gamma1=_get_float(raw, "optimizer.gamma1", settings["gamma"]),
            T1=_get_int(raw, "optimizer.T1", T),
            mu_reg=_get_float(raw, "optimizer.mu_reg", 0.0),
        )
    if kind == "pd_sox":
        settings.update(
            tau=_get_float(raw, "optimizer.tau", 1.0),
            radius=_get_float(raw, "optimizer.radius"),
        )
    return settings


@dataclass
class SeedOutcome:
    """One seed's run: final records plus either a result or an abort."""

    seed: int
    records: list[RunRecord]
    result: Optional[RunResult] = None
    abort: Optional[tuple[int, str]] = None

    @property
    def completed(self) -> bool:
        return self.abort is None

    def final_F(self) -> Optional[float]:
        for rec in reversed(self.records):
            if rec.train_F is not None:
                return rec.train_F
        return None

    def final_metric(self) -> Optional[float]:
        for rec in reversed(self.records):
            if rec.metric is not None:
                return rec.metric
        return None

    def best_eval_iteration(self) -> Optional[int]:
        evals = [(rec.train_F, rec.iteration) for rec in self.records if rec.train_F is not None]
        if not evals:
            return None
        return min(evals)[1]


def run_single(
    built: BuiltProblem,
    settings: dict,
    batch: BatchSpec,
    seed: int,
    eval_every: int,
    *,
    gamma_override: Optional[float] = None,
) -> SeedOutcome:
    """Run one seed of the configured optimizer, capturing aborts."""
    rng = make_rng(seed)
    kind = settings["kind"]
    try:
        if kind in SINGLE_STAGE_KINDS:
            kwargs = {}
            if "lr_decay" in settings:
                kwargs["lr_decay"] = settings["lr_decay"]
            cfg = SoxConfig(
                eta=settings["eta"],
                batch=batch,
                beta=settings["beta"],
                gamma=gamma_override if gamma_override is not None else settings["gamma"],
                T=settings["T"],
                **kwargs,
            )
            fn = {"sox": sox_run, "soap": soap_run, "bsgd": bsgd_run, "moap": moap_run}[kind]
            res = fn(built.problem, built.w0, cfg, rng,
                     eval_every=eval_every, metric_fn=built.metric_fn)
        elif kind == "sox_boost":
            cfg = BoostConfig(
                K=settings["K"], eta1=settings["eta1"], T1=settings["T1"], batch=batch,
                beta1=settings["beta1"], gamma1=settings["gamma1"], mu_reg=settings["mu_reg"],
            )
            res = sox_boost_run(built.problem, built.w0, cfg, rng,
                                eval_every=eval_every, metric_fn=built.metric_fn)
        elif kind == "pd_sox":
            cfg = PdSoxConfig(
                eta=settings["eta"], tau=settings["tau"], T=settings["T"], batch=batch,
                radius=settings["radius"],
            )
            res = pd_sox_run(built.problem, built.w0, cfg, rng,
                             eval_every=eval_every, metric_fn=built.metric_fn)
        else:
            raise ValueError(f"unknown optimizer kind {kind!r}")
    except RunAborted as exc:
        return SeedOutcome(seed=seed, records=exc.records, abort=(exc.iteration, exc.reason))
    return SeedOutcome(seed=seed, records=res.records, result=res)


def _thread_count() -> int:
    v = os.environ.get("FCCO_THREADS", "1")
    try:
        count = int(v)
    except ValueError:
        raise ValueError(f"FCCO_THREADS={v!r} is not an integer") from None
    return max(1, count)


def _map_jobs(jobs: Sequence[Callable[[], object]]) -> list:
    """Run thunks, possibly concurrently, returning results in order."""
    threads = _thread_count()
    if threads == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_run_csv(path, records: Sequence[RunRecord], abort: Optional[tuple[int, str]] = None):
    """One row per iteration; evaluation-only fields blank when skipped.

    The wallclock column is left blank unconditionally so that reruns with
    equal seeds produce byte-identical files.
    """
    lines = [",".join(RUN_RECORD_FIELDS)]
    for rec in records:
        lines.append(
            ",".join(
                [
                    str(rec.iteration),
                    _fmt(rec.epoch_equiv),
                    str(rec.inner_oracle_count),
                    str(rec.decay_touches),
                    _fmt(rec.train_F),
                    _fmt(rec.grad_norm),
                    _fmt(rec.metric),
                    "",
                ]
            )
        )
    if abort is not None:
        lines.append(f"# aborted at iteration {abort[0]}: {abort[1]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mean_std(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.array(values, dtype=float)
    return float(arr.mean()), float(arr.std())


SUMMARY_FIELDS = (
    "label", "n_seeds", "n_aborted", "final_F_mean", "final_F_std",
    "metric_mean", "metric_std", "best_iter_mean", "avg_iterate_F_mean",
)


def summarize_group(label: str, outcomes: list[SeedOutcome], problem: FccoProblem) -> dict:
    done = [o for o in outcomes if o.completed]
    finals = [o.final_F() for o in done if o.final_F() is not None]
    metrics = [o.final_metric() for o in done if o.final_metric() is not None]
    bests = [o.best_eval_iteration() for o in done if o.best_eval_iteration() is not None]
    f_mean, f_std = _mean_std(finals)
    m_mean, m_std = _mean_std(metrics)
    avg_F = None
    avg_vals = [
        full_objective(problem, o.result.w_avg)
        for o in done
        if o.result is not None and o.result.w_avg is not None
    ]
    if avg_vals:
        avg_F = float(np.mean(avg_vals))
    return {
        "label": label,
        "n_seeds": len(outcomes),
        "n_aborted": sum(not o.completed for o in outcomes),
        "final_F_mean": f_mean,
        "final_F_std": f_std,
        "metric_mean": m_mean,
        "metric_std": m_std,
        "best_iter_mean": float(np.mean(bests)) if bests else None,
        "avg_iterate_F_mean": avg_F,
    }


def write_summary_csv(path, rows: list[dict]):
    lines = [",".join(SUMMARY_FIELDS)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) if k != "label" else str(row[k]) for k in SUMMARY_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def eval_curve(outcome: SeedOutcome) -> tuple[list[int], list[float]]:
    iters = [rec.iteration for rec in outcome.records if rec.train_F is not None]
    vals = [rec.train_F for rec in outcome.records if rec.train_F is not None]
    return iters, vals


def mean_curve(outcomes: list[SeedOutcome]) -> tuple[list[int], list[float]]:
    """Mean train_F across completed seeds at each shared eval iteration."""
    done = [o for o in outcomes if o.completed]
    if not done:
        return [], []
    grids = [eval_curve(o) for o in done]
    iters = grids[0][0]
    for g in grids[1:]:
        if g[0] != iters:
            raise ValueError("seeds disagree on evaluation iterations")
    stacked = np.array([g[1] for g in grids], dtype=float)
    return iters, list(stacked.mean(axis=0))


@dataclass
class ExperimentOutcome:
    ok: bool
    out_dir: Path
    outcomes: list[SeedOutcome]
    summary: list[dict] = field(default_factory=list)
    csv_paths: list[Path] = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Run every seed of the configured optimizer and write the report."""
    built = build_problem(cfg)
    settings = optimizer_settings(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)

    jobs = [
        (lambda s=seed: run_single(built, settings, cfg.batch, s, cfg.eval_every))
        for seed in cfg.seeds
    ]
    outcomes = _map_jobs(jobs)

    csv_paths = []
    for outcome in outcomes:
        path = cfg.out / f"run_seed{outcome.seed}.csv"
        write_run_csv(path, outcome.records, outcome.abort)
        csv_paths.append(path)

    summary = [summarize_group(settings["kind"], outcomes, built.problem)]
    write_summary_csv(cfg.out / "summary.csv", summary)

    if cfg.plots:
        curves = []
        for outcome in outcomes:
            iters, vals = eval_curve(outcome)
            if iters:
                curves.append((f"seed {outcome.seed}", iters, vals))
        if curves:
            plots.save_curves(
                cfg.out / "train_loss.png", curves,
                title=f"{settings['kind']} training objective",
            )
    return ExperimentOutcome(
        ok=all(o.completed for o in outcomes),
        out_dir=cfg.out,
        outcomes=outcomes,
        summary=summary,
        csv_paths=csv_paths,
    )


def _write_curves_csv(path, labeled: list[tuple[str, list[int], list[float]]]):
    if not labeled:
        Path(path).write_text("iteration\n", encoding="utf-8")
        return
    iters = labeled[0][1]
    header = ["iteration"] + [f"{label}_mean_F" for label, _, _ in labeled]
    lines = [",".join(header)]
    for row_idx, it in enumerate(iters):
        row = [str(it)]
        for _, l_iters, l_vals in labeled:
            row.append(_fmt(l_vals[row_idx]) if l_iters == iters else "")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class SweepOutcome:
    ok: bool
    out_dir: Path
    groups: dict[str, list[SeedOutcome]]
    table: list[dict]


def _run_group(built, settings, cfg, *, gamma_override=None, batch=None) -> list[SeedOutcome]:
    batch = batch or cfg.batch
    jobs = [
        (
            lambda s=seed: run_single(
                built, settings, batch, s, cfg.eval_every, gamma_override=gamma_override
            )
        )
        for seed in cfg.seeds
    ]
    return _map_jobs(jobs)


def sweep_q1(
    cfg: ExperimentConfig,
    b_total: Optional[int] = None,
    b1_list: Optional[list[int]] = None,
) -> SweepOutcome:
    """Vary the outer/inner split of a fixed per-index oracle budget.

    Every variant runs b1 outer indices with b2 = b_total - b1 inner draws
    each, at the same iteration count, so larger b1 * b2 products see more
    samples per iteration but every index's inner set less precisely.
    """
    raw = cfg.raw
    b_total = b_total if b_total is not None else _get_int(raw, "sweep.b_total")
    b1_list = b1_list if b1_list is not None else _get_int_list(raw, "sweep.b1_list")
    if b_total is None or not b1_list:
        raise ValueError("sweep.b_total and sweep.b1_list are required")
    for b1 in b1_list:
        if not 1 <= b1 < b_total:
            raise ValueError(f"b1={b1} must lie in [1, b_total)")
    built = build_problem(cfg)
    settings = optimizer_settings(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list[SeedOutcome]] = {}
    table = []
    labeled_curves = []
    for b1 in b1_list:
        batch = BatchSpec(b1, b_total - b1)
        label = f"b1_{b1}"
        outcomes = _run_group(built, settings, cfg, batch=batch)
        groups[label] = outcomes
        row = summarize_group(label, outcomes, built.problem)
        row["b1"], row["b2"] = b1, b_total - b1
        table.append(row)
        iters, vals = mean_curve(outcomes)
        labeled_curves.append((label, iters, vals))

    ranked = sorted(
        (r for r in table if r["final_F_mean"] is not None), key=lambda r: r["final_F_mean"]
    )
    for rank, row in enumerate(ranked, start=1):
        row["rank"] = rank
    _write_curves_csv(cfg.out / "q1_curves.csv", labeled_curves)
    lines = ["b1,b2,final_F_mean,final_F_std,rank"]
    for row in table:
        lines.append(
            f"{row['b1']},{row['b2']},{_fmt(row['final_F_mean'])},"
            f"{_fmt(row['final_F_std'])},{row.get('rank', '')}"
        )
    (cfg.out / "q1_ranking.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg.plots:
        plots.save_curves(
            cfg.out / "q1_curves.png",
            [c for c in labeled_curves if c[1]],
            title="outer/inner split sweep",
        )
    ok = all(o.completed for outs in groups.values() for o in outs)
    return SweepOutcome(ok=ok, out_dir=cfg.out, groups=groups, table=table)


def iterations_to_threshold(
    built: BuiltProblem, outcome: SeedOutcome, threshold: float, T: int
) -> int:
    """First evaluated iteration at or below the threshold; T+1 if never.

    A start point already at or below the threshold reports zero.
    """
    if full_objective(built.problem, built.w0) <= threshold:
        return 0
    for rec in outcome.records:
        if rec.train_F is not None and rec.train_F <= threshold:
            return rec.iteration
    return T + 1


def sweep_q2(
    cfg: ExperimentConfig,
    b_list: Optional[list[int]] = None,
    threshold: Optional[float] = None,
) -> SweepOutcome:
    """Vary the total batch size with b1 = b2 = B/2, timing a loss target."""
    raw = cfg.raw
    b_list = b_list if b_list is not None else _get_int_list(raw, "sweep.b_list")
    threshold = threshold if threshold is not None else cfg.threshold
    if not b_list:
        raise ValueError("sweep.b_list is required")
    if threshold is None:
        raise ValueError("a loss threshold is required (run.threshold)")
    for b in b_list:
        if b < 2 or b % 2 != 0:
            raise ValueError(f"total batch {b} must be even and >= 2")
    built = build_problem(cfg)
    settings = optimizer_settings(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list[SeedOutcome]] = {}
    rows = []
    medians = []
    for b in b_list:
        batch = BatchSpec(b // 2, b // 2)
        label = f"B_{b}"
        outcomes = _run_group(built, settings, cfg, batch=batch)
        groups[label] = outcomes
        iters = [
            iterations_to_threshold(built, o, threshold, settings["T"]) for o in outcomes
        ]
        for o, it in zip(outcomes, iters):
            rows.append((b, o.seed, it))
        medians.append((b, float(np.median(iters))))

    lines = ["B,seed,iterations_to_threshold"]
    for b, seed, it in rows:
        lines.append(f"{b},{seed},{it}")
    lines.append("")
    lines.append("B,median_iterations")
    for b, med in medians:
        lines.append(f"{b},{_fmt(med)}")
    (cfg.out / "q2_speedup.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg.plots:
        plots.save_points(
            cfg.out / "q2_iterations.png",
            [b for b, _ in medians],
            [m for _, m in medians],
            title=f"iterations to reach F <= {threshold:g}",
            xlabel="total batch B",
            ylabel="median iterations",
        )
    ok = all(o.completed for outs in groups.values() for o in outs)
    table = [{"label": f"B_{b}", "median_iterations": med} for b, med in medians]
    return SweepOutcome(ok=ok, out_dir=cfg.out, groups=groups, table=table)


def sweep_gamma(
    cfg: ExperimentConfig, gamma_list: Optional[list[float]] = None
) -> SweepOutcome:
    """Compare tracker blend weights at otherwise identical settings."""
    raw = cfg.raw
    gamma_list = gamma_list if gamma_list is not None else _get_float_list(raw, "sweep.gamma_list")
    if not gamma_list:
        raise ValueError("sweep.gamma_list is required")
    deduped = []
    for g in gamma_list:
        if g in deduped:
            warnings.warn(f"duplicate gamma {g} dropped from sweep")
        else:
            deduped.append(g)
    built = build_problem(cfg)
    settings = optimizer_settings(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list[SeedOutcome]] = {}
    table = []
    labeled_curves = []
    for g in deduped:
        label = f"gamma_{g:g}"
        outcomes = _run_group(built, settings, cfg, gamma_override=g)
        groups[label] = outcomes
        row = summarize_group(label, outcomes, built.problem)
        row["gamma"] = g
        table.append(row)
        iters, vals = mean_curve(outcomes)
        labeled_curves.append((label, iters, vals))

    _write_curves_csv(cfg.out / "gamma_curves.csv", labeled_curves)
    lines = ["gamma,final_F_mean,final_F_std"]
    for row in table:
        lines.append(f"{row['gamma']:g},{_fmt(row['final_F_mean'])},{_fmt(row['final_F_std'])}")
    (cfg.out / "gamma_ranking.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg.plots:
        plots.save_curves(
            cfg.out / "gamma_curves.png",
            [c for c in labeled_curves if c[1]],
            title="tracker blend weight sweep",
        )
    ok = all(o.completed for outs in groups.values() for o in outs)
    return SweepOutcome(ok=ok, out_dir=cfg.out, groups=groups, table=table)


def compare_optimizers(
    cfg: ExperimentConfig, kinds: Optional[list[str]] = None
) -> SweepOutcome:
    """Seed-matched runs of several optimizers at equal oracle budgets.

    All variants share the batch sizes and iteration count, hence equal
    inner-oracle budgets; seeds are matched pairwise so trajectories see
    identical data order.
    """
    raw = cfg.raw
    if kinds is None:
        v = _get(raw, "compare.optimizers")
        kinds = [tok.strip() for tok in v.split(",") if tok.strip()] if v else None
    if not kinds:
        raise ValueError("compare.optimizers is required")
    built = build_problem(cfg)
    if "pd_sox" in kinds and built.problem.d_prime != 1:
        raise ValueError("configuration error: pd-sox requires scalar inner value")
    cfg.out.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list[SeedOutcome]] = {}
    table = []
    labeled_curves = []
    for kind in kinds:
        if kind in groups:
            warnings.warn(f"duplicate optimizer {kind} dropped from comparison")
            continue
        settings = optimizer_settings(cfg, kind_override=kind)
        outcomes = _run_group(built, settings, cfg)
        groups[kind] = outcomes
        table.append(summarize_group(kind, outcomes, built.problem))
        iters, vals = mean_curve(outcomes)
        labeled_curves.append((kind, iters, vals))

    _write_curves_csv(cfg.out / "compare_curves.csv", labeled_curves)
    write_summary_csv(cfg.out / "compare_table.csv", table)
    if cfg.plots:
        plots.save_curves(
            cfg.out / "compare_curves.png",
            [c for c in labeled_curves if c[1]],
            title="optimizer comparison, equal oracle budget",
        )
    ok = all(o.completed for outs in groups.values() for o in outs)
    return SweepOutcome(ok=ok, out_dir=cfg.out, groups=groups, table=table)


TUNE_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


def tune_eta(cfg: ExperimentConfig) -> float:
    """Pick the grid step size with the lowest final loss on the first seed."""
    built = build_problem(cfg)
    settings = optimizer_settings(cfg)
    best = None
    for eta in TUNE_GRID:
        trial = dict(settings)
        trial["eta"] = eta
        if settings["kind"] == "sox_boost":
            trial["eta1"] = eta
        outcome = run_single(built, trial, cfg.batch, cfg.seeds[0], cfg.eval_every)
        final = outcome.final_F() if outcome.completed else None
        if final is not None and (best is None or final < best[1]):
            best = (eta, final)
    if best is None:
        raise RuntimeError("every step size in the tuning grid failed")
    return best[0]


def gradcheck(
    cfg: ExperimentConfig, n_points: int = 10, seed: int = 0, step: float = 1e-5
) -> tuple[bool, list[float]]:
    """Compare analytic and central-difference gradients at random points."""
    built = build_problem(cfg)
    rng = make_rng(seed)
    errors = []
    for _ in range(n_points):
        w = built.w0 + 0.3 * rng.standard_normal(built.problem.dim_w)
        errors.append(gradient_rel_error(built.problem, w, step))
    return all(e <= 1e-5 for e in errors), errors
