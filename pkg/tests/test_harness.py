import numpy as np
import pytest

from fccopt.core import RunRecord
from fccopt.harness import (
    ExperimentConfig,
    SeedOutcome,
    build_problem,
    compare_optimizers,
    gradcheck,
    iterations_to_threshold,
    optimizer_settings,
    parse_config_text,
    run_experiment,
    run_single,
    summarize_group,
    sweep_gamma,
    sweep_q1,
    sweep_q2,
    tune_eta,
    write_run_csv,
    write_summary_csv,
)
from fccopt import cli

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

MICRO_PNORM = """\
# tiny smoke configuration
objective.kind = pnorm_push
objective.p = 2
data.source = synthetic_ranking
data.n_pos = 6
data.n_neg = 6
data.dim = 2
data.noise = 0.4
data.seed = 3
optimizer.kind = sox
optimizer.eta = 0.05
optimizer.T = 12
batch.b1 = 2
batch.b2 = 2
run.seeds = 1,2
run.eval_every = 5
"""


# Non-separable data with an unclamped loss and a huge step: diverges and
# aborts within a few iterations on every seed.
ABORT_PNORM = (
    MICRO_PNORM.replace("optimizer.eta = 0.05", "optimizer.eta = 1e12")
    .replace("data.noise = 0.4", "data.separation = 0.0\ndata.noise = 1.5")
    + "objective.loss = squared_hinge\n"
)


def micro_cfg(tmp_path, text=MICRO_PNORM, plots=False, **overrides):
    raw = parse_config_text(text)
    cfg = ExperimentConfig.from_raw(raw, out=str(tmp_path / "out"), **overrides)
    cfg.plots = plots
    return cfg


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_happy_path():
    raw = parse_config_text("run.seeds = 1, 2\n# note\n\nbatch.b1 = 4\n")
    assert raw == {"run.seeds": "1, 2", "batch.b1": "4"}


def test_parse_config_errors():
    with pytest.raises(ValueError, match="line 1: expected"):
        parse_config_text("just words\n")
    with pytest.raises(ValueError, match="lacks a section prefix"):
        parse_config_text("seeds = 1\n")
    with pytest.raises(ValueError, match="line 2: duplicate key"):
        parse_config_text("batch.b1 = 4\nbatch.b1 = 8\n")
    with pytest.raises(ValueError, match="unknown config key 'batch.b9'"):
        parse_config_text("batch.b9 = 4\n")


def test_config_from_raw_defaults_and_overrides(tmp_path):
    raw = parse_config_text(MICRO_PNORM)
    cfg = ExperimentConfig.from_raw(raw)
    assert cfg.seeds == [1, 2]
    assert cfg.eval_every == 5
    assert cfg.plots is True
    assert cfg.batch.b1 == 2 and cfg.batch.b2 == 2

    cfg2 = ExperimentConfig.from_raw(raw, seed=9, eval_every=2, budget=100)
    assert cfg2.seeds == [9]
    assert cfg2.eval_every == 2
    assert optimizer_settings(cfg2)["T"] == 100 // 4
    cfg3 = ExperimentConfig.from_raw(raw, budget=1)
    assert optimizer_settings(cfg3)["T"] == 1


def test_config_requires_seeds_and_batch():
    with pytest.raises(ValueError, match="run.seeds"):
        ExperimentConfig.from_raw(parse_config_text("batch.b1 = 2\nbatch.b2 = 2\n"))
    with pytest.raises(ValueError, match="batch.b1 and batch.b2"):
        ExperimentConfig.from_raw(parse_config_text("run.seeds = 1\n"))


def test_optimizer_settings_decay_parsing(tmp_path):
    text = MICRO_PNORM + "optimizer.lr_decay = 0.5:0.1, 0.75:0.1\n"
    cfg = micro_cfg(tmp_path, text)
    assert optimizer_settings(cfg)["lr_decay"] == [(0.5, 0.1), (0.75, 0.1)]

    text = MICRO_PNORM + "optimizer.lr_decay = none\n"
    assert optimizer_settings(micro_cfg(tmp_path, text))["lr_decay"] == []

    text = MICRO_PNORM + "optimizer.lr_decay = 0.5\n"
    with pytest.raises(ValueError, match="fraction:multiplier"):
        optimizer_settings(micro_cfg(tmp_path, text))


def test_optimizer_settings_unknown_kind(tmp_path):
    cfg = micro_cfg(tmp_path, MICRO_PNORM.replace("optimizer.kind = sox",
                                                  "optimizer.kind = adam"))
    with pytest.raises(ValueError, match="unknown optimizer.kind"):
        optimizer_settings(cfg)


# ---------------------------------------------------------------------------
# problem construction


def test_build_problem_each_kind(tmp_path):
    ap_text = MICRO_PNORM.replace("objective.kind = pnorm_push",
                                  "objective.kind = ap").replace("objective.p = 2\n", "")
    built = build_problem(micro_cfg(tmp_path, ap_text))
    assert built.problem.meta["kind"] == "ap"
    assert built.metric_fn is not None and built.metric_name == "train_ap"
    assert built.w0.shape == (2,)

    built = build_problem(micro_cfg(tmp_path))
    assert built.problem.meta["kind"] == "pnorm_push"
    assert built.metric_fn is None

    nca_text = """\
objective.kind = nca
objective.rank = 2
data.source = synthetic_clusters
data.n_per_class = 3
data.n_classes = 2
data.dim = 3
data.seed = 5
batch.b1 = 2
batch.b2 = 2
run.seeds = 1
"""
    built = build_problem(micro_cfg(tmp_path, nca_text))
    assert built.problem.meta["kind"] == "nca"
    assert np.array_equal(built.w0, np.eye(2, 3).reshape(-1))

    ln_text = """\
objective.kind = listnet
data.source = synthetic_queries
data.n_queries = 3
data.n_items = 4
data.dim = 2
data.seed = 6
batch.b1 = 2
batch.b2 = 2
run.seeds = 1
"""
    built = build_problem(micro_cfg(tmp_path, ln_text))
    assert built.problem.meta["kind"] == "listnet"


def test_build_problem_from_sparse_file(tmp_path):
    lines = []
    rng = np.random.default_rng(0)
    for k in range(20):
        label = 1 if k % 2 == 0 else -1
        x = rng.standard_normal(2)
        lines.append(f"{label} 1:{float(x[0])!r} 2:{float(x[1])!r}")
    data_path = tmp_path / "toy.txt"
    data_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    text = f"""\
objective.kind = pnorm_push
objective.p = 2
data.source = libsvm
data.path = {data_path}
data.test_fraction = 0.25
data.split_seed = 1
optimizer.eta = 0.05
optimizer.T = 10
batch.b1 = 2
batch.b2 = 2
run.seeds = 1
"""
    built = build_problem(micro_cfg(tmp_path, text))
    assert built.problem.meta["kind"] == "pnorm_push"
    # Held-out rows power the metric when both classes survive the split.
    if built.metric_fn is not None:
        assert built.metric_name == "test_F"
        assert np.isfinite(built.metric_fn(np.zeros(2)))


def test_build_problem_errors(tmp_path):
    with pytest.raises(ValueError, match="objective.kind is required"):
        build_problem(micro_cfg(tmp_path, MICRO_PNORM.replace(
            "objective.kind = pnorm_push\n", "")))
    with pytest.raises(ValueError, match="unknown objective.kind"):
        build_problem(micro_cfg(tmp_path, MICRO_PNORM.replace(
            "objective.kind = pnorm_push", "objective.kind = hinge")))
    with pytest.raises(ValueError, match="does not produce query lists"):
        build_problem(micro_cfg(tmp_path, MICRO_PNORM.replace(
            "objective.kind = pnorm_push", "objective.kind = listnet")))


# ---------------------------------------------------------------------------
# running and reporting


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_run_single_captures_aborts(tmp_path):
    cfg = micro_cfg(tmp_path, ABORT_PNORM)
    built = build_problem(cfg)
    outcome = run_single(built, optimizer_settings(cfg), cfg.batch, 1, cfg.eval_every)
    assert not outcome.completed
    assert outcome.abort is not None
    assert outcome.final_F() is None or np.isfinite(outcome.final_F())


def test_write_run_csv_layout(tmp_path):
    records = [
        RunRecord(1, 0.5, 4, 0, None, None, None, 0.123),
        RunRecord(2, 1.0, 8, 3, -0.25, 1.5, 0.75, 0.456),
    ]
    path = tmp_path / "run.csv"
    write_run_csv(path, records, abort=(3, "non-finite parameter"))
    assert path.read_text(encoding="utf-8") == (
        "iteration,epoch_equiv,inner_oracle_count,decay_touches,"
        "train_F,grad_norm,metric,wallclock\n"
        "1,0.5,4,0,,,,\n"
        "2,1.0,8,3,-0.25,1.5,0.75,\n"
        "# aborted at iteration 3: non-finite parameter\n"
    )


def test_summary_csv_blanks_missing_fields(tmp_path):
    outcome = SeedOutcome(seed=1, records=[], abort=(5, "x"))
    cfg = micro_cfg(tmp_path)
    built = build_problem(cfg)
    row = summarize_group("sox", [outcome], built.problem)
    assert row["n_seeds"] == 1 and row["n_aborted"] == 1
    assert row["final_F_mean"] is None
    path = tmp_path / "summary.csv"
    write_summary_csv(path, [row])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("label,n_seeds,n_aborted")
    assert lines[1] == "sox,1,1,,,,,,"


def test_run_experiment_writes_reports(tmp_path):
    cfg = micro_cfg(tmp_path, plots=True)
    outcome = run_experiment(cfg)
    assert outcome.ok
    out = cfg.out
    for seed in (1, 2):
        assert (out / f"run_seed{seed}.csv").exists()
    assert (out / "summary.csv").exists()
    png = out / "train_loss.png"
    assert png.read_bytes()[:8] == PNG_MAGIC
    summary_lines = (out / "summary.csv").read_text().splitlines()
    assert len(summary_lines) == 2
    assert summary_lines[1].split(",")[0] == "sox"


def test_rerun_is_byte_identical(tmp_path):
    cfg_a = micro_cfg(tmp_path / "a")
    cfg_b = micro_cfg(tmp_path / "b")
    run_experiment(cfg_a)
    run_experiment(cfg_b)
    for name in ("run_seed1.csv", "run_seed2.csv", "summary.csv"):
        assert (cfg_a.out / name).read_bytes() == (cfg_b.out / name).read_bytes()


def test_thread_env_controls_the_pool(monkeypatch, tmp_path):
    from fccopt.harness import _thread_count

    monkeypatch.setenv("FCCO_THREADS", "3")
    assert _thread_count() == 3
    monkeypatch.setenv("FCCO_THREADS", "0")
    assert _thread_count() == 1
    monkeypatch.setenv("FCCO_THREADS", "many")
    with pytest.raises(ValueError, match="FCCO_THREADS"):
        _thread_count()

    monkeypatch.setenv("FCCO_THREADS", "4")
    cfg = micro_cfg(tmp_path)
    cfg.seeds = [5, 3, 8]
    outcome = run_experiment(cfg)
    assert [o.seed for o in outcome.outcomes] == [5, 3, 8]
    for seed in (5, 3, 8):
        assert (cfg.out / f"run_seed{seed}.csv").exists()


def test_threaded_runs_match_serial_output(monkeypatch, tmp_path):
    serial = micro_cfg(tmp_path / "serial")
    run_experiment(serial)
    monkeypatch.setenv("FCCO_THREADS", "2")
    threaded = micro_cfg(tmp_path / "threaded")
    run_experiment(threaded)
    for name in ("run_seed1.csv", "run_seed2.csv", "summary.csv"):
        assert (serial.out / name).read_bytes() == (threaded.out / name).read_bytes()


# ---------------------------------------------------------------------------
# sweeps


def test_iterations_to_threshold_cases(tmp_path):
    cfg = micro_cfg(tmp_path)
    built = build_problem(cfg)
    recs = [
        RunRecord(5, 0.1, 20, 0, 0.5, 0.1, None, 0.0),
        RunRecord(10, 0.2, 40, 0, 0.2, 0.1, None, 0.0),
    ]
    outcome = SeedOutcome(seed=1, records=recs)
    assert iterations_to_threshold(built, outcome, 2.0, T=12) == 0  # already below
    assert iterations_to_threshold(built, outcome, 0.9, T=12) == 5
    assert iterations_to_threshold(built, outcome, 0.3, T=12) == 10
    assert iterations_to_threshold(built, outcome, 0.1, T=12) == 13  # never


def test_sweep_q1_outputs(tmp_path):
    cfg = micro_cfg(tmp_path, plots=True)
    outcome = sweep_q1(cfg, b_total=6, b1_list=[2, 3])
    assert outcome.ok
    assert set(outcome.groups) == {"b1_2", "b1_3"}
    for row in outcome.table:
        assert row["b2"] == 6 - row["b1"]
        assert "rank" in row
    assert (cfg.out / "q1_curves.csv").exists()
    ranking = (cfg.out / "q1_ranking.csv").read_text().splitlines()
    assert ranking[0] == "b1,b2,final_F_mean,final_F_std,rank"
    assert len(ranking) == 3
    assert (cfg.out / "q1_curves.png").read_bytes()[:8] == PNG_MAGIC


def test_sweep_q1_validation(tmp_path):
    cfg = micro_cfg(tmp_path)
    with pytest.raises(ValueError, match="sweep.b_total"):
        sweep_q1(cfg)
    with pytest.raises(ValueError, match="must lie in"):
        sweep_q1(cfg, b_total=4, b1_list=[4])


def test_sweep_q2_outputs(tmp_path):
    cfg = micro_cfg(tmp_path, plots=True)
    outcome = sweep_q2(cfg, b_list=[4, 8], threshold=0.9)
    assert outcome.ok
    text = (cfg.out / "q2_speedup.csv").read_text()
    head, tail = text.split("\n\n")
    assert head.splitlines()[0] == "B,seed,iterations_to_threshold"
    assert len(head.splitlines()) == 1 + 2 * 2  # two B values x two seeds
    assert tail.splitlines()[0] == "B,median_iterations"
    assert (cfg.out / "q2_iterations.png").read_bytes()[:8] == PNG_MAGIC


def test_sweep_q2_validation(tmp_path):
    cfg = micro_cfg(tmp_path)
    with pytest.raises(ValueError, match="threshold"):
        sweep_q2(cfg, b_list=[4])
    with pytest.raises(ValueError, match="even"):
        sweep_q2(cfg, b_list=[3], threshold=0.5)
    with pytest.raises(ValueError, match="sweep.b_list"):
        sweep_q2(cfg, threshold=0.5)


def test_sweep_gamma_outputs_and_dedupe(tmp_path):
    cfg = micro_cfg(tmp_path)
    with pytest.warns(UserWarning, match="duplicate gamma"):
        outcome = sweep_gamma(cfg, gamma_list=[0.5, 1.0, 0.5])
    assert set(outcome.groups) == {"gamma_0.5", "gamma_1"}
    lines = (cfg.out / "gamma_ranking.csv").read_text().splitlines()
    assert lines[0] == "gamma,final_F_mean,final_F_std"
    assert len(lines) == 3
    assert (cfg.out / "gamma_curves.csv").exists()


def test_compare_optimizers_equal_budgets(tmp_path):
    cfg = micro_cfg(tmp_path)
    outcome = compare_optimizers(cfg, kinds=["sox", "soap", "bsgd", "moap"])
    assert outcome.ok
    assert list(outcome.groups) == ["sox", "soap", "bsgd", "moap"]
    # Equal oracle budget at every iteration across variants.
    per_seed = [outcome.groups[k][0].records for k in outcome.groups]
    for recs in per_seed[1:]:
        assert [r.inner_oracle_count for r in recs] == [
            r.inner_oracle_count for r in per_seed[0]
        ]
    assert (cfg.out / "compare_curves.csv").exists()
    table = (cfg.out / "compare_table.csv").read_text().splitlines()
    assert len(table) == 5


def test_compare_rejects_pd_on_two_dim_inner_values(tmp_path):
    ap_text = MICRO_PNORM.replace("objective.kind = pnorm_push",
                                  "objective.kind = ap").replace("objective.p = 2\n", "")
    cfg = micro_cfg(tmp_path, ap_text)
    with pytest.raises(ValueError, match="configuration error: pd-sox requires"):
        compare_optimizers(cfg, kinds=["sox", "pd_sox"])


def test_compare_runs_pd_on_scalar_problems(tmp_path):
    cfg = micro_cfg(tmp_path)
    outcome = compare_optimizers(cfg, kinds=["sox", "pd_sox"])
    assert outcome.ok
    row = next(r for r in outcome.table if r["label"] == "pd_sox")
    assert row["avg_iterate_F_mean"] is not None


def test_tune_eta_returns_a_grid_member(tmp_path):
    from fccopt.harness import TUNE_GRID

    cfg = micro_cfg(tmp_path)
    assert tune_eta(cfg) in TUNE_GRID


def test_gradcheck_passes_on_micro_config(tmp_path):
    ok, errors = gradcheck(micro_cfg(tmp_path), n_points=3)
    assert ok
    assert len(errors) == 3


# ---------------------------------------------------------------------------
# command line


def write_config(tmp_path, text=MICRO_PNORM):
    path = tmp_path / "exp.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def test_cli_run(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    code = cli.main([
        "run", str(cfg_path), "--out", str(tmp_path / "out"), "--no-plots",
    ])
    assert code == 0
    assert (tmp_path / "out" / "summary.csv").exists()
    assert not (tmp_path / "out" / "train_loss.png").exists()
    out = capsys.readouterr().out
    assert "wrote" in out and "final_F_mean" in out


def test_cli_run_single_seed_and_tune(tmp_path):
    cfg_path = write_config(tmp_path)
    code = cli.main([
        "run", str(cfg_path), "--seed", "7", "--out", str(tmp_path / "out"),
        "--no-plots", "--tune",
    ])
    assert code == 0
    assert (tmp_path / "out" / "run_seed7.csv").exists()


def test_cli_gradcheck(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert cli.main(["gradcheck", str(cfg_path), "--points", "3"]) == 0
    assert "gradcheck passed" in capsys.readouterr().out


def test_cli_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense.key = 1\n", encoding="utf-8")
    assert cli.main(["run", str(bad), "--no-plots"]) == 2
    assert "error:" in capsys.readouterr().err

    missing = tmp_path / "nope.cfg"
    assert cli.main(["run", str(missing), "--no-plots"]) == 2

    cfg_path = write_config(tmp_path)
    assert cli.main([
        "sweep-q2", str(cfg_path), "--out", str(tmp_path / "o2"), "--no-plots",
    ]) == 2  # threshold and b_list missing


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_cli_aborted_runs_exit_one(tmp_path):
    cfg_path = write_config(tmp_path, ABORT_PNORM)
    code = cli.main(["run", str(cfg_path), "--out", str(tmp_path / "out"), "--no-plots"])
    assert code == 1
    text = (tmp_path / "out" / "run_seed1.csv").read_text()
    assert "# aborted at iteration" in text


def test_cli_sweeps_and_compare(tmp_path):
    text = MICRO_PNORM + (
        "sweep.b_total = 6\nsweep.b1_list = 2,3\n"
        "sweep.b_list = 4,8\nrun.threshold = 0.9\n"
        "sweep.gamma_list = 0.5,1.0\ncompare.optimizers = sox,bsgd\n"
    )
    cfg_path = write_config(tmp_path, text)
    assert cli.main(["sweep-q1", str(cfg_path), "--out", str(tmp_path / "s1"),
                     "--no-plots"]) == 0
    assert (tmp_path / "s1" / "q1_ranking.csv").exists()
    assert cli.main(["sweep-q2", str(cfg_path), "--out", str(tmp_path / "s2"),
                     "--no-plots"]) == 0
    assert (tmp_path / "s2" / "q2_speedup.csv").exists()
    assert cli.main(["sweep-gamma", str(cfg_path), "--out", str(tmp_path / "s3"),
                     "--no-plots"]) == 0
    assert (tmp_path / "s3" / "gamma_ranking.csv").exists()
    assert cli.main(["compare", str(cfg_path), "--out", str(tmp_path / "s4"),
                     "--no-plots"]) == 0
    assert (tmp_path / "s4" / "compare_table.csv").exists()


def test_cli_budget_override_shortens_runs(tmp_path):
    cfg_path = write_config(tmp_path)
    assert cli.main([
        "run", str(cfg_path), "--budget", "8", "--out", str(tmp_path / "out"),
        "--no-plots",
    ]) == 0
    lines = (tmp_path / "out" / "run_seed1.csv").read_text().splitlines()
    # budget // (b1*b2) = 8 // 4 = 2 iterations plus the header.
    assert len(lines) == 3
