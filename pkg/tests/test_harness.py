import logging

import numpy as np
import pytest

from eclk.harness import (
    ExperimentConfig,
    GridPoint,
    T_GRID,
    dump_config,
    emit_plots,
    first_crossing,
    load_config,
    parse_config,
    plot_directory,
    read_summary,
    read_trace_csv,
    run_experiment,
    select_t,
    sweep_p,
    tune_t,
    write_trace_csv,
)
from eclk import compressors as cz
from eclk.optim import REFINED, TRACE_FIELDS, configure, run
from eclk.analysis import solve_oracle


def tiny_config(path, out, **kw):
    base = dict(dataset=str(path), nodes=4, lam=1e-2, oracle_budget=3000, max_iters=3000,
                t_grid=(1.0, 0.1, 0.01), out=str(out), record_lyapunov=False)
    base.update(kw)
    return ExperimentConfig(**base)


# -- config ------------------------------------------------------------------


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.dataset, cfg.nodes, cfg.lam) == ("mushrooms", 20, 1e-3)
    assert cfg.t_grid == T_GRID == tuple(10.0**-k for k in range(7))
    assert cfg.target == 1e-6 and cfg.seeds == (0,)


def test_parse_config_values():
    cfg = parse_config("""
        # comment line
        dataset = a5a
        nodes = 8          # trailing comment
        methods = eclk, lkatyusha
        seeds = 0,1,2
        p = 0.01
        stop-at-target = no
    """)
    assert cfg.dataset == "a5a" and cfg.nodes == 8
    assert cfg.methods == ("eclk", "lkatyusha") and cfg.seeds == (0, 1, 2)
    assert cfg.p == 0.01 and cfg.stop_at_target is False


@pytest.mark.parametrize("text", ["bogus = 1", "nodes 3", "stop_at_target = maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(dataset="x", methods=("eclk", "ecsgd"), p=0.125, t_grid=(1.0, 1e-3), seeds=(3, 4))
    path = tmp_path / "c.txt"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert load_config(path, nodes=5, lam=None).nodes == 5


# -- tuning ------------------------------------------------------------------


def test_select_t():
    pts = [GridPoint(1.0, 50, 10, 1e-7, "converged"), GridPoint(0.1, 40, 8, 1e-7, "converged"),
           GridPoint(0.01, None, None, 1.0, "not_converged")]
    assert select_t(pts) == 0.1
    pts.append(GridPoint(0.5, 40, 8, 1e-7, "converged"))
    assert select_t(pts) == 0.5
    assert select_t(pts[2:3]) is None


@pytest.fixture(scope="module")
def tiny_setup(small_problem):
    return small_problem, solve_oracle(small_problem, 3000)


def test_tune_t_single_point(tiny_setup):
    problem, oracle = tiny_setup
    spec = cz.CompressorSpec(cz.TOPK, problem.d, k=2)
    res = tune_t(problem, spec, "eclk", 0.3, (1.0,), oracle.P, 1e-6, 5000)
    assert res.best == 1.0 and len(res.points) == 1


def test_tune_t_prefers_fewer_iterations(tiny_setup):
    problem, oracle = tiny_setup
    spec = cz.CompressorSpec(cz.TOPK, problem.d, k=2)
    res = tune_t(problem, spec, "eclk", 0.3, (1.0, 0.1), oracle.P, 1e-6, 5000, prune=False)
    iters = {pt.value: pt.iters for pt in res.points}
    assert iters[0.1] < iters[1.0]
    assert res.best == 0.1


# -- experiments -------------------------------------------------------------


@pytest.fixture
def experiment(tiny_file, tmp_path):
    cfg = tiny_config(tiny_file, tmp_path / "out", methods=("eclk", "lkatyusha", "adiana"),
                      compressors=("topk", "dither"), seeds=(0, 1), stop_at_target=False, max_iters=1500)
    return cfg, run_experiment(cfg)


def test_experiment_outputs(experiment):
    cfg, res = experiment
    out = res.out
    assert (out / "config.txt").read_text() == dump_config(cfg)
    rows = read_summary(out / "summary.csv")
    assert len(rows) == len(res.summary) == 2 * 2 + 2 + 1
    reserved = [r for r in rows if r["method"] == "adiana"]
    assert reserved[0]["status"] == "not_implemented"
    for r in rows:
        if r["method"] == "adiana":
            continue
        path = out / f"{r['cell']}.csv"
        assert path.read_text().splitlines()[0] == ",".join(TRACE_FIELDS)
        cols = read_trace_csv(path)
        assert np.all(cols["subopt"] >= -1e-10)
        assert np.all(np.diff(cols["cum_bits_node"]) >= 0)
        expected = first_crossing(cols, cfg.target)
        got = r["bits_to_target"]
        assert (got == "" and expected is None) or float(got) == expected
        assert r["status"] == "ok" and r["iters_to_target"] != ""


def test_experiment_is_reproducible(experiment, tmp_path):
    cfg, res = experiment
    again = run_experiment(ExperimentConfig(**{**cfg.__dict__, "out": str(tmp_path / "again")}))
    for path in sorted(res.out.glob("*.csv")):
        assert path.read_bytes() == (again.out / path.name).read_bytes()


def test_unknown_method_is_recorded(tiny_file, tmp_path):
    res = run_experiment(tiny_config(tiny_file, tmp_path / "o", methods=("nope",)))
    assert res.summary[0]["status"] == "failed" and res.all_failed


def test_stepsize_baselines_run(tiny_file, tmp_path):
    res = run_experiment(tiny_config(tiny_file, tmp_path / "o", methods=("ecsgd", "ecgd"),
                                     stepsize_powers=(0, 1), max_iters=300, stop_at_target=False))
    assert {r["method"] for r in res.summary} == {"ecsgd", "ecgd"}
    assert all(r["status"] == "ok" and r["stepsize"] > 0 for r in res.summary)


def test_sweep_p_cells(tiny_file, tmp_path):
    res = sweep_p(tiny_config(tiny_file, tmp_path / "o", t=1.0, max_iters=200))
    r = cz.compression_ratio(cz.CompressorSpec(cz.TOPK, 6))
    assert sorted(row["p"] for row in res.summary) == pytest.approx(sorted(min(f * r, 1) for f in (3, 1, 1 / 3, 1 / 9)))


# -- CSV and plots -----------------------------------------------------------


def short_trace(problem, iters):
    spec = cz.CompressorSpec(cz.TOPK, problem.d, k=1)
    params = configure(problem.constants, cz.delta(spec), 0.2, problem.n, REFINED)
    return run("eclk", problem, spec, 0, iters, params=params, P_star=0.0)


def test_trace_csv_roundtrip(small_problem, tmp_path):
    tr = short_trace(small_problem, 40)
    cols = read_trace_csv(write_trace_csv(tr, tmp_path / "t.csv"))
    for name in TRACE_FIELDS:
        a = np.asarray(tr.column(name), dtype=float)
        assert np.array_equal(cols[name], a, equal_nan=True)


def test_emit_plots(small_problem, tmp_path, caplog):
    tr = short_trace(small_problem, 30)
    empty = {name: np.array([]) for name in TRACE_FIELDS}
    with caplog.at_level(logging.WARNING):
        paths = emit_plots({"eclk": tr, "empty": empty}, tmp_path / "plots", title="demo")
    assert "empty" in caplog.text
    assert [p.name for p in paths] == ["subopt_vs_iter.svg", "subopt_vs_cum_bits_node.svg"]
    text = paths[0].read_text()
    assert text.startswith("<?xml") and "eclk" in text and "empty" not in text.split("</metadata>")[-1]
    assert emit_plots({"empty": empty}, tmp_path / "none") == []


def test_plot_directory(experiment):
    _, res = experiment
    paths = plot_directory(res.out)
    assert len(paths) == 2 and all(p.exists() for p in paths)
