"""Experiment orchestration: configs, grid searches, CSV traces and plots.

A run expands an :class:`ExperimentConfig` into cells, one per
``(method, compressor, p, seed)``. Each cell writes one CSV whose header is
:data:`eclk.optim.TRACE_FIELDS`; ``summary.csv`` collects bits and
iterations to the two target suboptimalities.
"""
from dataclasses import dataclass, field, fields, replace
import csv
import logging
import math
from pathlib import Path

import numpy as np

from . import compressors as cz
from . import datasets
from .analysis import ORACLE_BUDGET, load_or_solve_oracle, lyapunov
from .comm import P_GRID
from .optim import METHODS, REFINED, ConfigurationError, TRACE_FIELDS, configure, run
from .problem import build_problem

log = logging.getLogger(__name__)

RESERVED_METHODS = ("adiana",)
T_GRID = tuple(10.0**-k for k in range(7))
STEPSIZE_POWERS = tuple(range(0, 7))
PRIMARY_TARGET = 1e-6
SECONDARY_TARGET = 1e-4

SUMMARY_FIELDS = (
    "cell",
    "method",
    "compressor",
    "p",
    "t",
    "stepsize",
    "seed",
    "status",
    "iters",
    "final_subopt",
    "iters_to_target",
    "bits_to_target",
    "iters_to_secondary",
    "bits_to_secondary",
    "message",
)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a batch of runs.

    ``p`` fixes the reference-update probability; when it is ``None`` each
    entry of ``p_factors`` gives a cell with ``p = factor * r(Q)``. ``t``
    scales the smoothness constants; ``None`` selects it per cell with
    :func:`tune_t` over ``t_grid``. ECSGD/ECGD stepsizes are tuned over
    ``2^-j / L`` for ``j`` in ``stepsize_powers``.
    """

    dataset: str = "mushrooms"
    nodes: int = 20
    lam: float = 1e-3
    methods: tuple = ("eclk",)
    compressors: tuple = ("topk",)
    k: int = 1
    s: int = 2
    p: float = None
    p_factors: tuple = (1.0,)
    t: float = None
    t_grid: tuple = T_GRID
    variant: str = REFINED
    stepsize_powers: tuple = STEPSIZE_POWERS
    seeds: tuple = (0,)
    max_iters: int = 100_000
    target: float = PRIMARY_TARGET
    secondary_target: float = SECONDARY_TARGET
    stop_at_target: bool = True
    record_lyapunov: bool = True
    oracle_budget: int = ORACLE_BUDGET
    oracle_seed: int = 0
    partition_seed: int = 0
    out: str = "results"
    cache_dir: str = None

    @property
    def oracle_dir(self):
        return Path(self.cache_dir) if self.cache_dir else Path(self.out) / "oracle"


def _parse_value(kind, text):
    text = text.strip()
    if kind is tuple:
        return tuple(_parse_scalar(v) for v in text.split(",") if v.strip())
    if text.lower() in ("none", ""):
        return None
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(float(text))
    if kind is float:
        return float(text)
    return text


def _parse_scalar(text):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _field_kinds():
    base = ExperimentConfig()
    kinds = {}
    for f in fields(ExperimentConfig):
        default = getattr(base, f.name)
        if f.name in ("p", "t"):
            kinds[f.name] = float
        elif f.name == "cache_dir":
            kinds[f.name] = str
        else:
            kinds[f.name] = type(default)
    return kinds


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, tuples are comma-separated."""
    kinds = _field_kinds()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(kinds[key], val)
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    cfg = parse_config(Path(path).read_text())
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def dump_config(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# -- problem setup -----------------------------------------------------------


@dataclass
class Setup:
    problem: object
    oracle: object


def prepare(cfg):
    """Load the dataset, build the problem and load or compute the oracle."""
    ds = datasets.load(cfg.dataset)
    problem = build_problem(ds, cfg.nodes, cfg.lam, seed=cfg.partition_seed)
    oracle = load_or_solve_oracle(problem, cfg.oracle_dir, cfg.oracle_budget, cfg.oracle_seed)
    return Setup(problem, oracle)


def compressor_for(cfg, kind, d):
    return cz.CompressorSpec(kind, d, k=min(cfg.k, d), s=cfg.s)


def p_values(cfg, spec):
    """Reference-update probabilities of the cells for ``spec``."""
    if cfg.p is not None:
        return [float(cfg.p)]
    r = cz.compression_ratio(spec)
    return [min(float(f) * r, 1.0) for f in cfg.p_factors]


def _cell_specs(cfg, method, d):
    if method == "lkatyusha":
        return [cz.CompressorSpec(cz.IDENTITY, d)]
    return [compressor_for(cfg, kind, d) for kind in cfg.compressors]


def _cell_name(method, spec, p, seed):
    p_part = "" if p is None else f"_p{p:.6g}"
    return f"{method}_{spec.label}{p_part}_seed{seed}"


# -- tuning ------------------------------------------------------------------


@dataclass
class GridPoint:
    value: float
    iters: int
    bits: int
    final_subopt: float
    status: str


@dataclass
class TuneResult:
    best: float
    points: list = field(default_factory=list)
    status: str = "ok"


def _converged_point(value, trace, target):
    it = trace.first_crossing(target, "iter")
    bits = trace.first_crossing(target, "cum_bits_node")
    sub = trace.rows[-1][1] if trace.rows else math.nan
    if trace.status != "ok":
        return GridPoint(value, None, None, sub, trace.status)
    if it is None:
        return GridPoint(value, None, None, sub, "not_converged")
    return GridPoint(value, int(it), int(bits), sub, "converged")


class StallMonitor:
    """Stop a run whose best suboptimality fails to drop tenfold within ``patience`` iterations."""

    def __init__(self, patience, factor=10.0):
        self.patience = patience
        self.factor = factor
        self.mark = None
        self.mark_k = 0

    def __call__(self, k, subopt):
        if self.mark is None or subopt <= self.mark / self.factor:
            self.mark, self.mark_k = subopt, k
            return None
        if k - self.mark_k > self.patience:
            return "stalled"
        return None


def default_patience(cap):
    return max(5000, cap // 20)


def select_t(points):
    """Fewest iterations to target; ties go to the larger ``t``."""
    ok = [pt for pt in points if pt.status == "converged"]
    if not ok:
        return None
    return min(ok, key=lambda pt: (pt.iters, -pt.value)).value


def tune_t(problem, spec, method, p, grid, P_star, target, max_iters, seed=0, variant=REFINED, prune=True):
    """Pick the constant scaling ``t`` reaching ``target`` in the fewest iterations.

    The grid is visited from the smallest ``t`` upward. With ``prune`` each
    run is capped at the best iteration count found so far, which cannot
    change the winner because ties go to the larger ``t``; capped runs are
    recorded with status ``not_converged``. Runs that stall (see
    :class:`StallMonitor`) are abandoned, since those are the unstable
    small-``t`` settings that would otherwise use the whole budget.
    """
    if not grid:
        raise ConfigurationError("t grid is empty")
    delta = cz.delta(spec)
    points = []
    cap = max_iters
    for t in sorted(set(float(v) for v in grid)):
        try:
            params = configure(problem.constants, delta, p, problem.n, variant, t=t)
        except ConfigurationError as exc:
            points.append(GridPoint(t, None, None, math.nan, f"invalid: {exc}"))
            continue
        trace = run(
            method, problem, spec, seed, cap, params=params, P_star=P_star, target=target,
            monitor=StallMonitor(default_patience(cap)),
        )
        pt = _converged_point(t, trace, target)
        points.append(pt)
        if prune and pt.status == "converged":
            cap = min(cap, pt.iters)
    best = select_t(points)
    return TuneResult(best, points, "ok" if best is not None else "failed")


def window_median(trace, frac=0.1):
    """Median suboptimality over the last ``frac`` of the recorded iterations."""
    it = trace.column("iter")
    sub = trace.column("subopt")
    if it.size == 0:
        return math.nan
    start = it[-1] - frac * (it[-1] - it[0])
    return float(np.median(sub[it >= start]))


def tune_stepsize(problem, spec, method, powers, P_star, target, max_iters, seed=0, budget_bits=None):
    """Grid search ``gamma = 2^-j / L`` for ECSGD/ECGD.

    The winner reaches ``target`` in the fewest iterations; if none does, or
    ``target`` is ``None``, the one with the smallest final-window median
    suboptimality. ``budget_bits`` caps each run at that many per-node bits
    instead of ``max_iters``.
    """
    L = problem.constants.L
    iters = max_iters
    if budget_bits is not None:
        iters = max(1, int(budget_bits // cz.message_bits(spec)))
    points = []
    for j in powers:
        gamma = 2.0 ** (-j) / L
        trace = run(method, problem, spec, seed, iters, stepsize=gamma, P_star=P_star, target=target)
        if target is None:
            pt = GridPoint(gamma, None, None, math.nan, "finished" if trace.status == "ok" else trace.status)
        else:
            pt = _converged_point(gamma, trace, target)
        if pt.status != "diverged":
            pt.final_subopt = window_median(trace)
        points.append(pt)
    conv = [pt for pt in points if pt.status == "converged"]
    if conv:
        best = min(conv, key=lambda pt: (pt.iters, -pt.value)).value
    else:
        finite = [pt for pt in points if pt.status != "diverged" and np.isfinite(pt.final_subopt)]
        if not finite:
            return TuneResult(None, points, "failed")
        best = min(finite, key=lambda pt: (pt.final_subopt, -pt.value)).value
    return TuneResult(best, points)


# -- CSV I/O -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def _fmt_cell(v):
    return v if isinstance(v, str) else _fmt(v)


def write_trace_csv(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in trace.rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_trace_csv(path):
    """Rows of a trace CSV as a dict of column arrays."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {name: np.array([]) for name in TRACE_FIELDS}
        rows = [[float(v) if v else math.nan for v in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def first_crossing(columns, target, column="cum_bits_node"):
    hit = np.flatnonzero(columns["subopt"] <= target)
    if hit.size == 0:
        return None
    return columns[column][hit[0]]


def write_summary(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([_fmt_cell(r.get(k)) for k in SUMMARY_FIELDS])
    return path


def read_summary(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# -- experiments -------------------------------------------------------------


@dataclass
class ExperimentResult:
    summary: list
    traces: dict
    tuning: dict
    out: Path

    @property
    def failed(self):
        return [r for r in self.summary if r["status"] in ("failed", "diverged")]

    @property
    def all_failed(self):
        runnable = [r for r in self.summary if r["status"] != "not_implemented"]
        return bool(runnable) and len(self.failed) == len(runnable)


def _summary_row(name, method, spec, p, t, gamma, seed, trace, cfg):
    row = dict(
        cell=name,
        method=method,
        compressor=spec.label,
        p=p,
        t=t,
        stepsize=gamma,
        seed=seed,
        status=trace.status,
        iters=trace.rows[-1][0] if trace.rows else 0,
        final_subopt=trace.rows[-1][1] if trace.rows else None,
        iters_to_target=trace.first_crossing(cfg.target, "iter"),
        bits_to_target=trace.first_crossing(cfg.target, "cum_bits_node"),
        iters_to_secondary=trace.first_crossing(cfg.secondary_target, "iter"),
        bits_to_secondary=trace.first_crossing(cfg.secondary_target, "cum_bits_node"),
        message=trace.message,
    )
    return row


def _failed_row(name, method, label, seed, status, message):
    return dict(cell=name, method=method, compressor=label, seed=seed, status=status, message=message)


def run_experiment(cfg, setup=None):
    """Run every cell of ``cfg`` and write traces plus ``summary.csv`` to ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = setup or prepare(cfg)
    problem, oracle = setup.problem, setup.oracle
    (out / "config.txt").write_text(dump_config(cfg))
    summary, traces, tuning = [], {}, {}
    for method in cfg.methods:
        if method in RESERVED_METHODS:
            summary.append(_failed_row(method, method, "", "", "not_implemented", "baseline slot reserved"))
            continue
        if method not in METHODS:
            summary.append(_failed_row(method, method, "", "", "failed", f"unknown method {method!r}"))
            continue
        for spec in _cell_specs(cfg, method, problem.d):
            ps = [None] if method in ("ecsgd", "ecgd") else p_values(cfg, spec)
            for p in ps:
                try:
                    cells = _run_cells(cfg, problem, oracle, method, spec, p, tuning)
                except (ConfigurationError, FloatingPointError, ValueError) as exc:
                    log.error("cell %s %s p=%s failed: %s", method, spec.label, p, exc)
                    for seed in cfg.seeds:
                        name = _cell_name(method, spec, p, seed)
                        summary.append(_failed_row(name, method, spec.label, seed, "failed", str(exc)))
                    continue
                for name, (trace, row) in cells.items():
                    write_trace_csv(trace, out / f"{name}.csv")
                    traces[name] = trace
                    summary.append(row)
    write_summary(summary, out / "summary.csv")
    return ExperimentResult(summary, traces, tuning, out)


def _run_cells(cfg, problem, oracle, method, spec, p, tuning):
    seed0 = cfg.seeds[0] if cfg.seeds else 0
    t, gamma, params = None, None, None
    if method in ("ecsgd", "ecgd"):
        res = tune_stepsize(
            problem, spec, method, cfg.stepsize_powers, oracle.P, cfg.target, cfg.max_iters, seed0
        )
        tuning[(method, spec.label, p)] = res
        if res.best is None:
            raise ConfigurationError("no stepsize in the grid gave a finite run")
        gamma = res.best
    else:
        t = cfg.t
        if t is None:
            res = tune_t(
                problem, spec, method, p, cfg.t_grid, oracle.P, cfg.target, cfg.max_iters, seed0, cfg.variant
            )
            tuning[(method, spec.label, p)] = res
            t = res.best if res.best is not None else max(cfg.t_grid)
        delta = cz.delta(spec)
        params = configure(problem.constants, delta, p, problem.n, cfg.variant, t=t)
    lyap = None
    if params is not None and cfg.record_lyapunov:
        def lyap(s):
            return lyapunov(s, params, problem, oracle.x, oracle.P).total
    cells = {}
    for seed in cfg.seeds:
        trace = run(
            method,
            problem,
            spec,
            seed,
            cfg.max_iters,
            params=params,
            stepsize=gamma,
            P_star=oracle.P,
            target=cfg.target if cfg.stop_at_target else None,
            lyapunov=lyap,
        )
        name = _cell_name(method, spec, p, seed)
        cells[name] = (trace, _summary_row(name, method, spec, p, t, gamma, seed, trace, cfg))
    return cells


def sweep_p(cfg, factors=P_GRID, setup=None):
    """:func:`run_experiment` over ``p = factor * r(Q)``."""
    return run_experiment(replace(cfg, p=None, p_factors=tuple(factors)), setup)


# -- plots -------------------------------------------------------------------

AXES = {"iter": "iterations", "cum_bits_node": "bits per node"}


def emit_plots(traces, out_dir, axes=("iter", "cum_bits_node"), title=None, stem="subopt"):
    """Log-scale suboptimality against each of ``axes``, one series per trace.

    ``traces`` maps labels to :class:`~eclk.optim.Trace` objects or to column
    dicts from :func:`read_trace_csv`. Empty traces are skipped with a
    warning. Returns the written SVG paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {}
    for label, tr in traces.items():
        cols = {n: tr.column(n) for n in TRACE_FIELDS} if hasattr(tr, "column") else tr
        sub = np.asarray(cols["subopt"], dtype=float)
        if sub.size == 0:
            log.warning("skipping empty trace %s", label)
            continue
        series[label] = cols
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if not series:
        return paths
    for axis in axes:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for label, cols in series.items():
            sub = np.asarray(cols["subopt"], dtype=float)
            # clip at the float resolution so exact hits still show on a log axis
            ax.semilogy(cols[axis], np.maximum(sub, 1e-16), label=label)
        ax.set_xlabel(AXES.get(axis, axis))
        ax.set_ylabel("P(x) - P*")
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / f"{stem}_vs_{axis}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_directory(result_dir, out_dir=None):
    """Plot every trace CSV in ``result_dir`` (summary and config files excluded)."""
    result_dir = Path(result_dir)
    traces = {}
    for path in sorted(result_dir.glob("*.csv")):
        if path.name == "summary.csv":
            continue
        traces[path.stem] = read_trace_csv(path)
    return emit_plots(traces, out_dir or result_dir)
