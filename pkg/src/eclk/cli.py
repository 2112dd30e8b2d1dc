"""Command line entry point: ``eclk {oracle,run,sweep-p,tune-t,plot}``."""
import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

from . import compressors as cz
from .comm import P_GRID
from .harness import (
    ExperimentConfig,
    load_config,
    plot_directory,
    prepare,
    run_experiment,
    sweep_p,
    tune_t,
    p_values,
    compressor_for,
)
from .optim import METHODS


def _csv_list(conv):
    def parse(text):
        return tuple(conv(v) for v in text.split(",") if v.strip())

    return parse


def _seeds(text):
    """``0,1,2`` or a range ``0-9``."""
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return _csv_list(int)(text)


def _add_common(sp):
    sp.add_argument("--config", help="flat key = value config file; flags override it")
    sp.add_argument("--dataset", help="LIBSVM file path or name under the data directory")
    sp.add_argument("--nodes", type=int, help="number of simulated nodes (default 20)")
    sp.add_argument("--lambda", dest="lam", type=float, help="l2 weight of the loss (default 1e-3)")
    sp.add_argument("--partition-seed", type=int, help="seed of the sample-to-node shuffle")
    sp.add_argument("--oracle-budget", type=int, help="oracle iterations (default 1e5)")
    sp.add_argument("--cache-dir", help="oracle cache directory (default <out>/oracle)")
    sp.add_argument("--out", help="output directory (default results)")
    sp.add_argument("-v", "--verbose", action="store_true")


def _add_run(sp):
    sp.add_argument("--method", type=_csv_list(str), help=f"comma list from {', '.join(METHODS)}")
    sp.add_argument("--compressor", type=_csv_list(str), help=f"comma list from {', '.join(cz.KINDS)}")
    sp.add_argument("--k", type=int, help="kept coordinates for topk/randk (default 1)")
    sp.add_argument("--s", type=int, help="dithering levels (default 2)")
    sp.add_argument("--p", type=float, help="fixed reference-update probability (default r(Q))")
    sp.add_argument("--p-factors", type=_csv_list(float), help="cells with p = factor * r(Q)")
    sp.add_argument("--t", type=float, help="constant scaling t; omitted means tune over the grid")
    sp.add_argument("--t-grid", type=_csv_list(float), help="grid for t (default 1,1e-1,...,1e-6)")
    sp.add_argument("--variant", choices=("general", "refined"))
    sp.add_argument("--seeds", type=_seeds, help="comma list or range like 0-9")
    sp.add_argument("--max-iters", type=int, help="iteration budget per run")
    sp.add_argument("--target", type=float, help="target suboptimality (default 1e-6)")
    sp.add_argument("--no-stop", dest="stop_at_target", action="store_false", default=None,
                    help="keep iterating after the target is reached")


def build_parser():
    parser = argparse.ArgumentParser(prog="eclk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("oracle", help="compute or load the reference solution")
    _add_common(sp)
    for name, helptext in (
        ("run", "run the configured cells"),
        ("sweep-p", "run cells over p = t * r(Q) for t in 3, 1, 1/3, 1/9"),
        ("tune-t", "report the best constant scaling t per cell"),
    ):
        sp = sub.add_parser(name, help=helptext)
        _add_common(sp)
        _add_run(sp)
    sp = sub.add_parser("plot", help="plot every trace CSV in a result directory")
    sp.add_argument("results", help="directory written by run or sweep-p")
    sp.add_argument("--out", help="plot directory (default: the result directory)")
    return parser


_KEYS = {
    "dataset": "dataset",
    "nodes": "nodes",
    "lam": "lam",
    "partition_seed": "partition_seed",
    "oracle_budget": "oracle_budget",
    "cache_dir": "cache_dir",
    "out": "out",
    "method": "methods",
    "compressor": "compressors",
    "k": "k",
    "s": "s",
    "p": "p",
    "p_factors": "p_factors",
    "t": "t",
    "t_grid": "t_grid",
    "variant": "variant",
    "seeds": "seeds",
    "max_iters": "max_iters",
    "target": "target",
    "stop_at_target": "stop_at_target",
}


def config_from_args(args):
    overrides = {dst: getattr(args, src) for src, dst in _KEYS.items() if getattr(args, src, None) is not None}
    if args.config:
        return load_config(args.config, **overrides)
    return replace(ExperimentConfig(), **overrides)


def _print_summary(result):
    cols = ("cell", "status", "iters_to_target", "bits_to_target", "final_subopt")
    print("\t".join(cols))
    for row in result.summary:
        print("\t".join(str(row.get(c, "")) for c in cols))


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        paths = plot_directory(args.results, args.out)
        for p in paths:
            print(p)
        return 0 if paths else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = config_from_args(args)
    try:
        setup = prepare(cfg)
    except (OSError, ValueError) as exc:
        print(f"eclk: {exc}", file=sys.stderr)
        return 2
    if args.command == "oracle":
        o = setup.oracle
        print(f"P*={o.P!r} residual={o.residual:.3e} iters={o.iters} status={o.status}")
        print(f"cache={Path(cfg.oracle_dir).resolve()}")
        return 0
    if args.command == "tune-t":
        problem = setup.problem
        print("method\tcompressor\tp\tbest_t\tgrid")
        for method in cfg.methods:
            if method not in METHODS or method in ("ecsgd", "ecgd"):
                print(f"{method}: no t to tune", file=sys.stderr)
                continue
            kinds = (cz.IDENTITY,) if method == "lkatyusha" else cfg.compressors
            for kind in kinds:
                spec = compressor_for(cfg, kind, problem.d)
                for p in p_values(cfg, spec):
                    res = tune_t(problem, spec, method, p, cfg.t_grid, setup.oracle.P, cfg.target,
                                 cfg.max_iters, cfg.seeds[0], cfg.variant)
                    grid = " ".join(f"{pt.value:g}:{pt.iters if pt.iters is not None else pt.status}"
                                    for pt in res.points)
                    print(f"{method}\t{spec.label}\t{p:.6g}\t{res.best}\t{grid}")
        return 0
    if args.command == "sweep-p":
        result = sweep_p(cfg, P_GRID, setup)
    else:
        result = run_experiment(cfg, setup)
    _print_summary(result)
    return 1 if result.all_failed else 0


if __name__ == "__main__":
    sys.exit(main())
