"""Bits needed to reach a target: ECLK with Top1 and dithering against L-Katyusha.

Each method gets its constant scaling ``t`` tuned on the grid 1, 1e-1, ..., 1e-6,
with ``p`` set to the compression ratio. Traces, a summary table and two SVG
plots (suboptimality against iterations and against bits per node) are
written to ``--out``.

    python demos/communication_comparison.py --dataset a5a
"""
import argparse
import logging

from eclk import compressors as cz
from eclk.harness import ExperimentConfig, emit_plots, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default="mushrooms")
    ap.add_argument("--max-iters", type=int, default=20_000)
    ap.add_argument("--out", default="results/comparison")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig(
        dataset=args.dataset,
        methods=("eclk", "lkatyusha"),
        compressors=(cz.TOPK, cz.DITHER),
        max_iters=args.max_iters,
        out=f"{args.out}/{args.dataset}",
        record_lyapunov=False,
        cache_dir="results/oracle",
    )
    res = run_experiment(cfg)

    base = next(r for r in res.summary if r["method"] == "lkatyusha")
    print(f"{'cell':<40} {'t':>8} {'iters':>7} {'bits to 1e-4':>13} {'bits to 1e-6':>13} {'vs L-Katyusha':>14}")
    for r in res.summary:
        ratio = ""
        if r["bits_to_secondary"] and base["bits_to_secondary"]:
            ratio = f"{r['bits_to_secondary'] / base['bits_to_secondary']:.3f}"
        print(f"{r['cell']:<40} {r['t']:>8g} {r['iters']:>7} {str(r['bits_to_secondary']):>13}"
              f" {str(r['bits_to_target']):>13} {ratio:>14}")
    for path in emit_plots(res.traces, res.out, title=args.dataset):
        print("wrote", path)


if __name__ == "__main__":
    main()
