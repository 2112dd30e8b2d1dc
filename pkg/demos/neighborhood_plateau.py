"""ECLK against error-compensated SGD and GD at an equal bit budget.

ECLK+Top1 runs for twice the iterations it needs to reach 1e-6; its final
cumulative bits set the budget. ECSGD and ECGD then spend that budget at
every stepsize 2^-j / L, j = 0..6, and we report the median suboptimality
over the last tenth of each run. With the same bits the constant-stepsize
baselines end orders of magnitude above ECLK.

    python demos/neighborhood_plateau.py --dataset mushrooms --t 1e-6
"""
import argparse

from eclk import compressors as cz
from eclk.harness import PRIMARY_TARGET, ExperimentConfig, emit_plots, prepare, tune_stepsize, window_median
from eclk.optim import REFINED, configure, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default="mushrooms")
    ap.add_argument("--t", type=float, default=1e-6, help="constant scaling for ECLK")
    ap.add_argument("--out", default="results/plateau")
    args = ap.parse_args()

    setup = prepare(ExperimentConfig(dataset=args.dataset, cache_dir="results/oracle"))
    problem, oracle = setup.problem, setup.oracle
    spec = cz.CompressorSpec(cz.TOPK, problem.d)
    r = cz.compression_ratio(spec)
    params = configure(problem.constants, cz.delta(spec), r, problem.n, REFINED, t=args.t)

    first = run("eclk", problem, spec, 0, 200_000, params=params, P_star=oracle.P, target=PRIMARY_TARGET)
    hit = first.first_crossing(PRIMARY_TARGET, "iter")
    if hit is None:
        raise SystemExit(f"ECLK did not reach {PRIMARY_TARGET:g} with t={args.t:g}")
    eclk = run("eclk", problem, spec, 0, 2 * hit, params=params, P_star=oracle.P)
    budget = eclk.rows[-1][2]
    traces = {"eclk": eclk}
    print(f"eclk: {hit} iterations to {PRIMARY_TARGET:g}; budget {budget} bits;"
          f" final window median {window_median(eclk):.2e}")

    for method in ("ecsgd", "ecgd"):
        tuned = tune_stepsize(problem, spec, method, range(7), oracle.P, None, None, budget_bits=budget)
        for pt in tuned.points:
            print(f"  {method} gamma*L={pt.value * problem.constants.L:<9g} window median {pt.final_subopt:.2e}")
        gamma = tuned.best
        iters = budget // cz.message_bits(spec)
        traces[method] = run(method, problem, spec, 0, iters, stepsize=gamma, P_star=oracle.P)
    for path in emit_plots(traces, f"{args.out}/{args.dataset}", axes=("cum_bits_node",), title=args.dataset):
        print("wrote", path)


if __name__ == "__main__":
    main()
