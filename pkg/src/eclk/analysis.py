"""Convergence diagnostics: perturbed iterates, Lyapunov functions, oracle.

The Lyapunov values here are the quantities whose expectations contract
geometrically under the ECLK parameter schedule; the Monte-Carlo helpers
estimate one-step conditional expectations at a frozen state so the
per-iteration bounds can be checked numerically.
"""
from dataclasses import dataclass
import logging
import math
from pathlib import Path

import numpy as np

from . import compressors as cz
from .optim import GENERAL, REFINED, Streams, configure, init_state, lkatyusha_step

log = logging.getLogger(__name__)

ORACLE_BUDGET = 100_000
ORACLE_TOL = 1e-8
ORACLE_WARN = 1e-6


def perturbed_iterates(state, params):
    """``(x_tilde, z_tilde)``: iterates shifted by the node-averaged error."""
    shift = state.e.mean(axis=0) / (1.0 + params.eta * params.sigma1)
    return state.x - shift, state.z - shift


def psi_subgradient(problem, params, prev, new):
    """Subgradient of psi at ``new.z`` selected by the z-update's prox step."""
    psi = problem.psi
    if psi.kind == "zero":
        return np.zeros_like(new.z)
    if psi.kind == "l2":
        return psi.coef * new.z
    es = params.eta * params.sigma1
    arg = (es * prev.x + prev.z - new.last_sent.mean(axis=0) - params.step * prev.grad_w) / (1.0 + es)
    c = params.eta / ((1.0 + es) * params.L1)
    return (arg - new.z) / c


def perturbed_recursion_rhs(prev, new, params, problem):
    """Right-hand side of the uncompressed-looking recursion for ``z_tilde``.

    Evaluated from the perturbed iterates at ``prev`` and the averaged
    (uncompressed) gradient difference used in the step to ``new``.
    """
    es = params.eta * params.sigma1
    xt, zt = perturbed_iterates(prev, params)
    g = new.last_g.mean(axis=0)
    base = (es * xt + zt - params.step * g - params.step * prev.grad_w) / (1.0 + es)
    sub = psi_subgradient(problem, params, prev, new)
    return base - params.eta * sub / ((1.0 + es) * params.L1)


@dataclass
class LyapunovReport:
    Z: float
    Y: float
    W: float
    error_terms: tuple
    total: float
    rate_bound: float


def lyapunov(state, params, problem, x_star, P_star, variant=None, mu=None):
    """Lyapunov value of ``state``.

    ``general`` adds ``4 L1/(delta eta) * mean ||e_tau||^2``; ``refined`` adds
    ``4 L1/(delta eta) ||e||^2`` plus ``28 L1 (1-delta)/(delta eta n)`` times
    the same node average.
    """
    variant = variant or params.variant
    mu = problem.constants.mu if mu is None else mu
    eta, L1, delta = params.eta, params.L1, params.delta
    _, zt = perturbed_iterates(state, params)
    diff = zt - x_star
    Z = (L1 + eta * mu / 2.0) / (2.0 * eta) * float(diff @ diff)
    Y = (problem.objective(state.y) - P_star) / params.theta1
    W = params.theta2 / (params.p * params.q * params.theta1) * (problem.objective(state.w) - P_star)
    node_avg = float(np.mean(np.einsum("nd,nd->n", state.e, state.e)))
    if variant == GENERAL:
        errors = (4.0 * L1 / (delta * eta) * node_avg,)
    elif variant == REFINED:
        e = state.e.mean(axis=0)
        errors = (
            4.0 * L1 / (delta * eta) * float(e @ e),
            28.0 * L1 * (1.0 - delta) / (delta * eta * problem.n) * node_avg,
        )
    else:
        raise ValueError(f"unknown variant {variant!r}")
    total = Z + Y + W + sum(errors)
    return LyapunovReport(Z, Y, W, errors, total, 1.0 - params.rate(mu))


def iteration_complexity(constants, delta, p, n, variant=GENERAL, eps=1e-6):
    """Iteration-count expression with unit hidden constant, for trend checks."""
    c, mu = constants, constants.mu
    head = 1.0 / delta + 1.0 / p + math.sqrt(c.L_f / mu) + math.sqrt(c.L / (mu * p * n))
    if variant == GENERAL:
        tail = math.sqrt((1 - delta) * c.L_bar / (mu * p)) / delta + math.sqrt(
            (1 - delta) * c.L / (mu * p * delta)
        )
    else:
        tail = math.sqrt((1 - delta) * c.L_f / (mu * p)) / delta + math.sqrt(
            (1 - delta) * c.L / (mu * p * delta * n)
        )
    return (head + tail) * math.log(1.0 / eps)


@dataclass
class OracleResult:
    x: np.ndarray
    P: float
    residual: float
    iters: int
    status: str = "ok"


def solve_oracle(problem, budget=ORACLE_BUDGET, seed=0):
    """Reference solution from ``budget`` iterations of uncompressed L-Katyusha.

    Uses the parameter schedule with ``delta = p = 1``. The status is
    ``warning`` if the final first-order residual exceeds ``1e-6``.
    """
    params = configure(problem.constants, 1.0, 1.0, problem.n, REFINED)
    streams = Streams.from_seed(seed)
    state = init_state(problem)
    for _ in range(budget):
        state = lkatyusha_step(state, params, problem, streams)
    x = state.x
    res = problem.residual(x)
    status = "ok" if res <= ORACLE_WARN else "warning"
    if status != "ok":
        log.warning("oracle residual %.3e above %.0e", res, ORACLE_WARN)
    return OracleResult(x, problem.objective(x), res, budget, status)


def _cache_key(problem, budget, seed):
    return f"{problem.digest or 'anon'}_lam{problem.lam:g}_n{problem.n}_seed{problem.seed}_o{seed}_b{budget}"


def load_or_solve_oracle(problem, cache_dir=None, budget=ORACLE_BUDGET, seed=0):
    """:func:`solve_oracle` with an on-disk cache.

    The solution is stored as ``<key>.npy`` next to a ``<key>.txt`` manifest
    of ``name=value`` lines (dataset hash, lambda, n, seed, residual, P).
    """
    if cache_dir is None:
        return solve_oracle(problem, budget, seed)
    cache_dir = Path(cache_dir)
    key = _cache_key(problem, budget, seed)
    vec, manifest = cache_dir / f"{key}.npy", cache_dir / f"{key}.txt"
    if vec.exists() and manifest.exists():
        meta = dict(line.split("=", 1) for line in manifest.read_text().splitlines() if "=" in line)
        x = np.load(vec)
        return OracleResult(x, float(meta["P"]), float(meta["residual"]), int(meta["iters"]), meta["status"])
    res = solve_oracle(problem, budget, seed)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.save(vec, res.x)
    manifest.write_text(
        "\n".join(
            [
                f"dataset={problem.digest}",
                f"name={problem.name}",
                f"lambda={problem.lam!r}",
                f"n={problem.n}",
                f"seed={problem.seed}",
                f"oracle_seed={seed}",
                f"iters={res.iters}",
                f"residual={res.residual!r}",
                f"P={res.P!r}",
                f"status={res.status}",
            ]
        )
        + "\n"
    )
    return res


# -- Monte-Carlo one-step checks ---------------------------------------------


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    bound: float

    @property
    def holds(self):
        return self.mean <= self.bound + 3.0 * self.stderr


def _mean_se(samples):
    samples = np.asarray(samples)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def _resample_errors(state, params, problem, spec, draws, rng, chunk):
    """Per-draw ``(mean_tau ||e_tau'||^2, ||mean_tau e_tau'||^2)`` after one step."""
    avg, agg = [], []
    n, m = problem.n, problem.m
    for start in range(0, draws, chunk):
        r = min(chunk, draws - start)
        idx = rng.integers(m, size=(r, n))
        gx, gw = problem.sampled_pair_grads(state.x, state.w, idx)
        g = gx - gw
        v = params.step * g + state.e
        e_next = v - cz.apply(spec, v, rng)
        avg.append(np.einsum("rnd,rnd->rn", e_next, e_next).mean(axis=1))
        mean_e = e_next.mean(axis=1)
        agg.append(np.einsum("rd,rd->r", mean_e, mean_e))
    return np.concatenate(avg), np.concatenate(agg)


def check_error_recursions(state, params, problem, spec, constants, draws=10_000, rng=None, chunk=1000):
    """Estimate next-step error energies and their one-step upper bounds.

    Returns ``(node_average, aggregate)`` estimates. The aggregate bound only
    applies to compressors with ``E[Q(x)] = delta x`` or deterministic ones.
    ``constants`` must be the true (unscaled) smoothness constants.
    """
    rng = rng or np.random.default_rng()
    delta = cz.delta(spec)
    n = problem.n
    breg = problem.bregman(state.w, state.x)
    s2 = params.step**2
    node_sq = np.einsum("nd,nd->n", state.e, state.e)
    e = state.e.mean(axis=0)
    avg, agg = _resample_errors(state, params, problem, spec, draws, rng, chunk)
    avg_bound = (1 - delta / 2) * node_sq.mean() + 2 * (1 - delta) * s2 * (
        2 * constants.L_bar / delta + constants.L
    ) * breg
    agg_bound = (
        (1 - delta / 2) * float(e @ e)
        + 2 * (1 - delta) * delta / n**2 * node_sq.sum()
        + 2 * (1 - delta) * s2 * (2 * constants.L_f / delta + 3 * constants.L / n) * breg
    )
    return MCEstimate(*_mean_se(avg), avg_bound), MCEstimate(*_mean_se(agg), agg_bound)


def check_gradient_variance(state, problem, constants, draws=10_000, rng=None, chunk=1000):
    """``E||g + grad f(w) - grad f(x)||^2`` against ``(2L/n)`` times the Bregman gap."""
    rng = rng or np.random.default_rng()
    n, m = problem.n, problem.m
    shift = problem.full_grad(state.w) - problem.full_grad(state.x)
    out = []
    for start in range(0, draws, chunk):
        r = min(chunk, draws - start)
        idx = rng.integers(m, size=(r, n))
        gx, gw = problem.sampled_pair_grads(state.x, state.w, idx)
        dev = (gx - gw).mean(axis=1) + shift
        out.append(np.einsum("rd,rd->r", dev, dev))
    bound = 2.0 * constants.L / n * problem.bregman(state.w, state.x)
    return MCEstimate(*_mean_se(np.concatenate(out)), bound)


def direction_bias(state, problem, draws=10_000, rng=None, chunk=1000):
    """Monte-Carlo mean of ``g + grad f(w)`` with per-coordinate standard errors."""
    rng = rng or np.random.default_rng()
    n, m = problem.n, problem.m
    gw_full = problem.full_grad(state.w)
    sums = np.zeros(problem.d)
    sq = np.zeros(problem.d)
    for start in range(0, draws, chunk):
        r = min(chunk, draws - start)
        idx = rng.integers(m, size=(r, n))
        gx, gw = problem.sampled_pair_grads(state.x, state.w, idx)
        dirs = (gx - gw).mean(axis=1) + gw_full
        sums += dirs.sum(axis=0)
        sq += (dirs**2).sum(axis=0)
    mean = sums / draws
    var = np.maximum(sq / draws - mean**2, 0.0) * draws / (draws - 1)
    return mean, np.sqrt(var / draws)
