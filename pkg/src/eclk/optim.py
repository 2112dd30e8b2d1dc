"""Error compensated loopless Katyusha and its baselines.

All ``n`` nodes are simulated in one process. Per-node quantities are the
rows of ``(n, d)`` arrays and node messages are averaged in node order, so a
run is a deterministic function of its seeds.

Methods
-------
``eclk``       error compensated loopless Katyusha, one sample per node
``eclk-full``  same with local full gradients (every node acts as ``m = 1``)
``lkatyusha``  uncompressed loopless Katyusha
``ecsgd``      error compensated proximal SGD
``ecgd``       error compensated proximal GD (local full gradients)
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import compressors as cz
from .comm import CommLedger

GENERAL = "general"
REFINED = "refined"

METHODS = ("eclk", "eclk-full", "lkatyusha", "ecsgd", "ecgd")

DIVERGENCE_NORM = 1e12


class ConfigurationError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class HyperParams:
    L1: float
    eta: float
    sigma1: float
    theta1: float
    theta2: float
    p: float
    q: float
    variant: str
    t: float = 1.0
    delta: float = 1.0
    L4: float = 0.0

    @property
    def step(self):
        """Scaling ``eta / L1`` applied to gradient differences before compression."""
        return self.eta / self.L1

    def rate(self, mu):
        """Contraction ``rho`` of the Lyapunov function per iteration."""
        return min(
            mu / (mu + 6.0 * self.theta1 * self.L1),
            self.theta1 + self.theta2 - self.theta2 / self.q,
            self.p * (1.0 - self.q),
            self.delta / 6.0,
        )


def curly_L2(c, delta, n):
    return (
        4.0 * c.L / n
        + 112.0 * (1.0 - delta) * c.L_bar / (9.0 * delta**2)
        + 56.0 * (1.0 - delta) * c.L / (9.0 * delta)
    )


def curly_L3(c, delta, n):
    return (
        4.0 * c.L / n
        + 784.0 * (1.0 - delta) * c.L_f / (9.0 * delta**2)
        + 56.0 * (1.0 - delta) * c.L / (delta * n)
    )


def configure(constants, delta, p, n, variant=REFINED, t=1.0):
    """Parameter schedule for a contraction compressor with factor ``delta``.

    ``t`` rescales the smoothness constants (``L_f``, ``L_bar``, ``L``) before
    the schedule is evaluated. The order of resolution is theta2, theta1,
    eta, then L1, because ``3 mu eta = mu / theta1`` only depends on theta1.
    """
    if constants.mu <= 0:
        raise ConfigurationError(f"strong convexity mu must be positive, got {constants.mu}")
    if not 0 < delta <= 1:
        raise ConfigurationError(f"delta must lie in (0, 1], got {delta}")
    if not 0 < p <= 1:
        raise ConfigurationError(f"p must lie in (0, 1], got {p}")
    if variant not in (GENERAL, REFINED):
        raise ConfigurationError(f"unknown variant {variant!r}")
    c = constants.scaled(t)
    mu = c.mu
    L4 = curly_L2(c, delta, n) if variant == GENERAL else curly_L3(c, delta, n)
    theta2 = L4 / (2.0 * max(c.L_f, L4))
    if c.L_f <= L4 / p:
        theta1 = min(math.sqrt(mu / (L4 * p)) * theta2, theta2)
    else:
        theta1 = min(math.sqrt(mu / c.L_f), p / 2.0)
    eta = 1.0 / (3.0 * theta1)
    L1 = max(L4, c.L_f, 3.0 * mu * eta)
    sigma1 = c.mu_f / (2.0 * L1)
    # q must lie in [2/3, 1); theta2/(theta2 + theta1/2) does when theta1 <= theta2
    q = max(theta2 / (theta2 + theta1 / 2.0), 2.0 / 3.0)
    params = HyperParams(L1, eta, sigma1, theta1, theta2, p, q, variant, t, delta, L4)
    failed = _check(params, c)
    if failed:
        raise ConfigurationError("invalid parameters: " + "; ".join(failed))
    return params


def _check(hp, c):
    failed = []
    tol = 1e-12
    if not (0 < hp.theta1 < 1 and 0 < hp.theta2 < 1):
        failed.append(f"theta1={hp.theta1}, theta2={hp.theta2} not in (0, 1)")
    if hp.theta1 + hp.theta2 > 1 + tol:
        failed.append("theta1 + theta2 > 1")
    if hp.L1 < max(c.L_f, 3.0 * c.mu * hp.eta) * (1 - tol):
        failed.append("L1 < max(L_f, 3 mu eta)")
    if hp.theta2 < hp.L4 / (2.0 * hp.L1) * (1 - tol):
        failed.append("theta2 < L4 / (2 L1)")
    if not 2.0 / 3.0 - tol <= hp.q < 1:
        failed.append(f"q={hp.q} outside [2/3, 1)")
    return failed


@dataclass
class Streams:
    """Independent random streams of one run, derived from a single seed."""

    sample: np.random.Generator
    coin: np.random.Generator
    compress: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        s, c, q = np.random.SeedSequence(seed).spawn(3)
        return cls(np.random.default_rng(s), np.random.default_rng(c), np.random.default_rng(q))


@dataclass
class GlobalState:
    """Iterates shared by all nodes plus per-node error vectors.

    ``u`` is the current reference-update flag: when set, this iteration
    broadcasts the local gradients at ``w``. ``last_g`` and ``last_sent``
    hold the previous iteration's per-node gradient differences and
    compressed messages for diagnostics.
    """

    k: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    grad_w: np.ndarray
    e: np.ndarray
    u: bool = True
    cumulative_bits: int = 0
    refreshes: int = 0
    last_g: np.ndarray = None
    last_sent: np.ndarray = None

    @property
    def e_avg(self):
        return self.e.mean(axis=0)


def init_state(problem, x0=None):
    d, n = problem.d, problem.n
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    return GlobalState(
        k=0,
        x=x0,
        y=x0.copy(),
        z=x0.copy(),
        w=x0.copy(),
        grad_w=problem.full_grad(x0),
        e=np.zeros((n, d)),
        u=True,
    )


def _guard(state):
    for name in ("x", "y", "z", "w"):
        v = getattr(state, name)
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) > DIVERGENCE_NORM:
            raise DivergenceError(f"iterate {name} diverged at k={state.k}", state)
    return state


def _gradient_differences(state, problem, streams, full):
    if full:
        return problem.node_full_grads(state.x) - problem.node_full_grads(state.w)
    idx = streams.sample.integers(problem.m, size=problem.n)
    gx, gw = problem.sampled_pair_grads(state.x, state.w, idx)
    return gx - gw


def _katyusha_update(state, params, problem, g_tilde, u_next):
    """Shared z, y, w, x update given the averaged compressed direction."""
    es = params.eta * params.sigma1
    arg = (es * state.x + state.z - g_tilde - params.step * state.grad_w) / (1.0 + es)
    z = problem.prox(params.eta / ((1.0 + es) * params.L1), arg)
    y = state.x + params.theta1 * (z - state.z)
    w = state.y if u_next else state.w
    x = params.theta1 * z + params.theta2 * w + (1.0 - params.theta1 - params.theta2) * y
    grad_w = problem.full_grad(w) if u_next else state.grad_w
    return x, y, z, w, grad_w


def eclk_step(state, params, problem, spec, streams, ledger=None, full=False):
    """One iteration of error compensated loopless Katyusha; returns a new state."""
    g = _gradient_differences(state, problem, streams, full)
    v = params.step * g + state.e
    sent = cz.apply(spec, v, streams.compress)
    e = state.e + params.step * g - sent
    u_next = bool(streams.coin.random() < params.p)
    g_tilde = sent.mean(axis=0)
    x, y, z, w, grad_w = _katyusha_update(state, params, problem, g_tilde, u_next)
    bits = cz.message_bits(spec) + 1 + (problem.d * cz.FLOAT_BITS if state.u else 0)
    if ledger is not None:
        ledger.charge(cz.message_bits(spec), state.u)
    new = GlobalState(
        k=state.k + 1,
        x=x,
        y=y,
        z=z,
        w=w,
        grad_w=grad_w,
        e=e,
        u=u_next,
        cumulative_bits=state.cumulative_bits + bits,
        refreshes=state.refreshes + int(u_next),
        last_g=g,
        last_sent=sent,
    )
    return _guard(new)


def lkatyusha_step(state, params, problem, streams, ledger=None, full=False):
    """One uncompressed loopless Katyusha iteration.

    Written independently of :func:`eclk_step` (no error vectors, no
    compressor) but with the same floating-point operation order, so the two
    trajectories coincide exactly under equal seeds.
    """
    g = _gradient_differences(state, problem, streams, full)
    scaled = params.step * g
    u_next = bool(streams.coin.random() < params.p)
    g_tilde = scaled.mean(axis=0)
    x, y, z, w, grad_w = _katyusha_update(state, params, problem, g_tilde, u_next)
    dense = problem.d * cz.FLOAT_BITS
    bits = dense + 1 + (dense if state.u else 0)
    if ledger is not None:
        ledger.charge(dense, state.u)
    new = replace(
        state,
        k=state.k + 1,
        x=x,
        y=y,
        z=z,
        w=w,
        grad_w=grad_w,
        u=u_next,
        cumulative_bits=state.cumulative_bits + bits,
        refreshes=state.refreshes + int(u_next),
        last_g=g,
        last_sent=scaled,
    )
    return _guard(new)


def ecsgd_step(state, stepsize, problem, spec, streams, ledger=None, full=False):
    """Error compensated proximal (S)GD; ``full=True`` gives ECGD.

    Only ``x`` and ``e`` evolve; ``y``, ``z`` and ``w`` mirror ``x``.
    """
    if stepsize <= 0:
        raise ConfigurationError(f"stepsize must be positive, got {stepsize}")
    if full:
        g = problem.node_full_grads(state.x)
    else:
        idx = streams.sample.integers(problem.m, size=problem.n)
        g = problem.sampled_grads(state.x, idx)
    v = stepsize * g + state.e
    sent = cz.apply(spec, v, streams.compress)
    e = state.e + stepsize * g - sent
    x = problem.prox(stepsize, state.x - sent.mean(axis=0))
    bits = cz.message_bits(spec)
    if ledger is not None:
        ledger.charge(bits, False, flag_bits=0)
    new = GlobalState(
        k=state.k + 1,
        x=x,
        y=x,
        z=x,
        w=x,
        grad_w=state.grad_w,
        e=e,
        u=False,
        cumulative_bits=state.cumulative_bits + bits,
        last_g=g,
        last_sent=sent,
    )
    return _guard(new)


def make_stepper(method, problem, spec, params=None, stepsize=None):
    """Return ``step(state, streams, ledger)`` for ``method``."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    if method in ("ecsgd", "ecgd"):
        if stepsize is None:
            raise ConfigurationError(f"{method} needs a stepsize")
        full = method == "ecgd"
        return lambda s, r, led=None: ecsgd_step(s, stepsize, problem, spec, r, led, full=full)
    if params is None:
        raise ConfigurationError(f"{method} needs HyperParams")
    if method == "lkatyusha":
        return lambda s, r, led=None: lkatyusha_step(s, params, problem, r, led)
    full = method == "eclk-full"
    return lambda s, r, led=None: eclk_step(s, params, problem, spec, r, led, full=full)


TRACE_FIELDS = (
    "iter",
    "subopt",
    "cum_bits_node",
    "cum_bits_total",
    "lyapunov",
    "err_avg",
    "err_agg",
    "w_updated",
)


@dataclass
class Trace:
    """Recorded rows of one run, column-wise."""

    method: str
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    final_state: GlobalState = None

    def column(self, name):
        return np.array([r[TRACE_FIELDS.index(name)] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def first_crossing(self, target, column="cum_bits_node"):
        """Value of ``column`` at the first recorded row with ``subopt <= target``."""
        for r in self.rows:
            if r[1] <= target:
                return r[TRACE_FIELDS.index(column)]
        return None


def thinned(k, dense_until=1000, every=10):
    return k <= dense_until or k % every == 0


def run(
    method,
    problem,
    spec,
    seed,
    max_iters,
    params=None,
    stepsize=None,
    P_star=None,
    x_star=None,
    target=None,
    lyapunov=None,
    record=thinned,
    x0=None,
    monitor=None,
):
    """Iterate ``method`` from ``x0`` (default zero) and record a :class:`Trace`.

    ``lyapunov`` is an optional callable ``state -> float`` evaluated at each
    recorded row. Stops after ``max_iters`` iterations or at the first
    recorded row with suboptimality at most ``target``. ``monitor`` is an
    optional callable ``(k, subopt) -> str or None`` consulted on recorded
    rows; a returned string stops the run and becomes its status.
    """
    step = make_stepper(method, problem, spec, params, stepsize)
    streams = Streams.from_seed(seed)
    state = init_state(problem, x0)
    trace = Trace(method)
    P_ref = 0.0 if P_star is None else P_star
    n = problem.n

    def emit(s, updated):
        e_avg = s.e.mean(axis=0)
        trace.rows.append(
            (
                s.k,
                problem.objective(s.x) - P_ref,
                s.cumulative_bits,
                s.cumulative_bits * n,
                float(lyapunov(s)) if lyapunov is not None else float("nan"),
                float(np.mean(np.einsum("nd,nd->n", s.e, s.e))),
                float(e_avg @ e_avg),
                int(updated),
            )
        )

    emit(state, True)
    try:
        for k in range(1, max_iters + 1):
            state = step(state, streams)
            if record(k) or k == max_iters:
                emit(state, state.u)
                if target is not None and trace.rows[-1][1] <= target:
                    break
                if monitor is not None:
                    verdict = monitor(k, trace.rows[-1][1])
                    if verdict:
                        trace.status = verdict
                        break
    except DivergenceError as exc:
        trace.status = "diverged"
        trace.message = str(exc)
        state = exc.state
    trace.final_state = state
    return trace
