"""Distributed L2-regularized logistic regression built from LIBSVM data.

The smooth part on node ``tau`` is the average over its ``m`` samples of

    f_i(x) = log(1 + exp(-y_i <A_i, x>)) + (lam / 2) ||x||^2

and the composite objective is ``P(x) = f(x) + psi(x)`` with ``f`` the average
over nodes. Rows are stored densely as an ``(n, m, d)`` block so that one
sample per node can be gathered with a single fancy index.
"""
from dataclasses import dataclass, field
import hashlib
import io
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import expit


class ParseError(ValueError):
    pass


class ProblemError(ValueError):
    pass


@dataclass
class Dataset:
    """Binary classification data with labels in {-1, +1}."""

    rows: sparse.csr_matrix
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.rows.shape[0] != self.labels.shape[0]:
            raise ProblemError("row and label counts differ")
        if self.rows.shape[0] < 1:
            raise ProblemError("dataset is empty")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ProblemError("labels must be -1 or +1")

    @property
    def N(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]

    def digest(self):
        """Content hash used to key cached oracle solutions."""
        h = hashlib.sha256()
        csr = self.rows.tocsr()
        csr.sort_indices()
        for arr in (csr.indptr, csr.indices, csr.data, self.labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.d).encode())
        return h.hexdigest()[:16]


def _remap_labels(raw):
    values = set(np.unique(raw).tolist())
    if values <= {-1.0, 1.0}:
        return raw.astype(float)
    if values <= {0.0, 1.0}:
        return np.where(raw == 1.0, 1.0, -1.0)
    if values <= {1.0, 2.0}:
        return np.where(raw == 2.0, 1.0, -1.0)
    raise ParseError(f"unsupported label set {sorted(values)}; expected {{-1,1}}, {{0,1}} or {{1,2}}")


def parse_libsvm(stream, d=None, name=""):
    """Read ``label idx:val ...`` lines (1-based indices) into a :class:`Dataset`.

    Blank lines and ``#`` comments are skipped. ``d`` overrides the dimension
    inferred from the largest index.
    """
    labels, indptr, indices, values = [], [0], [], []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
            for tok in tokens[1:]:
                idx, val = tok.split(":", 1)
                idx = int(idx)
                if idx < 1:
                    raise ValueError(f"index {idx} < 1")
                indices.append(idx - 1)
                values.append(float(val))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: malformed LIBSVM record ({exc})") from None
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no records found")
    seen = max(indices) + 1 if indices else 1
    if d is None:
        d = seen
    elif seen > d:
        raise ParseError(f"feature index {seen} exceeds dimension {d}")
    rows = sparse.csr_matrix(
        (np.asarray(values, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
        shape=(len(labels), d),
    )
    rows.sum_duplicates()
    return Dataset(rows, _remap_labels(np.asarray(labels)), name=name)


def load_libsvm(path, d=None):
    path = Path(path)
    with open(path) as fh:
        return parse_libsvm(fh, d=d, name=path.name)


def parse_libsvm_text(text, d=None):
    return parse_libsvm(io.StringIO(text), d=d)


@dataclass(frozen=True)
class Partition:
    """``n`` disjoint shards of ``m = N // n`` sample indices each."""

    n: int
    shards: tuple
    seed: int

    @property
    def m(self):
        return len(self.shards[0])


def partition(dataset, n, seed=0, shuffle=True):
    """Shuffle indices with ``seed`` and cut them into ``n`` equal blocks.

    Surplus rows (``N mod n``) are dropped so every node holds exactly
    ``N // n`` samples.
    """
    N = dataset.N if hasattr(dataset, "N") else int(dataset)
    if n < 1:
        raise ProblemError(f"node count must be positive, got {n}")
    if N < n:
        raise ProblemError(f"cannot split {N} samples over {n} nodes")
    order = np.random.default_rng(seed).permutation(N) if shuffle else np.arange(N)
    m = N // n
    shards = tuple(tuple(int(i) for i in order[t * m:(t + 1) * m]) for t in range(n))
    return Partition(n, shards, seed)


@dataclass(frozen=True)
class Psi:
    """Regularizer ``psi``: ``zero``, ``l1`` (c ||x||_1) or ``l2`` (mu/2 ||x||^2)."""

    kind: str = "zero"
    coef: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "l2"):
            raise ProblemError(f"unsupported regularizer {self.kind!r}")
        if self.coef < 0:
            raise ProblemError("regularizer coefficient must be nonnegative")

    @property
    def mu(self):
        return self.coef if self.kind == "l2" else 0.0

    def __call__(self, x):
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.coef * float(np.abs(x).sum())
        return 0.5 * self.coef * float(x @ x)


def prox(psi, step, x):
    """``argmin_y 1/2 ||x - y||^2 + step * psi(y)``."""
    if step <= 0:
        raise ProblemError(f"prox step must be positive, got {step}")
    if psi.kind == "zero":
        return x
    if psi.kind == "l1":
        thr = step * psi.coef
        return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)
    if psi.kind == "l2":
        return x / (1.0 + step * psi.coef)
    raise ProblemError(f"unsupported regularizer {psi.kind!r}")


@dataclass
class Constants:
    L_f: float
    L_bar: float
    L: float
    mu_f: float
    mu_psi: float = 0.0

    @property
    def mu(self):
        return self.mu_f + self.mu_psi

    def scaled(self, t):
        """Smoothness constants multiplied by ``t``; strong convexity unchanged."""
        return Constants(t * self.L_f, t * self.L_bar, t * self.L, self.mu_f, self.mu_psi)


def power_iteration(matvec, d, tol=1e-6, max_iter=10_000, seed=0):
    """Largest eigenvalue of a symmetric PSD operator given by ``matvec``.

    Stops once the eigen-residual ``||A v - lam v||`` is at most ``tol * lam``,
    which puts an eigenvalue within that relative distance of the estimate.
    """
    v = np.random.default_rng(seed).standard_normal(d) + 1.0
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(max_iter):
        w = matvec(v)
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return lam
        v = w / nrm
    raise ProblemError(
        f"power iteration did not converge in {max_iter} iterations (last estimate {lam:.6g})"
    )


@dataclass
class LogisticProblem:
    """Finite-sum composite problem over ``n`` simulated nodes."""

    X: np.ndarray  # (n, m, d)
    y: np.ndarray  # (n, m)
    lam: float
    psi: Psi = field(default_factory=Psi)
    name: str = ""
    digest: str = ""
    seed: int = 0
    _constants: Constants = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        self._Xflat = self.X.reshape(-1, self.d)
        self._yflat = self.y.reshape(-1)
        self._nodes = np.arange(self.n)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def d(self):
        return self.X.shape[2]

    # -- per-sample ---------------------------------------------------------
    def sample_loss(self, x, tau, i):
        z = self.y[tau, i] * (self.X[tau, i] @ x)
        return float(np.logaddexp(0.0, -z)) + 0.5 * self.lam * float(x @ x)

    def sample_grad(self, x, tau, i):
        a = self.X[tau, i]
        yi = self.y[tau, i]
        return -yi * expit(-yi * (a @ x)) * a + self.lam * x

    def sampled_grads(self, x, idx):
        """Gradients of the sampled losses, one per node.

        ``idx`` has shape ``(..., n)`` (local sample index per node); the
        result has shape ``(..., n, d)``.
        """
        rows = self.X[self._nodes, idx]
        yy = self.y[self._nodes, idx]
        coef = -yy * expit(-yy * (rows @ x))
        return coef[..., None] * rows + self.lam * x

    def sampled_pair_grads(self, x, w, idx):
        """``(grad_i(x), grad_i(w))`` for the same sampled rows."""
        rows = self.X[self._nodes, idx]
        yy = self.y[self._nodes, idx]
        gx = (-yy * expit(-yy * (rows @ x)))[..., None] * rows + self.lam * x
        gw = (-yy * expit(-yy * (rows @ w)))[..., None] * rows + self.lam * w
        return gx, gw

    # -- per-node and global -----------------------------------------------
    def node_full_grads(self, x):
        """``(n, d)`` array of local full gradients."""
        z = self.y * (self.X @ x)
        coef = -self.y * expit(-z) / self.m
        return np.einsum("nm,nmd->nd", coef, self.X) + self.lam * x

    def node_full_grad(self, x, tau):
        z = self.y[tau] * (self.X[tau] @ x)
        coef = -self.y[tau] * expit(-z) / self.m
        return coef @ self.X[tau] + self.lam * x

    def full_grad(self, x):
        z = self._yflat * (self._Xflat @ x)
        coef = -self._yflat * expit(-z) / self._yflat.size
        return coef @ self._Xflat + self.lam * x

    def f(self, x):
        z = self._yflat * (self._Xflat @ x)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.lam * float(x @ x)

    def node_f(self, x, tau):
        z = self.y[tau] * (self.X[tau] @ x)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.lam * float(x @ x)

    def objective(self, x):
        return self.f(x) + self.psi(x)

    def bregman(self, w, x):
        """``f(w) - f(x) - <grad f(x), w - x>``."""
        return self.f(w) - self.f(x) - float(self.full_grad(x) @ (w - x))

    def prox(self, step, x):
        return prox(self.psi, step, x)

    def residual(self, x):
        """Norm of the prox-gradient mapping; ``||grad f(x)||`` when psi is zero."""
        g = self.full_grad(x)
        if self.psi.kind == "zero":
            return float(np.linalg.norm(g))
        step = 1.0 / self.constants.L_f
        return float(np.linalg.norm(x - self.prox(step, x - step * g)) / step)

    @property
    def constants(self):
        if self._constants is None:
            self._constants = smoothness_constants(self)
        return self._constants

    @constants.setter
    def constants(self, value):
        self._constants = value


def build_problem(dataset, n, lam=1e-3, psi=None, seed=0, shuffle=True):
    """Partition ``dataset`` over ``n`` nodes and assemble the dense problem."""
    part = partition(dataset, n, seed=seed, shuffle=shuffle)
    order = np.asarray(part.shards).reshape(-1)
    dense = dataset.rows[order].toarray().reshape(n, part.m, dataset.d)
    labels = dataset.labels[order].reshape(n, part.m)
    return LogisticProblem(
        dense, labels, lam, psi or Psi(), name=dataset.name, digest=dataset.digest(), seed=seed
    )


def smoothness_constants(problem, tol=1e-6, max_iter=10_000):
    """``(L_f, L_bar, L)`` plus strong convexity for logistic regression.

    ``L`` bounds each sample loss, ``L_bar`` each node average and ``L_f`` the
    global average; the logistic curvature is at most 1/4.
    """
    X, lam = problem.X, problem.lam
    n, m, d = X.shape
    L = lam + float(np.max(np.einsum("nmd,nmd->nm", X, X))) / 4.0
    node_max = 0.0
    for tau in range(n):
        A = X[tau]
        gram = A.T @ A / (4.0 * m)
        node_max = max(node_max, power_iteration(lambda v: gram @ v, d, tol, max_iter, seed=tau))
    flat = problem._Xflat
    gram = flat.T @ flat / (4.0 * n * m)
    Lf = power_iteration(lambda v: gram @ v, d, tol, max_iter, seed=n)
    return Constants(lam + Lf, lam + node_max, L, mu_f=lam, mu_psi=problem.psi.mu)
