import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from eclk.problem import (
    Dataset,
    LogisticProblem,
    ParseError,
    ProblemError,
    Psi,
    build_problem,
    parse_libsvm_text,
    partition,
    power_iteration,
    prox,
    smoothness_constants,
)

from conftest import random_dataset


# -- parsing -----------------------------------------------------------------


def test_parse_basic_row():
    ds = parse_libsvm_text("+1 1:0.5 3:2.0\n")
    assert ds.N == 1 and ds.d == 3
    assert np.array_equal(ds.rows.toarray(), [[0.5, 0.0, 2.0]])
    assert ds.labels.tolist() == [1.0]


def test_parse_remaps_zero_one_labels():
    ds = parse_libsvm_text("0 2:1\n1 1:3\n")
    assert ds.labels.tolist() == [-1.0, 1.0]
    assert np.array_equal(ds.rows.toarray()[0], [0.0, 1.0])


def test_parse_remaps_one_two_labels():
    assert parse_libsvm_text("1 1:1\n2 2:1\n").labels.tolist() == [-1.0, 1.0]


def test_parse_error_carries_line_number():
    with pytest.raises(ParseError, match="line 1"):
        parse_libsvm_text("abc\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_libsvm_text("+1 1:1\n-1 0:1\n")


def test_parse_rejects_empty_and_odd_labels():
    with pytest.raises(ParseError):
        parse_libsvm_text("\n# only a comment\n")
    with pytest.raises(ParseError):
        parse_libsvm_text("3 1:1\n1 1:1\n")


def test_parse_dimension_override():
    assert parse_libsvm_text("-1 2:1\n", d=5).d == 5
    with pytest.raises(ParseError):
        parse_libsvm_text("-1 7:1\n", d=5)


# -- partition ---------------------------------------------------------------


def test_partition_contiguous_without_shuffle():
    part = partition(10, 2, shuffle=False)
    assert part.shards == (tuple(range(5)), tuple(range(5, 10)))


def test_partition_drops_surplus():
    part = partition(10, 3, seed=4)
    assert part.m == 3 and all(len(s) == 3 for s in part.shards)
    flat = [i for s in part.shards for i in s]
    assert len(set(flat)) == 9


def test_partition_deterministic():
    assert partition(100, 7, seed=3) == partition(100, 7, seed=3)
    assert partition(100, 7, seed=3) != partition(100, 7, seed=4)


def test_partition_errors():
    with pytest.raises(ProblemError):
        partition(3, 4)
    with pytest.raises(ProblemError):
        partition(3, 0)


# -- losses and gradients ----------------------------------------------------


def single(A, y, lam):
    return LogisticProblem(np.asarray(A, float).reshape(1, 1, -1), np.array([[y]], float), lam, Psi())


def test_gradient_at_zero():
    A = np.array([1.0, -2.0, 0.5])
    p = single(A, -1.0, 0.0)
    assert np.allclose(p.sample_grad(np.zeros(3), 0, 0), A / 2)


def test_gradient_of_zero_row_is_ridge():
    p = single(np.zeros(3), 1.0, 0.3)
    x = np.array([1.0, 2.0, -1.0])
    assert np.allclose(p.sample_grad(x, 0, 0), 0.3 * x)


def test_objective_at_zero_is_log2(small_problem):
    assert small_problem.objective(np.zeros(small_problem.d)) == pytest.approx(math.log(2), rel=1e-15)


def test_l1_objective():
    ds = random_dataset(N=40, d=5, seed=2)
    p = build_problem(ds, 2, 1e-2, psi=Psi("l1", 0.3))
    x = np.random.default_rng(0).normal(size=5)
    assert p.objective(x) == pytest.approx(p.f(x) + 0.3 * np.abs(x).sum())


def test_stable_for_large_margins():
    p = single(np.array([1e4, 0.0]), 1.0, 0.0)
    for x in (np.array([10.0, 0.0]), np.array([-10.0, 0.0])):
        assert np.isfinite(p.f(x)) and np.all(np.isfinite(p.sample_grad(x, 0, 0)))
    assert p.f(np.array([-10.0, 0.0])) == pytest.approx(1e5)


def test_gradient_matches_finite_differences(small_problem):
    p = small_problem
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        x = rng.normal(size=p.d)
        tau, i = rng.integers(p.n), rng.integers(p.m)
        g = p.sample_grad(x, tau, i)
        fd = np.array(
            [(p.sample_loss(x + h * e, tau, i) - p.sample_loss(x - h * e, tau, i)) / (2 * h) for e in np.eye(p.d)]
        )
        assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-3)


def test_batched_gradients_agree(small_problem):
    p = small_problem
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=p.d), rng.normal(size=p.d)
    idx = rng.integers(p.m, size=(3, p.n))
    gx, gw = p.sampled_pair_grads(x, w, idx)
    for r in range(3):
        for tau in range(p.n):
            assert np.allclose(gx[r, tau], p.sample_grad(x, tau, idx[r, tau]), rtol=1e-13, atol=1e-15)
            assert np.allclose(gw[r, tau], p.sample_grad(w, tau, idx[r, tau]), rtol=1e-13, atol=1e-15)
    assert np.allclose(p.sampled_grads(x, idx[0]), gx[0])


def test_node_gradients_average_to_full(small_problem):
    p = small_problem
    x = np.random.default_rng(2).normal(size=p.d)
    nodes = p.node_full_grads(x)
    for tau in range(p.n):
        manual = np.mean([p.sample_grad(x, tau, i) for i in range(p.m)], axis=0)
        assert np.allclose(nodes[tau], manual, rtol=1e-12, atol=1e-15)
        assert np.allclose(p.node_full_grad(x, tau), manual, rtol=1e-12, atol=1e-15)
    assert np.allclose(nodes.mean(axis=0), p.full_grad(x), rtol=1e-12, atol=1e-15)
    assert p.f(x) == pytest.approx(np.mean([p.node_f(x, t) for t in range(p.n)]))


def test_single_sample_node_gradient():
    ds = random_dataset(N=3, d=4, seed=5)
    p = build_problem(ds, 3, 1e-2)
    x = np.ones(4)
    for tau in range(3):
        assert np.allclose(p.node_full_grad(x, tau), p.sample_grad(x, tau, 0))


def test_smoothness_and_strong_convexity(small_problem):
    p = small_problem
    c = p.constants
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x, y = rng.normal(size=(2, p.d)) * 3
        tau, i = rng.integers(p.n), rng.integers(p.m)
        lhs = np.linalg.norm(p.sample_grad(x, tau, i) - p.sample_grad(y, tau, i))
        assert lhs <= c.L * np.linalg.norm(x - y) * (1 + 1e-12)
    for _ in range(200):
        x, y = rng.normal(size=(2, p.d))
        lower = p.f(x) + p.full_grad(x) @ (y - x) + 0.5 * p.lam * np.sum((y - x) ** 2)
        assert p.f(y) >= lower - 1e-12
        assert p.bregman(y, x) >= -1e-12


# -- prox --------------------------------------------------------------------


def test_prox_examples():
    x = np.array([0.3, -4.0])
    assert prox(Psi(), 2.0, x) is x
    assert np.allclose(prox(Psi("l1", 1.0), 0.5, np.array([1.0, -0.2])), [0.5, 0.0])
    assert np.allclose(prox(Psi("l2", 2.0), 0.5, np.array([2.0])), [1.0])
    with pytest.raises(ProblemError):
        prox(Psi(), 0.0, x)
    with pytest.raises(ProblemError):
        Psi("huber", 1.0)


@settings(max_examples=200, deadline=None)
@given(
    x=st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    step=st.floats(1e-3, 10),
    coef=st.floats(0, 5),
    kind=st.sampled_from(["zero", "l1", "l2"]),
)
def test_prox_optimality(x, step, coef, kind):
    x = np.array(x)
    psi = Psi(kind, coef)
    y = prox(psi, step, x)
    sub = (x - y) / step
    if kind == "zero":
        assert np.allclose(sub, 0, atol=1e-10)
    elif kind == "l2":
        assert np.allclose(sub, coef * y, atol=1e-10)
    else:
        nz = y != 0
        assert np.allclose(sub[nz], coef * np.sign(y[nz]), atol=1e-10)
        assert np.all(np.abs(sub[~nz]) <= coef + 1e-10)


# -- constants ---------------------------------------------------------------


def test_rank_one_constants():
    ds = Dataset(sparse.csr_matrix(np.array([[1.0, 0.0, 0.0]])), np.array([1.0]))
    c = build_problem(ds, 1, 0.0).constants
    assert c.L == pytest.approx(0.25) and c.L_bar == pytest.approx(0.25) and c.L_f == pytest.approx(0.25)


def test_lambda_shift():
    ds = random_dataset(N=60, d=6, seed=7)
    c0 = build_problem(ds, 3, 0.0).constants
    c1 = build_problem(ds, 3, 1e-3).constants
    for a, b in ((c0.L_f, c1.L_f), (c0.L_bar, c1.L_bar), (c0.L, c1.L)):
        assert b - a == pytest.approx(1e-3, abs=1e-9)
    assert c1.mu_f == 1e-3 and c1.mu == 1e-3


def test_constants_match_eigensolver(small_problem):
    p = small_problem
    c = smoothness_constants(p)
    X = p.X.reshape(-1, p.d)
    assert c.L_f == pytest.approx(p.lam + np.linalg.eigvalsh(X.T @ X / (4 * len(X)))[-1], rel=1e-6)
    node = max(np.linalg.eigvalsh(A.T @ A / (4 * p.m))[-1] for A in p.X)
    assert c.L_bar == pytest.approx(p.lam + node, rel=1e-6)
    assert c.L_f <= c.L_bar * (1 + 1e-6) and c.L_bar <= c.L * (1 + 1e-6)


def test_constants_ordering_on_real_data(a5a, mushrooms):
    for p in (a5a, mushrooms):
        c = p.constants
        assert c.L_f <= c.L_bar * (1 + 1e-6) <= c.L * (1 + 2e-6)
        assert c.L_bar <= p.n * c.L_f


def test_power_iteration_diagonal():
    M = np.diag([1.0, 5.0, 2.0])
    assert power_iteration(lambda v: M @ v, 3) == pytest.approx(5.0, rel=1e-6)
    assert power_iteration(lambda v: 0 * v, 3) == 0.0


def test_dataset_validation():
    with pytest.raises(ProblemError):
        Dataset(sparse.csr_matrix(np.ones((2, 2))), np.array([1.0, 0.5]))
    with pytest.raises(ProblemError):
        Dataset(sparse.csr_matrix(np.ones((2, 2))), np.array([1.0]))


def test_digest_tracks_content():
    a, b = random_dataset(seed=1), random_dataset(seed=2)
    assert a.digest() == random_dataset(seed=1).digest() != b.digest()
