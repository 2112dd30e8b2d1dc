from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

from eclk import datasets
from eclk.problem import Dataset, build_problem

CACHE = Path(__file__).resolve().parent / ".oracle_cache"


def random_dataset(N=120, d=8, density=0.5, seed=0):
    rng = np.random.default_rng(seed)
    dense = rng.normal(size=(N, d)) * (rng.random((N, d)) < density)
    labels = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    return Dataset(sparse.csr_matrix(dense), labels, name=f"random{seed}")


@pytest.fixture(scope="session")
def small_problem():
    return build_problem(random_dataset(), n=4, lam=1e-2, seed=0)


@pytest.fixture(scope="session")
def oracle_cache():
    return CACHE


def need(name):
    if not datasets.available(name):
        pytest.skip(f"dataset {name} not available")
    return datasets.load(name)


@pytest.fixture(scope="session")
def mushrooms():
    return build_problem(need("mushrooms"), n=20, lam=1e-3)


@pytest.fixture(scope="session")
def a5a():
    return build_problem(need("a5a"), n=20, lam=1e-3)


ACCEPTANCE = []


def report(number, ok, detail):
    """Record one acceptance verdict, print it, and fail the test if it did not hold."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def write_libsvm(ds, path):
    """Write ``ds`` as a LIBSVM text file with 1-based feature indices."""
    rows = ds.rows.tocsr()
    lines = []
    for i in range(ds.N):
        lo, hi = rows.indptr[i], rows.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(rows.indices[lo:hi], rows.data[lo:hi]))
        lines.append(f"{int(ds.labels[i]):+d} {feats}".rstrip())
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def tiny_file(tmp_path):
    return write_libsvm(random_dataset(N=80, d=6, seed=11), tmp_path / "tiny.svm")
