import numpy as np
import pytest

from egodiff.graph import SparseNetwork


def random_adjacency(rng, n, p=0.4):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return a + a.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path3():
    return SparseNetwork(3, [(0, 1), (1, 2)], np.array([[1.0], [0.0], [1.0]]))


@pytest.fixture
def star9():
    """Star K_{1,9}: center 0, leaves 1..9."""
    return SparseNetwork(10, [(0, i) for i in range(1, 10)], np.arange(10.0)[:, None])


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}
ACCEPTANCE_TITLES = {
    1: "transition moments vs Monte-Carlo",
    2: "DSM gradients vs finite differences",
    3: "equivariance and padding invariance",
    4: "metric oracle equivalence",
    5: "energy bounds and oracle values",
    6: "solver sanity",
    7: "training progress",
    8: "error-profile shape",
    9: "end-to-end detection",
    10: "optional real-bundle fidelity",
    11: "determinism",
}


def record(n, passed, detail):
    """``passed=None`` marks a criterion as skipped."""
    ACCEPTANCE[n] = (None if passed is None else bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not any(i.nodeid.startswith("tests/test_acceptance.py") or "test_acceptance" in i.nodeid
               for i in terminalreporter.stats.get("passed", []) +
               terminalreporter.stats.get("failed", []) +
               terminalreporter.stats.get("skipped", [])):
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        else:
            status, detail = "SKIP", "not run or skipped"
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title} ({detail})")
