from __future__ import annotations

import os

import numpy as np
import pytest

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")


def random_couplings(n, seed, scale=1.0, dist="normal"):
    """Dense symmetric matrix with zero diagonal (test instances only)."""
    rng = np.random.default_rng(seed)
    if dist == "normal":
        up = rng.normal(scale=scale, size=(n, n))
    else:
        up = rng.uniform(-scale, scale, size=(n, n))
    A = np.triu(up, 1)
    return A + A.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pair_instance():
    from levyglass.instances import planted_instance
    return planted_instance(log_t=9.0)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Remember one pass/fail line for the acceptance summary and echo it."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
