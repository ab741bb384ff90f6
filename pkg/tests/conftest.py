"""Shared helpers: independent oracles that do not reuse production code."""

import math

import numpy as np
import pytest


def oracle_kernel(a, b, lengthscales, sv, mode="se-ard", eps_t=0.0):
    """Scalar-loop kernel written independently of ``safetune.gp``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if mode == "multitask-product":
        s = sum(((a[d] - b[d]) / lengthscales[d]) ** 2 for d in range(len(a)))
        return sv * math.exp(-0.5 * s)
    nc = len(lengthscales)
    s = sum(((a[d] - b[d]) / lengthscales[d]) ** 2 for d in range(nc))
    k = sv * math.exp(-0.5 * s)
    if mode == "multitask-temporal":
        k *= (1.0 - eps_t) ** (abs(a[nc] - b[nc]) / 2.0)
    return k


def oracle_posterior(X, y, Q, kfun, noise, jitter):
    """Dense direct solve with numpy.linalg.solve (no Cholesky)."""
    n = len(X)
    K = np.array([[kfun(X[i], X[j]) for j in range(n)] for i in range(n)])
    K += (noise + jitter) * np.eye(n)
    Ks = np.array([[kfun(X[i], q) for q in Q] for i in range(n)])
    kss = np.array([kfun(q, q) for q in Q])
    mean = Ks.T @ np.linalg.solve(K, y)
    var = kss - np.einsum("ij,ij->j", Ks, np.linalg.solve(K, Ks))
    return mean, var


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -------------------------------------------------------

CRITERIA: dict[int, str] = {}


def report_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    """Record and print one pass/fail line; the caller asserts ``ok``."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
