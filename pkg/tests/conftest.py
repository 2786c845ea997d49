import numpy as np
import pytest

from wiorbo.problems import QuadMinimax, QuadraticBilevel


def one_dim_bilevel():
    """g = y^2 + x y, f = (y - 1)^2 / 2 + x^2 / 2; grad h(x) = 5x/4 + 1/2."""
    return QuadraticBilevel(A=[[[2.0]]], B=[[[1.0]]], b=[[0.0]], t=[[1.0]], s=[[0.0]], lam=1.0)


@pytest.fixture
def tiny_bilevel():
    return one_dim_bilevel()


@pytest.fixture
def bilinear():
    return QuadMinimax.bilinear()


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose each phase's report to fixtures, e.g. for the acceptance pass/fail lines
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)
