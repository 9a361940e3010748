import numpy as np
import pytest

from stockdp import ConstraintRegime, DemandDistribution, HoldingCost, ModelSpec, Shortfall
from stockdp.solver import Grid


def abs_h():
    return HoldingCost.linear(1.0, 1.0)


def make_spec(h=None, demand=None, *, K=5.0, c_bar=2.0, alpha=0.9, regime=None, shortfall=Shortfall.BACKORDERS):
    return ModelSpec(K=K, c_bar=c_bar, h=h or abs_h(), demand=demand or DemandDistribution.dirac(1.0),
                     alpha=alpha, regime=regime or ConstraintRegime.U(), shortfall=shortfall)


@pytest.fixture
def small_grid():
    return Grid(-10.0, 10.0, 1.0)


@pytest.fixture
def textbook():
    """Holding 1, backorder 4, c_bar 1, K 5, alpha 0.9, demand on {0..3}."""
    return ModelSpec(K=5.0, c_bar=1.0, h=HoldingCost.linear(1.0, 4.0),
                     demand=DemandDistribution.from_pmf([0, 1, 2, 3], [0.1, 0.4, 0.3, 0.2]), alpha=0.9)


@pytest.fixture
def textbook_grid():
    return Grid(-30.0, 30.0, 1.0)


def brute_force_backup(G, grid, K, cap=None):
    """Reference min over every grid action, smallest order on ties."""
    x = grid.points
    v = np.empty(len(x))
    a = np.empty(len(x))
    for i in range(len(x)):
        top = len(x) - 1 if cap is None else min(len(x) - 1, i + cap)
        best_j = None
        for j in range(i + 1, top + 1):
            if best_j is None or G[j] < G[best_j]:
                best_j = j
        if best_j is not None and K + G[best_j] < G[i]:
            v[i], a[i] = K + G[best_j], (best_j - i) * grid.step
        else:
            v[i], a[i] = G[i], 0.0
    return v, a


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.acceptance_lines():
        terminalreporter.write_line(line)
