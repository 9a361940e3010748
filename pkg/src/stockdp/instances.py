"""Ready-made model instances used by the demos, the tests and the CLI examples."""

from __future__ import annotations

import numpy as np

from .model import ConstraintRegime, DemandDistribution, HoldingCost, ModelSpec, Shortfall
from .solver import Grid

# 2**(x*x) overflows float64 from |x| = 32 on
EXPLOSIVE_TABLE_HALF_WIDTH = 31


def explosive_spec(alpha: float = 0.5, d: float = 3.0, a_bar: float = 2.0, K: float = 1.0, c_bar: float = 1.0) -> ModelSpec:
    """Bounded-orders instance whose optimal cost is infinite.

    Holding cost alpha**(-x**2) is tabulated on the integers of [-31, 31] and
    extended linearly beyond; demand d exceeds the order bound a_bar, so the
    inventory drifts to -inf under every policy.
    """
    xs = np.arange(-EXPLOSIVE_TABLE_HALF_WIDTH, EXPLOSIVE_TABLE_HALF_WIDTH + 1, dtype=float)
    hs = alpha ** (-(xs ** 2))
    return ModelSpec(K=K, c_bar=c_bar, h=HoldingCost.tabulated(xs, hs), demand=DemandDistribution.dirac(d),
                     alpha=alpha, regime=ConstraintRegime.BO(a_bar), shortfall=Shortfall.BACKORDERS)


def explosive_grid() -> Grid:
    return Grid(-40.0, 40.0, 1.0)


def textbook_spec(alpha: float = 0.9, K: float = 5.0, regime: ConstraintRegime | None = None,
                  shortfall: Shortfall = Shortfall.BACKORDERS) -> ModelSpec:
    """Linear holding 1, backorder 4, demand on {0,1,2,3}."""
    return ModelSpec(K=K, c_bar=1.0, h=HoldingCost.linear(1.0, 4.0),
                     demand=DemandDistribution.from_pmf([0, 1, 2, 3], [0.1, 0.4, 0.3, 0.2]),
                     alpha=alpha, regime=regime or ConstraintRegime.U(), shortfall=shortfall)


def spec_with_alpha_star(a_star: float, alpha: float, K: float = 5.0, regime: ConstraintRegime | None = None) -> ModelSpec:
    """|x|-type holding (slope 1 right, k_h left) with c_bar chosen so that alpha_star = a_star.

    Uses k_h = 1 and c_bar = 1 / (1 - a_star).
    """
    c_bar = 1.0 / (1.0 - a_star)
    return ModelSpec(K=K, c_bar=c_bar, h=HoldingCost.linear(1.0, 1.0),
                     demand=DemandDistribution.from_pmf([0, 1, 2], [0.3, 0.4, 0.3]),
                     alpha=alpha, regime=regime or ConstraintRegime.U(), shortfall=Shortfall.BACKORDERS)
