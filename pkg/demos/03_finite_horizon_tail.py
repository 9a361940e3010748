"""Finite horizon with alpha_star = 0.5, alpha = 0.9: the last N_alpha = 2 stages never order."""

from stockdp import DemandDistribution, HoldingCost, ModelSpec, alpha_star, build_structured_policy
from stockdp import n_alpha_formula, n_alpha_oracle, solve_finite_horizon
from stockdp.solver import Grid

h = HoldingCost.linear(1.0, 1.0)
spec = ModelSpec(K=10.0, c_bar=2.0, h=h, demand=DemandDistribution.from_pmf([0, 1, 2, 3, 4], [0.1, 0.2, 0.3, 0.25, 0.15]),
                 alpha=0.9)
a_star = alpha_star(h, spec.c_bar)
print("alpha_star =", a_star, " N_alpha =", n_alpha_formula(a_star, spec.alpha),
      " (slope oracle:", n_alpha_oracle(spec, t_max=200), ")")

grid = Grid(-200.0, 200.0, 1.0)
N = 5
sol = solve_finite_horizon(spec, grid, N)
pol = build_structured_policy(spec, grid, N, sol)
for t in range(N):
    pair = pol.stage_thresholds(t)
    table = sol.policies[t]
    ordering = int((table.order > 0).sum())
    print(f"stage {t}: thresholds {pair}, grid points that order: {ordering}")
