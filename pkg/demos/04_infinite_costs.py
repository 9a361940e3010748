"""Bounded orders that cannot keep up with demand and an explosive holding cost give infinite values."""

from stockdp import detect_divergence, solve_finite_horizon, solve_infinite_horizon
from stockdp.instances import explosive_grid, explosive_spec

spec, grid = explosive_spec(), explosive_grid()   # d = 3 > a_bar = 2, h(x) = 0.5^(-x^2)
sol = solve_finite_horizon(spec, grid, 12)
i0 = grid.index(0.0)
trace = [float(v.values[i0]) for v in sol.values]
for n, val in enumerate(trace):
    print(f"v_{n}(0) = {val:.4g}")
print("verdict on v_N(0):", detect_divergence(trace, 1e6))

inf = solve_infinite_horizon(spec, grid, v_max=1e6, max_iterations=200)
print("value iteration verdict:", inf.verdict, "after", inf.iterations, "sweeps")
