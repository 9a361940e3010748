"""Solve a textbook backorder instance, read off (s, S), and check it by simulation."""

import numpy as np

from stockdp import SimConfig, build_structured_policy, evaluate_policy_dp, evaluate_policy_mc, k_convexity_check
from stockdp import solve_infinite_horizon, solve_no_setup
from stockdp.instances import textbook_spec
from stockdp.solver import Grid

spec = textbook_spec()          # holding 1, backorder 4, c_bar 1, K 5, alpha 0.9
grid = Grid(-30.0, 30.0, 1.0)

sol = solve_infinite_horizon(spec, grid, tol=1e-6)
print(f"value iteration: {sol.verdict} after {sol.iterations} sweeps")

# G is K-convex, so the optimal control is a two-number rule
print("K-convex G:", k_convexity_check(sol.g, spec.K).passed)
pol = build_structured_policy(spec, grid, "infinite", sol)
print(f"(s, S) = ({pol.s:g}, {pol.S:g})")

x = grid.points
for xi in (-6, -2, 0, 1, 3, 6):
    print(f"  x={xi:3d}  order={float(sol.policy.action(xi)):4.0f}  v(x)={float(sol.value(xi)):8.3f}")

# the no-setup problem brackets v within K / (1 - alpha)
v0 = solve_no_setup(spec, grid).value
gap = sol.value.values - v0.values
print(f"0 <= v - v0 <= {spec.K / (1 - spec.alpha):g}: observed [{gap.min():.3f}, {gap.max():.3f}]")

# the two-number rule costs the same as the table
v_sS = evaluate_policy_dp(pol.to_table(grid), spec, grid)
print("max |v_sS - v| =", float(np.max(np.abs(v_sS.values - sol.value.values))))

r = evaluate_policy_mc(0.0, pol, spec, SimConfig(seed=1, n_paths=20_000))
print(f"Monte Carlo from x=0: {r.mean:.3f} +- {r.stderr:.3f}  (DP {float(sol.value(0.0)):.3f})")
