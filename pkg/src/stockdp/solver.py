"""
Value iteration on a uniform inventory grid.

The backup follows the order-up-to form of the optimality equations

    G(x)   = c_bar x + E h(T(x - D)) + alpha E v(T(x - D))
    v'(x)  = min{ G(x), K + min_{a in A(x), a > 0} G(x + a) } - c_bar x

with every post-decision level kept on the grid: demand atoms are multiples
of the grid step, and orders are grid multiples with ``x + a <= x_max``.
Levels that fall below ``x_min`` (backorders only) are valued by linear
extrapolation with the one-sided slope of ``v`` at ``x_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConstraintError, DivergenceError, DomainError, GridError
from .model import ModelSpec, Shortfall, check, expected_holding

Stage = Union[int, Literal["converged"]]
Verdict = Literal["converging", "diverging", "undetermined"]


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise GridError(f"grid step must be > 0, got {self.step}")
        if not self.x_max > self.x_min:
            raise GridError(f"need x_max > x_min, got [{self.x_min}, {self.x_max}]")
        cells = (self.x_max - self.x_min) / self.step
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise GridError(f"(x_max - x_min) = {self.x_max - self.x_min} is not a multiple of step {self.step}")

    @property
    def n(self) -> int:
        return int(round((self.x_max - self.x_min) / self.step)) + 1

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.step * np.arange(self.n)

    def index(self, x: float) -> int:
        i = (x - self.x_min) / self.step
        k = int(round(i))
        if abs(i - k) > 1e-9 or not 0 <= k < self.n:
            raise GridError(f"{x} is not a grid point of {self}")
        return k

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.x_min, self.x_max, self.step / factor)


def check_grid(spec: ModelSpec, grid: Grid) -> None:
    """Raise GridError unless ``grid`` can carry ``spec`` exactly."""
    if spec.regime.bounded_storage and abs(grid.x_max - spec.regime.x_bar) > 1e-9:
        raise GridError(f"bounded storage requires x_max = x_bar = {spec.regime.x_bar}, got {grid.x_max}")
    if spec.shortfall is Shortfall.LOST_SALES and abs(grid.x_min) > 1e-12:
        raise GridError(f"lost sales requires x_min = 0, got {grid.x_min}")
    try:
        spec.demand.steps(grid.step)
    except DomainError as exc:
        raise GridError(str(exc)) from None


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ValueFunction:
    grid: Grid
    values: np.ndarray
    stage: Stage = "converged"

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def boundary_slope_low(self) -> float:
        return float(self.values[1] - self.values[0]) / self.grid.step

    def __call__(self, x):
        """Evaluate on or below the grid (linear extension below ``x_min``)."""
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid.points, self.values)
        return np.where(x < self.grid.x_min, self.values[0] + self.boundary_slope_low * (x - self.grid.x_min), out)


@dataclass(frozen=True)
class GFunction:
    grid: Grid
    values: np.ndarray
    stage: Stage = "converged"

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))


@dataclass(frozen=True)
class PolicyTable:
    grid: Grid
    order: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "order", _readonly(self.order))

    @classmethod
    def never_order(cls, grid: Grid) -> "PolicyTable":
        return cls(grid, np.zeros(grid.n))

    def steps(self) -> np.ndarray:
        k = np.rint(self.order / self.grid.step)
        if np.any(np.abs(k * self.grid.step - self.order) > 1e-9 * max(1.0, self.grid.step)):
            raise ConstraintError("policy orders must be multiples of the grid step")
        return k.astype(np.int64)

    def check_feasible(self, spec: ModelSpec) -> None:
        k = self.steps()
        idx = np.arange(self.grid.n)
        if np.any(k < 0) or np.any(idx + k > self.grid.n - 1):
            bad = int(np.flatnonzero((k < 0) | (idx + k > self.grid.n - 1))[0])
            raise ConstraintError(f"order {self.order[bad]} at x={self.grid.points[bad]} leaves the grid")
        if spec.regime.bounded_orders:
            over = self.order > spec.regime.a_bar + 1e-9
            if np.any(over):
                bad = int(np.flatnonzero(over)[0])
                raise ConstraintError(f"order {self.order[bad]} at x={self.grid.points[bad]} exceeds a_bar={spec.regime.a_bar}")

    def action(self, x):
        """Order at arbitrary levels: grid lookup, 0 below ``x_min``."""
        x = np.asarray(x, dtype=float)
        i = np.rint((x - self.grid.x_min) / self.grid.step).astype(np.int64)
        inside = (i >= 0) & (i < self.grid.n)
        return np.where(inside, self.order[np.clip(i, 0, self.grid.n - 1)], 0.0)


class _Kernel:
    """Grid-level precomputation shared by all backups for one (spec, grid)."""

    def __init__(self, spec: ModelSpec, grid: Grid):
        check_grid(spec, grid)
        self.spec, self.grid = spec, grid
        self.x = grid.points
        self.k = spec.demand.steps(grid.step)
        self.p = spec.demand.probs
        idx = np.arange(grid.n)[:, None] - self.k[None, :]
        if spec.shortfall is Shortfall.LOST_SALES:
            idx = np.maximum(idx, 0)
        self.idx = idx
        self.below = idx < 0
        self.depth = np.where(self.below, idx, 0) * grid.step
        self.eh = expected_holding(self.x, spec)
        a_bar = spec.regime.a_bar
        self.order_cap = grid.n - 1 if not math.isfinite(a_bar) else int(math.floor(a_bar / grid.step + 1e-9))

    def expect(self, v: np.ndarray) -> np.ndarray:
        """E v(T(x - D)) on the grid."""
        vals = v[np.clip(self.idx, 0, None)]
        if self.below.any():
            slope = (v[1] - v[0]) / self.grid.step
            vals = vals + slope * self.depth
        return vals @ self.p


@lru_cache(maxsize=64)
def _kernel(spec: ModelSpec, grid: Grid) -> _Kernel:
    return _Kernel(spec, grid)


def _best_order(G: np.ndarray, cap: int):
    """For each i, the smallest j in (i, i+cap] minimizing G[j] (cap clipped to the grid)."""
    n = len(G)
    if cap <= 0 or n < 2:
        return np.full(n, -1), np.full(n, np.inf)
    if cap >= n - 1:
        rev = G[::-1]
        run = np.minimum.accumulate(rev)
        pos = np.maximum.accumulate(np.where(rev == run, np.arange(n), 0))
        j = np.full(n, -1)
        val = np.full(n, np.inf)
        k = n - 2 - np.arange(n - 1)
        j[:-1] = n - 1 - pos[k]
        val[:-1] = run[k]
        return j, val
    padded = np.concatenate([G[1:], np.full(cap, np.inf)])
    win = sliding_window_view(padded, cap)[:n]
    off = np.argmin(win, axis=1)
    val = win[np.arange(n), off]
    j = np.where(np.isfinite(val), np.arange(n) + 1 + off, -1)
    return j, val


def _backup(G: np.ndarray, kern: _Kernel, K: float):
    j, best = _best_order(G, kern.order_cap)
    order = (K + best < G) & (j >= 0)
    v = np.where(order, K + best, G) - kern.spec.c_bar * kern.x
    a = np.where(order, (j - np.arange(len(G))) * kern.grid.step, 0.0)
    return v, a


def _g(v: np.ndarray, kern: _Kernel) -> np.ndarray:
    spec = kern.spec
    return spec.c_bar * kern.x + kern.eh + spec.alpha * kern.expect(v)


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridError(f"grid mismatch: {a} vs {b}")


def g_from_value(v: ValueFunction, spec: ModelSpec) -> GFunction:
    kern = _kernel(spec, v.grid)
    return GFunction(v.grid, _g(v.values, kern), v.stage)


def bellman_backup(G: GFunction, spec: ModelSpec, K: float | None = None) -> tuple[ValueFunction, PolicyTable]:
    """One application of the optimality equation; ties go to the smallest order."""
    kern = _kernel(spec, G.grid)
    v, a = _backup(np.asarray(G.values), kern, spec.K if K is None else K)
    stage = G.stage + 1 if isinstance(G.stage, int) else G.stage
    return ValueFunction(G.grid, v, stage), PolicyTable(G.grid, a)


@dataclass(frozen=True)
class FiniteHorizonSolution:
    """``values[t]`` is v_t (t = 0..N); ``policies[t]`` is the stage-t control
    of the N-horizon problem, greedy for ``g_functions[N - t - 1]``."""

    values: list
    policies: list
    g_functions: list

    @property
    def horizon(self) -> int:
        return len(self.policies)

    def __iter__(self):
        yield self.values
        yield self.policies


def solve_finite_horizon(spec: ModelSpec, grid: Grid, N: int, K: float | None = None) -> FiniteHorizonSolution:
    check(spec)
    if N < 0:
        raise DomainError(f"horizon must be >= 0, got {N}")
    kern = _kernel(spec, grid)
    K = spec.K if K is None else K
    v = np.zeros(grid.n)
    values, gs, backward = [ValueFunction(grid, v, 0)], [], []
    for t in range(N):
        G = _g(v, kern)
        v, a = _backup(G, kern, K)
        gs.append(GFunction(grid, G, t))
        values.append(ValueFunction(grid, v, t + 1))
        backward.append(PolicyTable(grid, a))
    return FiniteHorizonSolution(values, backward[::-1], gs)


def default_ceiling(spec: ModelSpec, grid: Grid) -> float:
    return 1e12 * (1.0 + spec.K + spec.c_bar + float(np.max(spec.h(grid.points))))


def detect_divergence(trace, ceiling: float, *, window: int = 10, threshold: float | None = None) -> Verdict:
    """Classify a sequence of sup-norms produced by value iteration.

    Diverging: the last value is non-finite, or exceeds ``ceiling`` while the
    last ``window`` increments are nondecreasing.  Converging: the last
    increment is at most ``threshold`` (default 1e-9 relative).
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0:
        raise ValueError("trace must be nonempty")
    last = trace[-1]
    if not np.isfinite(last):
        return "diverging"
    inc = np.diff(trace)[-window:]
    if last > ceiling and inc.size >= 1 and np.all(np.diff(inc) >= 0):
        return "diverging"
    if threshold is None:
        threshold = 1e-9 * (1.0 + abs(last))
    if inc.size >= 1 and abs(inc[-1]) <= threshold:
        return "converging"
    return "undetermined"


@dataclass(frozen=True)
class InfiniteHorizonSolution:
    value: ValueFunction
    policy: PolicyTable
    g: GFunction
    iterations: int
    verdict: Literal["converged", "diverging", "max-iterations"]
    trace: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"


def _stop_threshold(tol: float, alpha: float) -> float:
    return tol * (1 - alpha) / (2 * alpha)


def solve_infinite_horizon(
    spec: ModelSpec,
    grid: Grid,
    tol: float = 1e-6,
    *,
    v_max: float | None = None,
    max_iterations: int = 100_000,
    K: float | None = None,
) -> InfiniteHorizonSolution:
    """Value iteration from v = 0 until the successive sup-norm difference is
    at most tol (1 - alpha) / (2 alpha)."""
    check(spec)
    if not tol > 0:
        raise DomainError("tol must be > 0")
    kern = _kernel(spec, grid)
    K = spec.K if K is None else K
    ceiling = default_ceiling(spec, grid) if v_max is None else v_max
    v = np.zeros(grid.n)
    if spec.alpha == 0:
        G = _g(v, kern)
        v1, a = _backup(G, kern, K)
        return InfiniteHorizonSolution(ValueFunction(grid, v1), PolicyTable(grid, a),
                                       GFunction(grid, _g(v1, kern)), 1, "converged",
                                       [0.0, float(np.max(np.abs(v1)))], [float(np.max(np.abs(v1)))])
    stop = _stop_threshold(tol, spec.alpha)
    trace, residuals = [0.0], []
    verdict = "max-iterations"
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iterations + 1):
            v_new, a = _backup(_g(v, kern), kern, K)
            res = float(np.max(np.abs(v_new - v)))
            trace.append(float(np.max(np.abs(v_new))))
            residuals.append(res)
            v = v_new
            if detect_divergence(trace, ceiling) == "diverging":
                verdict = "diverging"
                break
            if res <= stop:
                verdict = "converged"
                break
    return InfiniteHorizonSolution(ValueFunction(grid, v), PolicyTable(grid, a),
                                   GFunction(grid, _g(v, kern)), it, verdict, trace, residuals)


def solve_no_setup(spec: ModelSpec, grid: Grid, tol: float = 1e-6, **kw) -> InfiniteHorizonSolution:
    """The same problem with K = 0 (orders cost only c_bar per unit)."""
    check(spec)
    return solve_infinite_horizon(spec, grid, tol, K=0.0, **kw)


def solve_no_setup_finite(spec: ModelSpec, grid: Grid, N: int) -> FiniteHorizonSolution:
    check(spec)
    return solve_finite_horizon(spec, grid, N, K=0.0)


def evaluate_policy_dp(
    policy: PolicyTable,
    spec: ModelSpec,
    grid: Grid,
    tol: float = 1e-6,
    *,
    v_max: float | None = None,
    max_iterations: int = 100_000,
) -> ValueFunction:
    """Expected discounted cost of a stationary table policy, by fixed-policy iteration."""
    check(spec)
    _same_grid(policy.grid, grid)
    policy.check_feasible(spec)
    kern = _kernel(spec, grid)
    k = policy.steps()
    j = np.arange(grid.n) + k
    fixed = np.where(k > 0, spec.K, 0.0) + spec.c_bar * policy.order + kern.eh[j]
    v = np.zeros(grid.n)
    if spec.alpha == 0:
        return ValueFunction(grid, fixed)
    stop = _stop_threshold(tol, spec.alpha)
    ceiling = default_ceiling(spec, grid) if v_max is None else v_max
    trace = [0.0]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iterations):
            v_new = fixed + spec.alpha * kern.expect(v)[j]
            res = float(np.max(np.abs(v_new - v)))
            trace.append(float(np.max(np.abs(v_new))))
            v = v_new
            if detect_divergence(trace, ceiling) == "diverging":
                raise DivergenceError("policy evaluation diverged", trace)
            if res <= stop:
                return ValueFunction(grid, v)
    raise DivergenceError(f"policy evaluation did not converge in {max_iterations} iterations", trace)


def bellman_residual(value: ValueFunction, policy: PolicyTable, spec: ModelSpec) -> np.ndarray:
    """|v(x) - [c(x, phi(x)) + alpha E v(T(x + phi(x) - D))]| on the grid."""
    kern = _kernel(spec, value.grid)
    k = policy.steps()
    j = np.arange(value.grid.n) + k
    rhs = np.where(k > 0, spec.K, 0.0) + spec.c_bar * policy.order + kern.eh[j] + spec.alpha * kern.expect(np.asarray(value.values))[j]
    return np.abs(value.values - rhs)


def second_differences(values) -> np.ndarray:
    return np.diff(np.asarray(values, dtype=float), 2)


def is_discrete_convex(values, eps: float | None = None) -> bool:
    values = np.asarray(values, dtype=float)
    if eps is None:
        eps = 1e-9 * (1.0 + float(np.max(np.abs(values))))
    return bool(np.all(second_differences(values) >= -eps))


def with_setup_cost(spec: ModelSpec, K: float) -> ModelSpec:
    return replace(spec, K=K)
