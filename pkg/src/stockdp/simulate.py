"""
Seeded Monte Carlo estimates of expected discounted cost.

Demand uniforms come from a counter-based generator (Philox): the uniform
used by path ``i`` at stage ``t`` depends only on ``(seed, i, t)``.  Paths are
therefore reproducible one by one, independent of how many paths run or in
which order, and every policy evaluated with the same seed sees the same
demand sequence (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .errors import ConstraintError, DomainError
from .model import ModelSpec, Shortfall, check, expected_holding, in_state_space
from .solver import Grid, PolicyTable
from .structure import StructuredPolicy


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_paths: int = 10_000
    horizon_cap: int | None = None
    discount_tail_epsilon: float = 1e-6

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SimResult:
    mean: float
    stderr: float
    n_paths: int
    truncation_bias_bound: float
    horizon_cap: int


@dataclass(frozen=True)
class PathStream:
    """Demand uniforms of one path."""

    seed: int
    path: int

    def uniform(self, t: int) -> float:
        bitgen = Philox(key=self.seed, counter=[0, 0, 0, t])
        bitgen.advance(self.path // 4)
        return float(Generator(bitgen).random(self.path % 4 + 1)[-1])


def stage_uniforms(seed: int, t: int, n_paths: int) -> np.ndarray:
    """Uniforms of paths 0..n_paths-1 at stage t."""
    return Generator(Philox(key=seed, counter=[0, 0, 0, t])).random(n_paths)


def sample_demand(spec: ModelSpec, u):
    cdf = np.cumsum(spec.demand.probs)
    i = np.searchsorted(cdf, u, side="right")
    return spec.demand.values[np.minimum(i, len(cdf) - 1)]


def _actions(policy, x, t):
    if isinstance(policy, PolicyTable):
        return policy.action(x)
    if isinstance(policy, StructuredPolicy):
        return policy.action(x, t)
    raise TypeError(f"unsupported policy type {type(policy).__name__}")


def _check_feasible(x, a, spec: ModelSpec, t):
    regime = spec.regime
    bad_state = (x < 0) if spec.shortfall is Shortfall.LOST_SALES else np.zeros(x.shape, bool)
    if regime.bounded_storage:
        bad_state |= x > regime.x_bar + 1e-9
    caps = np.full(x.shape, regime.a_bar)
    if regime.bounded_storage:
        caps = np.minimum(caps, np.maximum(0.0, regime.x_bar - x))
    bad = bad_state | (a < 0) | (a > caps + 1e-9)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ConstraintError(f"policy infeasible at state {x[i]} (stage {t}): order {a[i]}")


def _one_step(x, a, spec):
    return np.where(a > 0, spec.K, 0.0) + spec.c_bar * a + expected_holding(x + a, spec)


def _levels(x0, spec, grid):
    if grid is not None:
        return grid.points
    dmax = float(spec.demand.values.max())
    lv = x0 + dmax * np.arange(-100, 101)
    if spec.shortfall is Shortfall.LOST_SALES:
        lv = lv[lv >= 0]
    if spec.regime.bounded_storage:
        lv = lv[lv <= spec.regime.x_bar]
    return lv


def cost_bound(policy, spec: ModelSpec, x0: float, grid: Grid | None = None) -> float:
    """Largest one-step cost of ``policy`` over the grid (or a band of levels around x0)."""
    if grid is None and isinstance(policy, PolicyTable):
        grid = policy.grid
    lv = _levels(x0, spec, grid)
    return float(np.max(_one_step(lv, _actions(policy, lv, 0), spec)))


def resolve_horizon(config: SimConfig, alpha: float, c_max: float) -> int:
    """Smallest H with alpha^H c_max / (1 - alpha) <= discount_tail_epsilon."""
    if config.horizon_cap is not None:
        return int(config.horizon_cap)
    if alpha == 0:
        return 1
    need = config.discount_tail_epsilon * (1 - alpha) / max(c_max, 1e-300)
    if need >= 1:
        return 1
    return int(math.ceil(math.log(need) / math.log(alpha)))


def _run(x0, policy, spec, seed, paths: np.ndarray, horizon: int) -> np.ndarray:
    """Discounted cost of each path in ``paths`` (vectorized over paths)."""
    if not in_state_space(x0, spec.regime, spec.shortfall):
        raise DomainError(f"start state {x0} outside the state space")
    finite = isinstance(policy, StructuredPolicy) and policy.kind == "sStN"
    stages = policy.N if finite else horizon
    x = np.full(len(paths), float(x0))
    total = np.zeros(len(paths))
    disc = 1.0
    width = int(paths.max()) + 1 if len(paths) else 0
    for t in range(stages):
        a = _actions(policy, x, t)
        _check_feasible(x, a, spec, t)
        total += disc * _one_step(x, a, spec)
        u = stage_uniforms(seed, t, width)[paths]
        x = spec.shortfall.apply(x + a - sample_demand(spec, u))
        disc *= spec.alpha
    return total


def simulate_path(x0: float, policy, spec: ModelSpec, stream: PathStream, horizon_cap: int) -> float:
    """Discounted cost of one path, sum_{t < horizon_cap} alpha^t c(x_t, a_t)."""
    check(spec)
    finite = isinstance(policy, StructuredPolicy) and policy.kind == "sStN"
    stages = policy.N if finite else horizon_cap
    x, total, disc = float(x0), 0.0, 1.0
    if not in_state_space(x, spec.regime, spec.shortfall):
        raise DomainError(f"start state {x0} outside the state space")
    for t in range(stages):
        xa = np.array([x])
        a = _actions(policy, xa, t)
        _check_feasible(xa, a, spec, t)
        total += disc * float(_one_step(xa, a, spec)[0])
        d = float(sample_demand(spec, np.array([stream.uniform(t)]))[0])
        x = float(spec.shortfall.apply(x + float(a[0]) - d))
        disc *= spec.alpha
    return total


def path_costs(x0, policy, spec: ModelSpec, config: SimConfig, grid: Grid | None = None):
    check(spec)
    c_max = cost_bound(policy, spec, x0, grid)
    finite = isinstance(policy, StructuredPolicy) and policy.kind == "sStN"
    horizon = policy.N if finite else resolve_horizon(config, spec.alpha, c_max)
    costs = _run(x0, policy, spec, config.seed, np.arange(config.n_paths), horizon)
    bias = 0.0 if finite or spec.alpha == 0 else spec.alpha ** horizon * c_max / (1 - spec.alpha)
    return costs, horizon, bias


def _summary(costs, horizon, bias):
    n = len(costs)
    mean = math.fsum(costs) / n
    stderr = float(np.std(costs, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return SimResult(mean, stderr, n, bias, horizon)


def evaluate_policy_mc(x0: float, policy, spec: ModelSpec, config: SimConfig, grid: Grid | None = None) -> SimResult:
    """Monte Carlo estimate of the expected discounted cost from ``x0``."""
    return _summary(*path_costs(x0, policy, spec, config, grid))


@dataclass(frozen=True)
class PairedComparison:
    index: int
    mean: float
    stderr: float
    diff_vs_best: float
    diff_stderr: float
    ci_low: float
    ci_high: float


def compare_policies(x0: float, policies: list, spec: ModelSpec, config: SimConfig,
                     grid: Grid | None = None, z: float = 1.96) -> list[PairedComparison]:
    """Rank policies by MC mean using common random numbers.

    Each row carries the paired difference to the best-ranked policy and its
    confidence interval ``diff +- z * paired stderr``.
    """
    if len(policies) < 2:
        raise DomainError("compare_policies needs at least 2 policies")
    check(spec)
    c_max = max(cost_bound(p, spec, x0, grid) for p in policies)
    horizon = resolve_horizon(config, spec.alpha, c_max)
    paths = np.arange(config.n_paths)
    costs = [_run(x0, p, spec, config.seed, paths, horizon) for p in policies]
    means = [math.fsum(c) / len(c) for c in costs]
    order = sorted(range(len(policies)), key=lambda i: means[i])
    best = costs[order[0]]
    rows = []
    n = config.n_paths
    for i in order:
        d = costs[i] - best
        dm = math.fsum(d) / n
        dse = float(np.std(d, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        se = float(np.std(costs[i], ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        rows.append(PairedComparison(i, means[i], se, dm, dse, dm - z * dse, dm + z * dse))
    return rows
