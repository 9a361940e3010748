"""
Structural analysis: critical discount factor, number of never-order
terminal stages, K-convexity, (s, S) extraction and regime labels.

    alpha_star = 1 + lim_{x -> -inf} h(x) / (c_bar x) = 1 - k_h / c_bar

    N_alpha    = min{ t : alpha_star / (1 - alpha_star) < sum_{i=1}^t alpha^i }

A function f is K-convex when, for all x < z < y with theta = (y - z)/(y - x),

    f(z) <= theta f(x) + (1 - theta) f(y) + (1 - theta) K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, reduce
from typing import Literal, Union

import numpy as np

from .errors import DomainError, ExtractionError, OracleDisagreementError, StructureUnsupportedError
from .model import DemandDistribution, HoldingCost, ModelSpec, Shortfall
from .solver import FiniteHorizonSolution, GFunction, Grid, InfiniteHorizonSolution, PolicyTable, ValueFunction

INF = math.inf
Horizon = Union[int, Literal["infinite"]]


def alpha_star(h: HoldingCost, c_bar: float) -> float:
    """Critical discount factor; at or below it, never ordering is optimal."""
    if h.kind == "tabulated" and len(h.table) < 2:
        raise DomainError("cannot estimate the left slope of a tabulated h with fewer than 2 points")
    return 1.0 - h.left_slope_magnitude / c_bar


def _check_alpha(alpha):
    if not 0 <= alpha < 1:
        raise DomainError(f"discount factor must lie in [0, 1), got {alpha}")


def n_alpha_formula(a_star: float, alpha: float) -> float:
    """Number of terminal stages in which never ordering is optimal.

    Returns an int, or ``math.inf`` when alpha <= alpha_star (alpha_star >= 0).
    """
    _check_alpha(alpha)
    if a_star < 0:
        return 0
    if alpha <= a_star:
        return INF
    # sum_{i=1}^t alpha^i = alpha (1 - alpha^t) / (1 - alpha), so the strict
    # inequality is alpha^t < r with r = (alpha - a*) / (alpha (1 - a*)) in (0, 1]
    r = (alpha - a_star) / (alpha * (1.0 - a_star))
    if r <= 0.0:
        return INF
    t = max(0, int(math.floor(math.log(r) / math.log(alpha))) + 1)
    while t > 0 and alpha ** (t - 1) < r:
        t -= 1
    while not alpha ** t < r:
        t += 1
    return t


@lru_cache(maxsize=16)
def _tail_expectations(h: HoldingCost, demand: DemandDistribution, xs: tuple, t_max: int, prune: float):
    """E h(x - S_{i+1}) for i = 0..t_max and each x, with S_j the j-fold demand sum.

    Cumulative demand pmfs are built by repeated convolution on the lattice
    spanned by the atoms; masses below ``prune`` are dropped from both tails.
    """
    vals = demand.values
    step = _lattice_step(vals)
    k = np.rint(vals / step).astype(np.int64)
    base = np.zeros(k.max() + 1)
    np.add.at(base, k, demand.probs)
    xs = np.asarray(xs)
    pmf, offset = base.copy(), 0
    out = np.empty((t_max + 1, len(xs)))
    for i in range(t_max + 1):
        support = (offset + np.arange(len(pmf))) * step
        out[i] = h(xs[:, None] - support[None, :]) @ pmf
        pmf = np.convolve(pmf, base)
        keep = np.flatnonzero(pmf >= prune)
        pmf = pmf[keep[0]:keep[-1] + 1]
        offset += keep[0]
    return out


def _lattice_step(vals):
    """Largest step of which every positive atom is an integer multiple."""
    fr = [Fraction(float(v)).limit_denominator(10**6) for v in vals if v > 0]
    num = reduce(math.gcd, (f.numerator for f in fr))
    den = reduce(math.lcm, (f.denominator for f in fr))
    return num / den


@dataclass(frozen=True)
class NAlphaOracle:
    n_alpha: float
    analytic_slopes: np.ndarray
    numeric_slopes: np.ndarray


def n_alpha_oracle(spec: ModelSpec, t_max: int = 2000, x_probe: float = -1e6, *, detail: bool = False):
    """First t at which f_t(x) = c_bar x + sum_{i<=t} alpha^i E h(x - S_{i+1}) tends
    to +inf as x -> -inf, judged by the sign of its asymptotic slope.

    Two routes are computed for every t: the closed form c_bar - k_h sum_{i<=t} alpha^i
    and a secant slope of f_t between ``x_probe`` and ``2 x_probe`` built from exact
    demand convolutions.  A sign disagreement raises OracleDisagreementError.
    """
    if t_max < 1:
        raise DomainError("t_max must be >= 1")
    alpha, c_bar = spec.alpha, spec.c_bar
    k_h = spec.h.left_slope_magnitude
    powers = alpha ** np.arange(t_max + 1)
    analytic = c_bar - k_h * np.cumsum(powers)
    eh = _tail_expectations(spec.h, spec.demand, (x_probe, 2 * x_probe), t_max, 1e-15)
    f1 = c_bar * x_probe + np.cumsum(powers * eh[:, 0])
    f2 = c_bar * 2 * x_probe + np.cumsum(powers * eh[:, 1])
    numeric = (f2 - f1) / x_probe
    band = 1e-9 * (c_bar + k_h * np.cumsum(powers))
    a_neg = analytic < 0
    n_neg = numeric < 0
    clear = np.abs(analytic) > band
    bad = np.flatnonzero(clear & (a_neg != n_neg))
    if bad.size:
        t = int(bad[0])
        raise OracleDisagreementError(
            f"slope sign mismatch at t={t}: closed form {analytic[t]!r}, numeric {numeric[t]!r}")
    hits = np.flatnonzero(a_neg)
    n = int(hits[0]) if hits.size else INF
    if detail:
        return NAlphaOracle(n, analytic, numeric)
    return n


def extract_sS(f: GFunction, K: float, *, upper_is_bound: bool = False) -> tuple[float, float]:
    """(s, S) from a grid function: S the smallest argmin, s the smallest x with
    f(x) <= K + f(S) (up to a scale-relative slack).

    A minimizer on the grid edge means the grid is too narrow, unless
    ``upper_is_bound`` says the top of the grid is a genuine storage limit.
    """
    vals = np.asarray(f.values)
    x = f.grid.points
    if np.all(vals == vals[0]):
        raise ExtractionError("f is constant on the grid; every point is a minimizer")
    j = int(np.argmin(vals))
    if j == 0 or (j == len(vals) - 1 and not upper_is_bound):
        raise ExtractionError(f"minimum of f sits on the grid edge at x={x[j]}; widen the grid")
    eps = 1e-9 * (1.0 + abs(vals[j]) + K)
    i = int(np.flatnonzero(vals <= K + vals[j] + eps)[0])
    return float(x[i]), float(x[j])


def threshold_properties(f: GFunction, K: float, s: float, S: float, eps: float | None = None) -> dict:
    """Check the three classical (s, S) facts on the grid.

    (i)   f(S) + K < f(x) for x < s
    (ii)  f nonincreasing on x <= s
    (iii) f(x) <= f(z) + K for s <= x <= z
    """
    vals = np.asarray(f.values)
    x = f.grid.points
    if eps is None:
        eps = 1e-9 * (1.0 + float(np.max(np.abs(vals))) + K)
    fS = vals[f.grid.index(S)]
    left = x < s
    i_ok = bool(np.all(fS + K < vals[left] + eps))
    upto = vals[x <= s]
    ii_ok = bool(np.all(np.diff(upto) <= eps))
    tail = vals[x >= s]
    suffix_min = np.minimum.accumulate(tail[::-1])[::-1]
    iii_ok = bool(np.all(tail <= suffix_min + K + eps))
    return {"i": i_ok, "ii": ii_ok, "iii": iii_ok}


@dataclass(frozen=True)
class KConvexity:
    passed: bool
    worst_violation: float
    witness: tuple | None = None

    def __bool__(self):
        return self.passed


def _violations_at(vals, x, K, zi):
    """Violation of the K-convexity inequality for every pair x_i < x_zi < x_j."""
    fz = vals[zi]
    xl, fl = x[:zi], vals[:zi]
    xr, fr = x[zi + 1:], vals[zi + 1:]
    span = xr[None, :] - xl[:, None]
    theta = (xr[None, :] - x[zi]) / span
    rhs = theta * fl[:, None] + (1 - theta) * (fr[None, :] + K)
    return fz - rhs


def k_convexity_check(f: GFunction, K: float, tolerance: float | None = None, method: str = "auto") -> KConvexity:
    """Test the K-convexity inequality over all grid triples.

    ``method="naive"`` evaluates every triple.  ``"fast"`` first compares, for
    each middle point z, the steepest chord into z from the left with the
    flattest K-shifted chord out of z to the right; the triple test for that z
    is evaluated only when this screen fails, so both methods return the same
    verdict and worst violation.

    The default tolerance absorbs rounding in the chord arithmetic only:
    1e-12 * (1 + K + max|f|).
    """
    vals = np.asarray(f.values, dtype=float)
    x = f.grid.points
    n = len(vals)
    if n < 3:
        raise DomainError("K-convexity check needs at least 3 grid points")
    if method == "auto":
        method = "naive" if n <= 200 else "fast"
    worst, witness = -INF, None
    for zi in range(1, n - 1):
        if method == "fast":
            left = np.max((vals[zi] - vals[:zi]) / (x[zi] - x[:zi]))
            right = np.min((vals[zi + 1:] + K - vals[zi]) / (x[zi + 1:] - x[zi]))
            if left <= right:
                continue
        elif method != "naive":
            raise ValueError(f"unknown method {method!r}")
        viol = _violations_at(vals, x, K, zi)
        a, b = np.unravel_index(np.argmax(viol), viol.shape)
        if viol[a, b] > worst:
            worst = float(viol[a, b])
            witness = (float(x[a]), float(x[zi]), float(x[zi + 1 + b]))
    if worst == -INF:
        worst = 0.0
    worst = max(worst, 0.0)
    if tolerance is None:
        tolerance = 1e-12 * (1.0 + abs(K) + float(np.max(np.abs(vals))))
    passed = worst <= tolerance
    return KConvexity(passed, worst, None if worst <= 0 else witness)


def order_envelope(f: GFunction, K: float, x_bar: float = INF) -> GFunction:
    """g(x) = min{ f(x), K + min_{0 < a <= cap(x)} f(x + a) } over grid orders."""
    vals = np.asarray(f.values, dtype=float)
    if math.isfinite(x_bar) and abs(x_bar - f.grid.x_max) > 1e-9:
        raise DomainError(f"x_bar={x_bar} must coincide with the grid top {f.grid.x_max}")
    suffix = np.minimum.accumulate(vals[::-1])[::-1]
    ahead = np.append(suffix[1:], INF)
    return GFunction(f.grid, np.minimum(vals, K + ahead), f.stage)


@dataclass(frozen=True)
class StructuredPolicy:
    """``kind`` is "never-order", "sS" or "sStN".

    For "sStN", ``thresholds[t]`` is (s_t, S_t) for stages t = 0..N-n-1 and the
    last ``n`` stages order nothing.
    """

    kind: str
    s: float | None = None
    S: float | None = None
    thresholds: tuple = ()
    n: int = 0
    N: int | None = None

    def __post_init__(self):
        pairs = list(self.thresholds) + ([(self.s, self.S)] if self.kind == "sS" else [])
        for s, S in pairs:
            if not s <= S:
                raise DomainError(f"threshold pair needs s <= S, got ({s}, {S})")
        if self.kind == "sStN" and self.N is not None and len(self.thresholds) != self.N - self.n:
            raise DomainError("sStN needs one threshold pair per ordering stage")

    @classmethod
    def never_order(cls):
        return cls("never-order")

    @classmethod
    def sS(cls, s, S):
        return cls("sS", s=float(s), S=float(S))

    def stage_thresholds(self, t: int = 0):
        if self.kind == "never-order":
            return None
        if self.kind == "sS":
            return self.s, self.S
        return self.thresholds[t] if t < len(self.thresholds) else None

    def action(self, x, t: int = 0):
        """Order (S_t - x) 1{x < s_t} at arbitrary real levels."""
        x = np.asarray(x, dtype=float)
        pair = self.stage_thresholds(t)
        if pair is None:
            return np.zeros_like(x)
        s, S = pair
        return np.where(x < s, S - x, 0.0)

    def to_table(self, grid: Grid, t: int = 0) -> PolicyTable:
        return PolicyTable(grid, self.action(grid.points, t))


def _structured_scope(spec: ModelSpec):
    if spec.shortfall is not Shortfall.BACKORDERS or spec.regime.kind not in ("U", "BS"):
        raise StructureUnsupportedError(
            f"structured optimal policies are established only for regimes U and BS with backorders "
            f"(got {spec.regime.kind}, {spec.shortfall.value})")


def build_structured_policy(spec: ModelSpec, grid: Grid, N: Horizon, products) -> StructuredPolicy:
    """Assemble the structured optimal policy from solver products.

    ``products`` is a FiniteHorizonSolution (finite N) or an
    InfiniteHorizonSolution (``N="infinite"``).
    """
    _structured_scope(spec)
    a_star = alpha_star(spec.h, spec.c_bar)
    alpha = spec.alpha
    if a_star >= 0 and alpha <= a_star:
        return StructuredPolicy.never_order()
    bound = spec.regime.bounded_storage
    if N == "infinite":
        if not isinstance(products, InfiniteHorizonSolution):
            raise TypeError("infinite horizon needs an InfiniteHorizonSolution")
        s, S = extract_sS(products.g, spec.K, upper_is_bound=bound)
        return StructuredPolicy.sS(s, S)
    if not isinstance(products, FiniteHorizonSolution):
        raise TypeError("finite horizon needs a FiniteHorizonSolution")
    n_alpha = n_alpha_formula(a_star, alpha)
    if N <= n_alpha:
        return StructuredPolicy.never_order()
    if len(products.g_functions) < N:
        raise DomainError(f"solver products cover {len(products.g_functions)} stages, need {N}")
    pairs = tuple(extract_sS(products.g_functions[N - t - 1], spec.K, upper_is_bound=bound)
                  for t in range(N - n_alpha))
    return StructuredPolicy("sStN", thresholds=pairs, n=int(n_alpha), N=int(N))


def classify_regime(a_star: float, alpha: float, horizon: Horizon = "finite") -> str:
    """Region label "R_0", "R_<n>" or "R_inf" of the (alpha_star, alpha) plane."""
    _check_alpha(alpha)
    if a_star >= 0 and alpha <= a_star:
        return "R_inf"
    if horizon == "infinite":
        return "R_0"
    if a_star < 0:
        return "R_0"
    return f"R_{n_alpha_formula(a_star, alpha)}"


@dataclass(frozen=True)
class SandwichVerdict:
    passed: bool
    lower_margin: float
    upper_margin: float
    bound: float


def sandwich_check(v: ValueFunction, v0: ValueFunction, spec: ModelSpec, N: Horizon, slack: float) -> SandwichVerdict:
    """v0 <= v <= v0 + K (1 - alpha^N) / (1 - alpha) pointwise within ``slack``.

    Margins are min(v - v0) and min(v0 + bound - v); negative means violated.
    """
    if v.grid != v0.grid:
        raise DomainError("value functions live on different grids")
    alpha = spec.alpha
    factor = 1.0 / (1.0 - alpha) if N == "infinite" else (1.0 - alpha ** N) / (1.0 - alpha)
    bound = spec.K * factor
    diff = np.asarray(v.values) - np.asarray(v0.values)
    lower = float(np.min(diff))
    upper = float(np.min(bound - diff))
    return SandwichVerdict(lower >= -slack and upper >= -slack, lower, upper, bound)


@dataclass
class StructureReport:
    alpha_star: float
    k_h: float
    N_alpha: float
    regime_label: str
    thresholds: StructuredPolicy | None = None
    kconvexity: list = field(default_factory=list)
    oracle_N_alpha: float | None = None
    oracle_agrees: bool | None = None
    unsupported: str | None = None
