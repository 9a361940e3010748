"""
Problem instances for periodic-review inventory control with setup costs.

An instance bundles the fixed ordering cost ``K``, the unit ordering cost
``c_bar``, a convex holding/backorder cost ``h``, a finite-atom demand
distribution, the discount factor, one of four constraint regimes and the
rule applied to unmet demand:

    x_{t+1} = T(x_t + a_t - D_{t+1}),   T(x) = x  (backorders)
                                         T(x) = max(0, x)  (lost sales)

    c(x, a) = K 1{a > 0} + c_bar a + E h(T(x + a - D))

Regimes:
    U    unbounded orders, unbounded storage   A(x) = [0, inf)
    BO   bounded orders, unbounded storage     A(x) = [0, a_bar]
    BS   unbounded orders, bounded storage     A(x) = [0, max(0, x_bar - x)]
    BOS  bounded orders, bounded storage       A(x) = [0, a_bar] & [0, max(0, x_bar - x)]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConstraintError, DomainError, InvalidSpecError

INF = math.inf


class Shortfall(str, Enum):
    BACKORDERS = "backorders"
    LOST_SALES = "lost-sales"

    def apply(self, x):
        if self is Shortfall.LOST_SALES:
            return np.maximum(0.0, x)
        return x


def _conv_eps(values):
    return 1e-9 * (1.0 + float(np.max(np.abs(values))))


@dataclass(frozen=True)
class HoldingCost:
    """Convex holding/backorder cost, normalized so that ``inf h = 0``.

    ``kind="piecewise-linear"`` stores ``pieces`` as (slope, intercept) pairs
    and evaluates ``max_i(slope_i x + intercept_i)``.  ``kind="tabulated"``
    stores ``table`` as (x, h) pairs, interpolates linearly inside the table
    and extends linearly outside it with the edge slopes.
    """

    kind: str
    pieces: tuple = ()
    table: tuple = ()

    def __post_init__(self):
        if self.kind == "piecewise-linear":
            pieces = tuple(sorted((float(a), float(b)) for a, b in self.pieces))
            if pieces:
                shift = _pwl_min(pieces)
                if math.isfinite(shift):
                    pieces = tuple((a, b - shift) for a, b in pieces)
            object.__setattr__(self, "pieces", pieces)
        elif self.kind == "tabulated":
            table = tuple(sorted((float(x), float(h)) for x, h in self.table))
            if table:
                shift = min(h for _, h in table)
                if math.isfinite(shift):
                    table = tuple((x, h - shift) for x, h in table)
            object.__setattr__(self, "table", table)
        else:
            raise ValueError(f"unknown holding cost kind {self.kind!r}")

    @classmethod
    def piecewise_linear(cls, pieces: Sequence[tuple[float, float]]) -> "HoldingCost":
        return cls("piecewise-linear", pieces=tuple(pieces))

    @classmethod
    def linear(cls, holding: float, backorder: float) -> "HoldingCost":
        """``h(x) = holding * max(x, 0) + backorder * max(-x, 0)``."""
        return cls.piecewise_linear([(-backorder, 0.0), (holding, 0.0)])

    @classmethod
    def tabulated(cls, xs, hs) -> "HoldingCost":
        return cls("tabulated", table=tuple(zip(np.asarray(xs, float), np.asarray(hs, float))))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "piecewise-linear":
            s = np.array([p[0] for p in self.pieces])
            b = np.array([p[1] for p in self.pieces])
            return np.max(s.reshape((-1,) + (1,) * x.ndim) * x + b.reshape((-1,) + (1,) * x.ndim), axis=0)
        xs, hs = self.table_arrays()
        out = np.interp(x, xs, hs)
        left, right = self.edge_slopes()
        out = np.where(x < xs[0], hs[0] + left * (x - xs[0]), out)
        out = np.where(x > xs[-1], hs[-1] + right * (x - xs[-1]), out)
        return out

    def table_arrays(self):
        xs = np.array([t[0] for t in self.table])
        hs = np.array([t[1] for t in self.table])
        return xs, hs

    def edge_slopes(self) -> tuple[float, float]:
        """One-sided slopes at the far left and far right of the representation."""
        if self.kind == "piecewise-linear":
            return self.pieces[0][0], self.pieces[-1][0]
        if len(self.table) < 2:
            raise DomainError("tabulated holding cost needs at least 2 points to estimate edge slopes")
        (x0, h0), (x1, h1) = self.table[0], self.table[1]
        (y0, g0), (y1, g1) = self.table[-2], self.table[-1]
        return (h1 - h0) / (x1 - x0), (g1 - g0) / (y1 - y0)

    @property
    def left_slope_magnitude(self) -> float:
        """k_h = -lim_{x -> -inf} h(x) / x."""
        return -self.edge_slopes()[0]

    def kinks(self) -> np.ndarray:
        """Breakpoints of the representation (piece intersections or table nodes)."""
        if self.kind == "tabulated":
            return self.table_arrays()[0]
        pts = []
        for (a1, b1), (a2, b2) in zip(self.pieces, self.pieces[1:]):
            if a1 != a2:
                pts.append((b1 - b2) / (a2 - a1))
        return np.array(pts)

    def violations(self) -> list[str]:
        out = []
        if self.kind == "piecewise-linear":
            if not self.pieces:
                return ["h: piecewise-linear cost needs at least one piece"]
            if not all(math.isfinite(a) and math.isfinite(b) for a, b in self.pieces):
                out.append("h: pieces must be finite")
            left, right = self.edge_slopes()
            if not left < 0:
                out.append("h: leftmost slope must be < 0 so that h -> inf as x -> -inf")
            if not right > 0:
                out.append("h: rightmost slope must be > 0 so that h -> inf as x -> +inf")
            return out
        if len(self.table) < 3:
            return ["h: tabulated cost needs at least 3 points"]
        xs, hs = self.table_arrays()
        if not np.all(np.isfinite(hs)) or not np.all(np.isfinite(xs)):
            out.append("h: table values must be finite")
            return out
        if np.any(np.diff(xs) <= 0):
            out.append("h: table abscissae must be strictly increasing")
            return out
        slopes = np.diff(hs) / np.diff(xs)
        if np.any(np.diff(slopes) < -_conv_eps(hs)):
            out.append("h: tabulated cost must be convex")
        if not slopes[0] < 0:
            out.append("h: left edge slope must be < 0")
        if not slopes[-1] > 0:
            out.append("h: right edge slope must be > 0")
        return out


def _pwl_min(pieces):
    """Minimum of max_i(a_i x + b_i); -inf if unbounded below."""
    slopes = [a for a, _ in pieces]
    if min(slopes) >= 0 or max(slopes) <= 0:
        if min(slopes) == max(slopes) == 0:
            return max(b for _, b in pieces)
        return -INF
    cands = []
    for i, (a1, b1) in enumerate(pieces):
        for a2, b2 in pieces[i + 1:]:
            if a1 != a2:
                cands.append((b1 - b2) / (a2 - a1))
    cands = np.array(cands)
    vals = np.max(np.array([a * cands + b for a, b in pieces]), axis=0)
    return float(np.min(vals))


@dataclass(frozen=True)
class DemandDistribution:
    """Finite-atom demand: ``atoms`` are (d, p) pairs sorted by d."""

    atoms: tuple

    def __post_init__(self):
        merged: dict[float, float] = {}
        for d, p in self.atoms:
            merged[float(d)] = merged.get(float(d), 0.0) + float(p)
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))

    @classmethod
    def dirac(cls, d: float) -> "DemandDistribution":
        return cls(((d, 1.0),))

    @classmethod
    def from_pmf(cls, values, probs) -> "DemandDistribution":
        return cls(tuple(zip(values, probs)))

    @property
    def values(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])

    @property
    def mean(self) -> float:
        return float(self.values @ self.probs)

    def steps(self, delta: float) -> np.ndarray:
        """Atoms as integer multiples of ``delta``; raises if any atom is off-lattice."""
        k = np.rint(self.values / delta)
        if np.any(np.abs(k * delta - self.values) > 1e-9 * max(1.0, delta)):
            raise DomainError(f"demand atoms {self.values.tolist()} are not multiples of the grid step {delta}")
        return k.astype(np.int64)

    def violations(self) -> list[str]:
        out = []
        if not self.atoms:
            return ["demand: at least one atom required"]
        d, p = self.values, self.probs
        if abs(p.sum() - 1.0) > 1e-12:
            out.append(f"demand: probabilities must sum to 1 (got {p.sum()!r})")
        if np.any(p <= 0):
            out.append("demand: every probability must be > 0")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            out.append("demand: atoms must be finite and >= 0")
        if not np.any(d > 0):
            out.append("demand: P(D>0)>0 required")
        return out


@dataclass(frozen=True)
class ConstraintRegime:
    kind: str = "U"
    a_bar: float = INF
    x_bar: float = INF

    @classmethod
    def U(cls):
        return cls("U")

    @classmethod
    def BO(cls, a_bar):
        return cls("BO", a_bar=float(a_bar))

    @classmethod
    def BS(cls, x_bar):
        return cls("BS", x_bar=float(x_bar))

    @classmethod
    def BOS(cls, a_bar, x_bar):
        return cls("BOS", a_bar=float(a_bar), x_bar=float(x_bar))

    @property
    def bounded_orders(self) -> bool:
        return self.kind in ("BO", "BOS")

    @property
    def bounded_storage(self) -> bool:
        return self.kind in ("BS", "BOS")

    def violations(self) -> list[str]:
        if self.kind not in ("U", "BO", "BS", "BOS"):
            return [f"regime: unknown kind {self.kind!r}"]
        out = []
        if self.bounded_orders and not (0 < self.a_bar < INF):
            out.append(f"regime: {self.kind} requires finite a_bar > 0")
        if not self.bounded_orders and self.a_bar != INF:
            out.append(f"regime: {self.kind} requires unbounded a_bar")
        if self.bounded_storage and not (0 < self.x_bar < INF):
            out.append(f"regime: {self.kind} requires finite x_bar > 0")
        if not self.bounded_storage and self.x_bar != INF:
            out.append(f"regime: {self.kind} requires unbounded x_bar")
        return out


@dataclass(frozen=True)
class ModelSpec:
    K: float
    c_bar: float
    h: HoldingCost
    demand: DemandDistribution
    alpha: float
    regime: ConstraintRegime = field(default_factory=ConstraintRegime.U)
    shortfall: Shortfall = Shortfall.BACKORDERS

    def __post_init__(self):
        object.__setattr__(self, "shortfall", Shortfall(self.shortfall))


def validate(spec: ModelSpec) -> list[str]:
    """Return all violated invariants of ``spec`` (empty when well formed)."""
    out = []
    if not spec.K > 0:
        out.append("K must be > 0")
    if not spec.c_bar > 0:
        out.append("c_bar must be > 0")
    if not 0 <= spec.alpha < 1:
        out.append("alpha must lie in [0, 1)")
    out += spec.h.violations()
    out += spec.demand.violations()
    out += spec.regime.violations()
    return out


def check(spec: ModelSpec) -> ModelSpec:
    violations = validate(spec)
    if violations:
        raise InvalidSpecError(violations)
    return spec


def in_state_space(x, regime: ConstraintRegime, shortfall=Shortfall.BACKORDERS) -> bool:
    if Shortfall(shortfall) is Shortfall.LOST_SALES and x < 0:
        return False
    return not (regime.bounded_storage and x > regime.x_bar)


def max_order(x: float, regime: ConstraintRegime) -> float:
    """Right end of A(x) without any state-space check."""
    cap = regime.a_bar
    if regime.bounded_storage:
        cap = min(cap, max(0.0, regime.x_bar - x))
    return cap


def feasible_actions(x: float, regime: ConstraintRegime, shortfall=Shortfall.BACKORDERS) -> tuple[float, float]:
    """Feasible orders at ``x`` as the closed interval ``(0, a_max)``."""
    if not in_state_space(x, regime, shortfall):
        raise DomainError(f"state {x} is outside the state space of regime {regime.kind} ({Shortfall(shortfall).value})")
    return 0.0, max_order(x, regime)


def _check_order(x, a, regime, shortfall):
    lo, hi = feasible_actions(x, regime, shortfall)
    if not (lo <= a <= hi + 1e-12 * max(1.0, abs(hi) if math.isfinite(hi) else 1.0)):
        raise ConstraintError(f"order {a} infeasible at state {x} in regime {regime.kind}: A(x) = [0, {hi}]")


def transition(x: float, a: float, d: float, shortfall=Shortfall.BACKORDERS, regime: ConstraintRegime | None = None) -> float:
    """Next inventory level ``T(x + a - d)``."""
    if a < 0:
        raise ConstraintError(f"order {a} is negative")
    if d < 0:
        raise DomainError(f"demand {d} is negative")
    if regime is not None:
        _check_order(x, a, regime, shortfall)
    return float(Shortfall(shortfall).apply(x + a - d))


def expected_holding(y, spec: ModelSpec):
    """``E h(T(y - D))`` for a post-order level ``y`` (scalar or array)."""
    y = np.asarray(y, dtype=float)
    d, p = spec.demand.values, spec.demand.probs
    post = spec.shortfall.apply(y[..., None] - d)
    out = spec.h(post) @ p
    return float(out) if out.ndim == 0 else out


def one_step_cost(x: float, a: float, spec: ModelSpec) -> float:
    _check_order(x, a, spec.regime, spec.shortfall)
    return (spec.K if a > 0 else 0.0) + spec.c_bar * a + expected_holding(x + a, spec)
