"""Market dynamics for execution under transient price impact.

A block trade walks the quoted price up the book and the book only refills at a
finite resilience rate, so every trade leaves a temporary spread behind it.  The
state carried between trading dates is (cash xi, half-spread zeta, position x):

    zeta_{t+1} = exp(-r_t) * zeta_t + |dx| / delta_{t+1}
    xi_{t+1}   = xi_t - P_{t+1} * dx - zeta_{t+1} * |dx|

with midprice P, resilience r >= 0 and book depth delta > 0.  Unwinding the
spread recursion gives a closed form for the cash generated by the trade at
date t (``cash_innovation``), and terminal wealth is the sum of those
innovations.  Both routes are implemented and must agree to float precision;
the explicit route is the reference used by the exhaustive oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "MarketPath",
    "TradeSequence",
    "ImpactState",
    "decay_factor",
    "spread_step",
    "cash_step",
    "cash_innovation",
    "innovation_envelope",
    "closing_trade",
    "terminal_wealth_explicit",
    "terminal_wealth_recursive",
    "LIQUIDATION_TOL",
]

# strategies must return the position to zero within this absolute tolerance
LIQUIDATION_TOL = 1e-12

# precompute the full decay table only for horizons where O(T^2) memory is free
_RHO_TABLE_MAX_T = 64


def _as_float_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class MarketPath:
    """One deterministic scenario of the market over T trading dates.

    Fields follow the trading calendar: ``P`` holds midprices at dates 0..T,
    ``r`` holds resilience rates applied over the steps 0..T-1, and ``delta``
    holds the book depth met by the trades at dates 1..T (``delta[0]`` is the
    depth at date 1; there is no depth at date 0 because nothing trades there).
    ``P[0]`` is carried for path fidelity only; no wealth formula reads it.

    ``delta_min`` is the positive depth floor the path must respect; it
    defaults to the smallest depth present.
    """

    T: int
    zeta0: float
    P: np.ndarray
    r: np.ndarray
    delta: np.ndarray
    delta_min: float | None = None
    _rsums: np.ndarray = field(init=False, repr=False, compare=False)
    _rho_table: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.T < 2:
            raise ValueError("horizon T must be at least 2")
        P = _as_float_array(self.P, "P")
        r = _as_float_array(self.r, "r")
        delta = _as_float_array(self.delta, "delta")
        if P.shape[0] != self.T + 1:
            raise ValueError(f"P must have T+1={self.T + 1} entries, got {P.shape[0]}")
        if r.shape[0] != self.T:
            raise ValueError(f"r must have T={self.T} entries, got {r.shape[0]}")
        if delta.shape[0] != self.T:
            raise ValueError(f"delta must have T={self.T} entries, got {delta.shape[0]}")
        if np.any(r < 0.0):
            raise ValueError("resilience r must be nonnegative")
        floor = float(np.min(delta)) if self.delta_min is None else float(self.delta_min)
        if floor <= 0.0 or np.any(delta < floor):
            raise ValueError("depth delta must stay above a positive floor")
        if self.zeta0 < 0.0:
            raise ValueError("initial half-spread zeta0 must be nonnegative")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "delta_min", floor)
        # prefix sums of r: rsums[k] = r_0 + ... + r_{k-1}, built by left fold
        # so tree walks can reproduce the identical floats incrementally
        rsums = np.empty(self.T + 1, dtype=np.float64)
        acc = 0.0
        rsums[0] = acc
        for k in range(self.T):
            acc = acc + float(r[k])
            rsums[k + 1] = acc
        object.__setattr__(self, "_rsums", rsums)
        table = None
        if self.T <= _RHO_TABLE_MAX_T:
            table = np.ones((self.T + 1, self.T + 1), dtype=np.float64)
            for j in range(self.T + 1):
                for t in range(j, self.T + 1):
                    table[j, t] = math.exp(-(rsums[t] - rsums[j]))
        object.__setattr__(self, "_rho_table", table)

    def decay(self, j: int, t: int) -> float:
        """Spread decay factor accumulated over the steps j..t-1 (1.0 at j == t)."""
        if not 0 <= j <= t <= self.T:
            raise ValueError(f"need 0 <= j <= t <= T, got j={j}, t={t}")
        if self._rho_table is not None:
            return float(self._rho_table[j, t])
        return math.exp(-(float(self._rsums[t]) - float(self._rsums[j])))


@dataclass(frozen=True)
class TradeSequence:
    """Trades executed at dates 1..T on a path."""

    h: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", _as_float_array(self.h, "h"))

    @property
    def T(self) -> int:
        return self.h.shape[0]

    @property
    def is_liquidating(self) -> bool:
        return abs(_left_fold_sum(self.h)) <= LIQUIDATION_TOL


@dataclass(frozen=True)
class ImpactState:
    """Post-trade book state: half-spread zeta >= 0, cash xi, position x."""

    zeta: float
    xi: float
    x: float

    def __post_init__(self) -> None:
        if self.zeta < 0.0:
            raise ValueError("half-spread zeta must be nonnegative")


class InnovationEnvelope(NamedTuple):
    value: float
    cap: float


class RecursiveWealth(NamedTuple):
    xi: float
    spreads: np.ndarray


def _left_fold_sum(values: Sequence[float]) -> float:
    acc = 0.0
    for v in values:
        acc = acc + float(v)
    return acc


def decay_factor(r: Sequence[float], j: int, t: int) -> float:
    """exp of minus the resilience accumulated over steps j..t-1.

    ``r`` lists the per-step resilience rates r_0..r_{T-1}; the factor tells
    how much of a spread opened just after date j survives to date t.
    """
    T = len(r)
    if not 0 <= j <= t <= T:
        raise ValueError(f"need 0 <= j <= t <= {T}, got j={j}, t={t}")
    acc = 0.0
    for i in range(j, t):
        ri = float(r[i])
        if ri < 0.0:
            raise ValueError("resilience r must be nonnegative")
        acc = acc + ri
    return math.exp(-acc)


def spread_step(zeta: float, r_t: float, delta_next: float, dx: float) -> float:
    """One step of the half-spread recursion: decay, then widen by |dx|/depth."""
    if zeta < 0.0:
        raise ValueError("half-spread zeta must be nonnegative")
    if r_t < 0.0:
        raise ValueError("resilience r must be nonnegative")
    if delta_next <= 0.0:
        raise ValueError("depth delta must be positive")
    return math.exp(-r_t) * zeta + abs(dx) / delta_next


def cash_step(xi: float, p_next: float, zeta_next: float, dx: float) -> float:
    """Cash after trading dx at midprice p_next against half-spread zeta_next."""
    if zeta_next < 0.0:
        raise ValueError("half-spread zeta must be nonnegative")
    return xi - p_next * dx - zeta_next * abs(dx)


def _kappa_core(
    zeta0: float,
    rsums: Sequence[float],
    deltas: Sequence[float],
    price: float,
    h: Sequence[float],
) -> float:
    """Cash innovation of the last trade in ``h`` given per-path prefix data.

    ``rsums`` are left-fold prefix sums of the resilience rates (rsums[0]=0,
    length >= len(h)+1), ``deltas[j-1]`` is the depth met by trade j, ``price``
    is the midprice at the date of the last trade.  Kept free of array types so
    oracle walks can call it with incrementally built lists and reproduce the
    exact floats of the path-based API.
    """
    t = len(h)
    s = float(rsums[t])
    acc = math.exp(-(s - float(rsums[0]))) * zeta0
    for j in range(1, t + 1):
        acc += math.exp(-(s - float(rsums[j]))) / float(deltas[j - 1]) * abs(float(h[j - 1]))
    last = float(h[t - 1])
    return -price * last - abs(last) * acc


def _kappa_from_table(path: MarketPath, h: Sequence[float]) -> float:
    t = len(h)
    table = path._rho_table
    acc = float(table[0, t]) * path.zeta0
    for j in range(1, t + 1):
        acc += float(table[j, t]) / float(path.delta[j - 1]) * abs(float(h[j - 1]))
    last = float(h[t - 1])
    return -float(path.P[t]) * last - abs(last) * acc


def cash_innovation(path: MarketPath, h: Sequence[float]) -> float:
    """Cash generated by the trade at date t = len(h), history h = (h_1..h_t).

    Equals minus the trade's notional at midprice minus the spread cost the
    trade pays, where the spread charged is the decayed initial spread plus the
    decayed footprint of every trade up to and including this one.
    """
    t = len(h)
    if not 1 <= t <= path.T:
        raise ValueError(f"history length must be in 1..{path.T}, got {t}")
    if path._rho_table is not None:
        return _kappa_from_table(path, h)
    return _kappa_core(path.zeta0, path._rsums, path.delta, float(path.P[t]), h)


def innovation_envelope(p_t: float, delta_t: float, h_t: float) -> InnovationEnvelope:
    """History-free concave upper envelope of the cash innovation.

    Dropping every nonnegative spread term except the trade's own footprint
    bounds the innovation by -p*h - h^2/delta, which in turn is capped at
    p^2*delta/4.  Returns (value, cap).
    """
    if delta_t <= 0.0:
        raise ValueError("depth delta must be positive")
    value = -p_t * h_t - h_t * h_t / delta_t
    cap = p_t * p_t * delta_t / 4.0
    return InnovationEnvelope(value, cap)


def closing_trade(h: Sequence[float]) -> float:
    """Final trade that returns the position to exactly zero after trades h."""
    total = _left_fold_sum(h)
    if total == 0.0:
        return 0.0
    return -total


def terminal_wealth_explicit(path: MarketPath, trades: TradeSequence | Sequence[float]) -> float:
    """Terminal cash as the date-ascending sum of cash innovations."""
    h = trades.h if isinstance(trades, TradeSequence) else _as_float_array(trades, "h")
    if h.shape[0] != path.T:
        raise ValueError(f"need T={path.T} trades, got {h.shape[0]}")
    acc = 0.0
    for t in range(1, path.T + 1):
        acc += cash_innovation(path, h[:t])
    return acc


def terminal_wealth_recursive(
    path: MarketPath, trades: TradeSequence | Sequence[float]
) -> RecursiveWealth:
    """Terminal cash via the state recursion; also returns the spread trace.

    Starts from (xi, zeta) = (0, zeta0) and applies ``spread_step`` and
    ``cash_step`` date by date.  Agrees with ``terminal_wealth_explicit`` to
    float rounding; the pair is the package's first line of defense against
    index slips in either form.
    """
    h = trades.h if isinstance(trades, TradeSequence) else _as_float_array(trades, "h")
    if h.shape[0] != path.T:
        raise ValueError(f"need T={path.T} trades, got {h.shape[0]}")
    xi = 0.0
    zeta = path.zeta0
    spreads = np.empty(path.T, dtype=np.float64)
    for t in range(path.T):
        dx = float(h[t])
        zeta = spread_step(zeta, float(path.r[t]), float(path.delta[t]), dx)
        xi = cash_step(xi, float(path.P[t + 1]), zeta, dx)
        spreads[t] = zeta
    return RecursiveWealth(xi, spreads)
