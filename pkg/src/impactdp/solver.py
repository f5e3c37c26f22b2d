"""Backward-induction solver on scenario trees.

The value functions are indexed by the sufficient statistic (xi, zeta, x):
cash, half-spread and position.  Leaves evaluate terminal utility, the last
decision date is forced (the position must be closed), and every earlier date
maximizes the one-step objective over a symmetric action grid whose half-width
K is expanded until the boundary trades are provably dominated by doing
nothing.  Value functions at interior dates live on rectangular grids and are
read back with clamped multilinear interpolation, except that children at the
last decision date are always evaluated in closed form (one cheap sum over
their leaves), which removes the largest interpolation error from the root
value.

``evaluate_strategy`` walks the tree with the explicit cash-innovation form
and is the single evaluation path shared with the exhaustive oracles, which is
what makes oracle cross-checks exact rather than approximate.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .dynamics import _kappa_core, closing_trade
from .tree import PredictableAssignment, ScenarioTree, TreeNode
from .utility import UtilitySpec

__all__ = [
    "MarketState",
    "SolveConfig",
    "GridAxes",
    "NodeGrid",
    "ValueFunctions",
    "SolveReport",
    "OneStep",
    "SolverNumericError",
    "backward_induce",
    "one_step_optimize",
    "forward_extract",
    "evaluate_strategy",
    "exact_state_dp",
    "solve",
]


class SolverNumericError(RuntimeError):
    """Raised when a value layer contains NaN or +inf."""


@dataclass(frozen=True)
class MarketState:
    """Exact solver state: cash xi, half-spread zeta >= 0, position x."""

    xi: float
    zeta: float
    x: float

    def __post_init__(self) -> None:
        if self.zeta < 0.0:
            raise ValueError("half-spread zeta must be nonnegative")


@dataclass(frozen=True)
class GridAxes:
    xi: np.ndarray
    zeta: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class SolveConfig:
    """Grid geometry and action-search policy for one solve.

    ``None`` bounds are auto-sized from the tree: the position axis covers
    +-(k0*T), the spread axis covers the worst case reachable with trades that
    large, and the cash axis covers price times trade budget plus friction.
    Auto bounds favor coverage over resolution; pass explicit bounds for tight
    value comparisons.
    """

    xi_bounds: tuple[float, float] | None = None
    xi_count: int = 41
    zeta_bounds: tuple[float, float] | None = None
    zeta_count: int = 21
    x_bounds: tuple[float, float] | None = None
    x_count: int = 21
    action_count: int = 201
    k0: float = 1.0
    k_factor: float = 2.0
    max_k_expansions: int = 40
    value_tol: float = 1e-2

    def __post_init__(self) -> None:
        for name in ("xi_count", "zeta_count", "x_count"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        if self.action_count < 3 or self.action_count % 2 == 0:
            raise ValueError("action_count must be odd and at least 3")
        if not self.k0 > 0.0:
            raise ValueError("k0 must be positive")
        if not self.k_factor > 1.0:
            raise ValueError("k_factor must exceed 1")
        if self.max_k_expansions < 0:
            raise ValueError("max_k_expansions must be nonnegative")
        for name in ("xi_bounds", "zeta_bounds", "x_bounds"):
            b = getattr(self, name)
            if b is not None and not b[0] < b[1]:
                raise ValueError(f"{name} must be an increasing pair")
        zb = self.zeta_bounds
        if zb is not None and zb[0] < 0.0:
            raise ValueError("zeta_bounds must be nonnegative")

    def resolve_axes(self, tree: ScenarioTree) -> GridAxes:
        T = tree.T
        x_max = self.k0 * T
        if self.x_bounds is None:
            x_axis = _symmetric_axis(x_max, self.x_count)
        else:
            x_axis = np.linspace(self.x_bounds[0], self.x_bounds[1], self.x_count)
        if self.zeta_bounds is None:
            zeta_hi = tree.zeta0 + 2.0 * x_max * T / tree.delta_min
            zeta_axis = np.linspace(0.0, zeta_hi, self.zeta_count)
        else:
            zeta_hi = self.zeta_bounds[1]
            zeta_axis = np.linspace(self.zeta_bounds[0], zeta_hi, self.zeta_count)
        if self.xi_bounds is None:
            price_abs = max(
                (abs(tree.node(i).P) for i in tree.node_ids() if tree.node(i).t >= 1),
                default=0.0,
            )
            budget = 2.0 * x_max * T
            xi_lo = -budget * (price_abs + zeta_hi)
            xi_hi = budget * price_abs
            if not xi_lo < xi_hi:
                xi_lo, xi_hi = xi_lo - 1.0, xi_hi + 1.0
            xi_axis = np.linspace(xi_lo, xi_hi, self.xi_count)
        else:
            xi_axis = np.linspace(self.xi_bounds[0], self.xi_bounds[1], self.xi_count)
        return GridAxes(xi=xi_axis, zeta=zeta_axis, x=x_axis)

    def echo(self) -> dict:
        return {
            "xi_bounds": list(self.xi_bounds) if self.xi_bounds else None,
            "xi_count": self.xi_count,
            "zeta_bounds": list(self.zeta_bounds) if self.zeta_bounds else None,
            "zeta_count": self.zeta_count,
            "x_bounds": list(self.x_bounds) if self.x_bounds else None,
            "x_count": self.x_count,
            "action_count": self.action_count,
            "k0": self.k0,
            "k_factor": self.k_factor,
            "max_k_expansions": self.max_k_expansions,
            "value_tol": self.value_tol,
        }


def _symmetric_axis(hi: float, n: int) -> np.ndarray:
    """Axis on [-hi, hi]; odd n puts an exact 0.0 at the center."""
    if n % 2 == 0:
        return np.linspace(-hi, hi, n)
    m = (n - 1) // 2
    return np.array([hi * ((i - m) / m) for i in range(n)], dtype=np.float64)


@dataclass
class NodeGrid:
    """Value estimates and maximizing actions for one node, on the state grid."""

    node_id: int
    t: int
    values: np.ndarray
    policy: np.ndarray
    k_expansions: int = 0
    k_warnings: int = 0


@dataclass
class ValueFunctions:
    axes: GridAxes
    layers: dict[int, NodeGrid]
    diagnostics: dict = field(default_factory=dict)


class OneStep(NamedTuple):
    h: float
    value: float
    k_expansions: int
    k_warning: bool


# -- node packing for the kernels ------------------------------------------


def _pack_children(tree: ScenarioTree, node: TreeNode):
    kids = tree.children(node.id)
    cp = np.array([k.p for k in kids], dtype=np.float64)
    cP = np.array([k.P for k in kids], dtype=np.float64)
    cdelta = np.array([k.delta for k in kids], dtype=np.float64)
    return kids, cp, cP, cdelta


def _pack_exact(tree: ScenarioTree, node: TreeNode):
    """Flattened children-plus-leaves data for a node at date T-2."""
    kids, cp, cP, cdelta = _pack_children(tree, node)
    cdecay = np.array([math.exp(-k.r) for k in kids], dtype=np.float64)
    goff = [0]
    gp, gP, gd, gB = [], [], [], []
    for k in kids:
        for leaf in tree.children(k.id):
            gp.append(leaf.p)
            gP.append(leaf.P)
            gd.append(leaf.delta)
            gB.append(leaf.B)
        goff.append(len(gp))
    return (
        cp,
        cP,
        cdelta,
        cdecay,
        np.array(goff, dtype=np.int64),
        np.array(gp, dtype=np.float64),
        np.array(gP, dtype=np.float64),
        np.array(gd, dtype=np.float64),
        np.array(gB, dtype=np.float64),
    )


def _pack_grids(tree: ScenarioTree, node: TreeNode, layers: Mapping[int, NodeGrid]):
    kids, cp, cP, cdelta = _pack_children(tree, node)
    grids = np.ascontiguousarray(np.stack([layers[k.id].values for k in kids]))
    return cp, cP, cdelta, grids


def _configure_threads() -> None:
    raw = os.environ.get("IMPACTDP_THREADS", "").strip()
    if raw:
        try:
            _kernels.set_threads(int(raw))
        except ValueError:
            raise ValueError(f"IMPACTDP_THREADS must be an integer, got {raw!r}")


# -- backward induction -----------------------------------------------------


def backward_induce(
    tree: ScenarioTree, u: UtilitySpec, z: float, config: SolveConfig | None = None
) -> ValueFunctions:
    """Build value and policy grids for every node, leaves first.

    Dates T-1 and T are closed-form layers (forced liquidation, terminal
    utility); dates at and below T-2 run the adaptive one-step sweep.  Raises
    ``SolverNumericError`` if any finished layer contains NaN or +inf.
    """
    config = config or SolveConfig()
    _configure_threads()
    axes = config.resolve_axes(tree)
    ucode, ua, uxs, uys = u.kernel_encoding()
    z = float(z)
    layers: dict[int, NodeGrid] = {}
    shape = (axes.xi.shape[0], axes.zeta.shape[0], axes.x.shape[0])
    for t in range(tree.T, -1, -1):
        for node in tree.nodes_at(t):
            if t == tree.T:
                wealth = z + axes.xi[:, None, None] - node.B
                vals = _kernels._u_numpy(ucode, ua, uxs, uys, np.broadcast_to(wealth, shape).copy())
                grid = NodeGrid(node.id, t, vals, np.zeros(shape))
            elif t == tree.T - 1:
                lp, lP, ld, lB = _leaf_arrays(tree, node)
                vals, pol = _kernels.forced_layer(
                    axes.xi, axes.zeta, axes.x, math.exp(-node.r), lp, lP, ld, lB,
                    ucode, ua, uxs, uys, z,
                )
                grid = NodeGrid(node.id, t, vals, pol)
            elif t == tree.T - 2:
                packed = _pack_exact(tree, node)
                vals, pol, nexp, warn = _kernels.sweep_exact(
                    axes.xi, axes.zeta, axes.x, math.exp(-node.r), *packed,
                    ucode, ua, uxs, uys, z,
                    config.k0, config.k_factor, config.max_k_expansions, config.action_count,
                )
                grid = NodeGrid(node.id, t, vals, pol, int(nexp.max()), int(warn.sum()))
            else:
                cp, cP, cdelta, grids = _pack_grids(tree, node, layers)
                vals, pol, nexp, warn = _kernels.sweep_grid(
                    axes.xi, axes.zeta, axes.x, math.exp(-node.r), cp, cP, cdelta, grids,
                    axes.xi, axes.zeta, axes.x,
                    config.k0, config.k_factor, config.max_k_expansions, config.action_count,
                )
                grid = NodeGrid(node.id, t, vals, pol, int(nexp.max()), int(warn.sum()))
            if np.isnan(grid.values).any() or np.isposinf(grid.values).any():
                raise SolverNumericError(f"non-finite values in the layer of node {node.id}")
            layers[node.id] = grid
    diagnostics = {
        "k_expansions": max((g.k_expansions for g in layers.values()), default=0),
        "k_warnings": sum(g.k_warnings for g in layers.values()),
        "monotonicity_violations": int(
            sum(np.sum(g.values[1:, :, :] < g.values[:-1, :, :]) for g in layers.values())
        ),
    }
    return ValueFunctions(axes=axes, layers=layers, diagnostics=diagnostics)


def _leaf_arrays(tree: ScenarioTree, node: TreeNode):
    kids = tree.children(node.id)
    return (
        np.array([k.p for k in kids], dtype=np.float64),
        np.array([k.P for k in kids], dtype=np.float64),
        np.array([k.delta for k in kids], dtype=np.float64),
        np.array([k.B for k in kids], dtype=np.float64),
    )


def one_step_optimize(
    tree: ScenarioTree,
    node_id: int,
    state: MarketState,
    value_functions: ValueFunctions | None,
    u: UtilitySpec,
    z: float,
    config: SolveConfig | None = None,
) -> OneStep:
    """Optimal trade at one exact state.

    Runs the sweep kernels on a single-point state grid so the semantics
    (action set, K expansion, tie-break toward small then negative trades) are
    exactly those of the grid pass.  At the last decision date the trade is
    forced to close the position and no search happens.
    """
    config = config or SolveConfig()
    node = tree.node(node_id)
    if node.t >= tree.T:
        raise ValueError(f"node {node_id} is a leaf, no trade is chosen there")
    ucode, ua, uxs, uys = u.kernel_encoding()
    z = float(z)
    if node.t == tree.T - 1:
        g = 0.0 if state.x == 0.0 else -state.x
        value = _forced_value(tree, node, state, g, ucode, ua, uxs, uys, z)
        return OneStep(g, value, 0, False)
    xg = np.array([state.xi], dtype=np.float64)
    zg = np.array([state.zeta], dtype=np.float64)
    xxg = np.array([state.x], dtype=np.float64)
    if node.t == tree.T - 2:
        packed = _pack_exact(tree, node)
        vals, pol, nexp, warn = _kernels.sweep_exact(
            xg, zg, xxg, math.exp(-node.r), *packed, ucode, ua, uxs, uys, z,
            config.k0, config.k_factor, config.max_k_expansions, config.action_count,
        )
    else:
        if value_functions is None:
            raise ValueError("value grids are required when children carry grids")
        cp, cP, cdelta, grids = _pack_grids(tree, node, value_functions.layers)
        ax = value_functions.axes
        vals, pol, nexp, warn = _kernels.sweep_grid(
            xg, zg, xxg, math.exp(-node.r), cp, cP, cdelta, grids,
            ax.xi, ax.zeta, ax.x,
            config.k0, config.k_factor, config.max_k_expansions, config.action_count,
        )
    return OneStep(float(pol[0, 0, 0]), float(vals[0, 0, 0]), int(nexp[0, 0, 0]), bool(warn[0, 0, 0]))


def _forced_value(tree, node, state, g, ucode, ua, uxs, uys, z):
    decay = math.exp(-node.r)
    ag = abs(g)
    acc = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for leaf in tree.children(node.id):
            ze2 = decay * state.zeta + ag / leaf.delta
            xi2 = state.xi - leaf.P * g - ze2 * ag
            acc += leaf.p * _kernels.u_scalar(ucode, ua, uxs, uys, z + xi2 - leaf.B)
    return acc


def forward_extract(
    tree: ScenarioTree,
    value_functions: ValueFunctions,
    u: UtilitySpec,
    z: float,
    config: SolveConfig | None = None,
) -> tuple[PredictableAssignment, OneStep, dict]:
    """Replay the policy from the root at exact states.

    Returns the full strategy (a trade for every non-leaf node; forced closure
    at the last decision date), the root one-step result whose value is the
    reported root value, and K-search diagnostics aggregated over every
    exact-state optimization along the way.
    """
    config = config or SolveConfig()
    values: dict[int, float] = {}
    root_step: list[OneStep] = []
    diag = {"k_expansions": 0, "k_warnings": 0}

    def descend(node: TreeNode, state: MarketState, trades: tuple[float, ...]) -> None:
        if node.t == tree.T - 1:
            values[node.id] = closing_trade(trades)
            return
        step = one_step_optimize(tree, node.id, state, value_functions, u, z, config)
        if node.id == tree.root_id:
            root_step.append(step)
        diag["k_expansions"] = max(diag["k_expansions"], step.k_expansions)
        diag["k_warnings"] += int(step.k_warning)
        h = step.h
        values[node.id] = h
        ah = abs(h)
        decay = math.exp(-node.r)
        for child in tree.children(node.id):
            ze1 = decay * state.zeta + ah / child.delta
            xi1 = state.xi - child.P * h - ze1 * ah
            descend(child, MarketState(xi1, ze1, state.x + h), trades + (h,))

    descend(tree.root, MarketState(0.0, tree.zeta0, 0.0), ())
    return PredictableAssignment(values), root_step[0], diag


# -- exact strategy evaluation (shared with the oracles) --------------------


def evaluate_strategy(
    tree: ScenarioTree, assignment: PredictableAssignment, u: UtilitySpec, z: float
) -> float:
    """Expected terminal utility of a liquidating strategy, exactly.

    Wealth along every path is accumulated date by date with the explicit
    cash-innovation form; the expectation is the nested sum over children in
    ascending id order.  The oracles run through this same code path, which is
    what makes their agreement exact.
    """
    if not assignment.is_complete(tree):
        raise ValueError("strategy must assign a trade to every non-leaf node")
    if not assignment.is_liquidating(tree):
        raise ValueError("strategy must return the position to zero on every path")

    def decide(node, rsums, deltas, hs, wealth):
        h = float(assignment.values[node.id])
        return _child_sum(tree, node, rsums, deltas, hs, wealth, h, u, z, decide)

    with np.errstate(over="ignore"):
        return _node_value(tree, tree.root, (0.0,), (), (), 0.0, u, z, decide)


def _child_sum(
    tree: ScenarioTree,
    node: TreeNode,
    rsums: tuple[float, ...],
    deltas: tuple[float, ...],
    hs: tuple[float, ...],
    wealth: float,
    h: float,
    u: UtilitySpec,
    z: float,
    decide: Callable,
) -> float:
    """Expected value over the children of ``node`` after trading ``h``."""
    rs = rsums + (rsums[-1] + float(node.r),)
    hs = hs + (float(h),)
    acc = 0.0
    for child in tree.children(node.id):
        ds = deltas + (float(child.delta),)
        kap = _kappa_core(tree.zeta0, rs, ds, float(child.P), hs)
        acc += child.p * _node_value(tree, child, rs, ds, hs, wealth + kap, u, z, decide)
    return acc


def _node_value(
    tree: ScenarioTree,
    node: TreeNode,
    rsums: tuple[float, ...],
    deltas: tuple[float, ...],
    hs: tuple[float, ...],
    wealth: float,
    u: UtilitySpec,
    z: float,
    decide: Callable,
) -> float:
    if node.t == tree.T:
        return float(u(z + wealth - node.B))
    if node.t == tree.T - 1:
        h = closing_trade(hs)
        return _child_sum(tree, node, rsums, deltas, hs, wealth, h, u, z, decide)
    return decide(node, rsums, deltas, hs, wealth)


# -- exact-state certification ----------------------------------------------


def exact_state_dp(
    tree: ScenarioTree, u: UtilitySpec, z: float, actions: Sequence[float]
) -> tuple[float, PredictableAssignment]:
    """Grid-free backward induction on the exact (xi, zeta, x) state.

    Maximizes over the given action set only (no K expansion), with the same
    tie-break as the grid solver.  Certifies that the reduced state carries
    everything the history does: its value must match the history-indexed
    oracle to float accuracy on any instance small enough to enumerate.
    """
    acts = [float(a) for a in actions]
    if not acts:
        raise ValueError("need a nonempty action set")
    best_h: dict[tuple, float] = {}
    memo: dict[tuple, float] = {}

    def value(node: TreeNode, xi: float, zeta: float, x: float) -> float:
        if node.t == tree.T:
            return float(u(z + xi - node.B))
        key = (node.id, xi, zeta, x)
        if key in memo:
            return memo[key]
        if node.t == tree.T - 1:
            h = 0.0 if x == 0.0 else -x
            v = _expect(node, xi, zeta, x, h)
            best_h[key] = h
        else:
            v = -math.inf
            ba = 0.0
            bs = 0
            picked = acts[0]
            first = True
            for h in acts:
                cand = _expect(node, xi, zeta, x, h)
                a = abs(h)
                s = 1 if h > 0.0 else 0
                if first or cand > v or (cand == v and (a < ba or (a == ba and s < bs))):
                    v = cand
                    ba = a
                    bs = s
                    picked = h
                    first = False
            best_h[key] = picked
        memo[key] = v
        return v

    def _expect(node: TreeNode, xi: float, zeta: float, x: float, h: float) -> float:
        decay = math.exp(-node.r)
        ah = abs(h)
        acc = 0.0
        for child in tree.children(node.id):
            ze1 = decay * zeta + ah / child.delta
            xi1 = xi - child.P * h - ze1 * ah
            acc += child.p * value(child, xi1, ze1, x + h)
        return acc

    with np.errstate(over="ignore"):
        root_value = value(tree.root, 0.0, tree.zeta0, 0.0)

    values: dict[int, float] = {}

    def extract(node: TreeNode, xi: float, zeta: float, x: float) -> None:
        if node.t == tree.T:
            return
        h = best_h[(node.id, xi, zeta, x)]
        values[node.id] = h
        decay = math.exp(-node.r)
        ah = abs(h)
        for child in tree.children(node.id):
            ze1 = decay * zeta + ah / child.delta
            xi1 = xi - child.P * h - ze1 * ah
            extract(child, xi1, ze1, x + h)

    extract(tree.root, 0.0, tree.zeta0, 0.0)
    return root_value, PredictableAssignment(values)


# -- top level --------------------------------------------------------------


@dataclass
class SolveReport:
    root_value: float
    strategy: PredictableAssignment
    strategy_value: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "root_value": self.root_value,
            "strategy": self.strategy.to_report(),
            "strategy_value": self.strategy_value,
            "diagnostics": dict(self.diagnostics),
        }


def solve(
    tree: ScenarioTree, u: UtilitySpec, z: float, config: SolveConfig | None = None
) -> SolveReport:
    """Full pipeline: validate, induce grids, extract and evaluate a strategy."""
    config = config or SolveConfig()
    report = tree.validate()
    if not report.ok:
        raise ValueError("invalid tree: " + "; ".join(report.violations))
    vf = backward_induce(tree, u, z, config)
    assignment, root_step, extract_diag = forward_extract(tree, vf, u, z, config)
    strategy_value = evaluate_strategy(tree, assignment, u, z)
    diagnostics = dict(vf.diagnostics)
    diagnostics["k_expansions"] = max(diagnostics["k_expansions"], extract_diag["k_expansions"])
    diagnostics["k_warnings"] += extract_diag["k_warnings"]
    diagnostics["value_gap"] = abs(root_step.value - strategy_value) / (1.0 + abs(root_step.value))
    diagnostics["value_gap_ok"] = diagnostics["value_gap"] <= config.value_tol
    return SolveReport(
        root_value=root_step.value,
        strategy=assignment,
        strategy_value=strategy_value,
        diagnostics=diagnostics,
    )
