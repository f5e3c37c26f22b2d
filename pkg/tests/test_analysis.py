"""Worked analyses: friction quadratic, value kink, probes, Monte Carlo."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactdp.analysis import (
    convexity_probe,
    friction_quadratic,
    indirect_utility_demo,
    monte_carlo_eval,
    nonconvexity_demo,
)
from impactdp.dynamics import MarketPath
from impactdp.solver import evaluate_strategy
from impactdp.tree import generate, preset
from impactdp.utility import exponential


def demo_path():
    return MarketPath(
        T=3, zeta0=0.0, P=(0.0, 0.0, 0.0, 0.0), r=(0.0, 0.0, 0.0), delta=(1.0, 10.0, 10.0)
    )


# -- friction cost as a quadratic form ---------------------------------------


def test_friction_cost_frozen_values():
    r = nonconvexity_demo()
    assert r.cost_a == pytest.approx(4.7, abs=1e-12)
    assert r.cost_b == pytest.approx(4.725, abs=1e-12)
    assert r.average_cost == pytest.approx(4.7125, abs=1e-12)
    assert r.cost_midpoint == pytest.approx(4.79375, abs=1e-12)
    assert r.margin == pytest.approx(0.08125, abs=1e-12)
    assert r.midpoint == (1.25, 0.5)
    assert r.midpoint_convex is False


def test_friction_cost_report_serializes():
    d = nonconvexity_demo().to_dict()
    assert d["midpoint_convex"] is False
    assert set(d) == {
        "point_a", "point_b", "midpoint", "cost_a", "cost_b",
        "cost_midpoint", "average_cost", "margin", "midpoint_convex",
    }


def test_degenerate_points_are_convex():
    r = nonconvexity_demo(point_a=(0.0, 0.0), point_b=(0.0, 0.0))
    assert r.cost_a == 0.0 and r.cost_midpoint == 0.0
    assert r.midpoint_convex is True


@given(
    h1=st.floats(0.0, 3.0, allow_nan=False),
    h2=st.floats(0.0, 3.0, allow_nan=False),
)
@settings(max_examples=200)
def test_friction_cost_matches_closed_quadratic(h1, h2):
    # for nonnegative opening trades the demo-path cost expands to
    # 2.1 h1^2 + 0.3 h2^2 + 2.3 h1 h2
    cost = friction_quadratic(demo_path(), (h1, h2, -(h1 + h2)))
    want = 2.1 * h1 * h1 + 0.3 * h2 * h2 + 2.3 * h1 * h2
    assert cost == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_friction_cost_ignores_prices():
    priced = MarketPath(
        T=3, zeta0=0.0, P=(5.0, -3.0, 7.0, 1.0), r=(0.0, 0.0, 0.0), delta=(1.0, 10.0, 10.0)
    )
    trades = (1.0, -0.25, -0.75)
    assert friction_quadratic(priced, trades) == friction_quadratic(demo_path(), trades)


# -- indirect utility kink ---------------------------------------------------


def test_indirect_utility_kink_location_and_slopes():
    r = indirect_utility_demo()
    assert r.kink_at == 2.0
    assert r.value_at_kink == pytest.approx(math.log(2.0), abs=1e-9)
    assert r.left_slope == pytest.approx(0.5, abs=1e-3)
    assert r.right_slope == pytest.approx(0.625, abs=1e-3)
    assert r.slope_gap == r.right_slope - r.left_slope
    assert r.kink_detected is True
    assert 2.0 in set(float(z) for z in r.z)
    assert r.values.shape == r.z.shape
    # past the kink the gambling plan wins, before it the immediate sale does
    for z, v in zip(r.z, r.values):
        want = max(math.log(z), 0.5 * (math.log(z + 2.0) + math.log(z - 1.0)))
        assert v == want


def test_indirect_utility_validates_range():
    with pytest.raises(ValueError, match="z_lo"):
        indirect_utility_demo(z_lo=0.9)
    with pytest.raises(ValueError, match="z_lo"):
        indirect_utility_demo(z_lo=2.0, z_hi=1.5)


def test_indirect_utility_serializes_plain_lists():
    d = indirect_utility_demo(count=5).to_dict()
    assert isinstance(d["z"], list) and isinstance(d["values"], list)
    assert d["kink_detected"] is True


# -- convexity probe on trees ------------------------------------------------


def test_probe_finds_a_witness_on_varying_depth():
    tree = generate(preset("notconvex"))
    r = convexity_probe(tree)
    assert r.nonconvex is True
    assert r.witness_a is not None and r.witness_b is not None
    assert r.margin > 1e-12
    # the reported witness really does violate midpoint convexity
    path = tree.extract_path(tree.leaves()[0].id).path
    mid = tuple((a + b) / 2.0 for a, b in zip(r.witness_a, r.witness_b))

    def cost(free):
        return friction_quadratic(path, free + (-math.fsum(free),))

    assert cost(mid) - (cost(r.witness_a) + cost(r.witness_b)) / 2.0 == pytest.approx(
        r.margin
    )


def test_probe_finds_nothing_on_constant_depth():
    tree = generate(preset("binomial"))
    r = convexity_probe(tree, samples=256)
    assert r.nonconvex is False
    assert r.witness_a is None and r.margin == 0.0
    assert r.pairs_checked == 256


def test_probe_is_reproducible():
    tree = generate(preset("notconvex"))
    assert convexity_probe(tree, seed=7) == convexity_probe(tree, seed=7)


def test_probe_needs_two_decision_dates():
    tree = generate(preset("det-example"))  # T = 2: a single free trade
    r = convexity_probe(tree, samples=32)
    assert r.nonconvex is False  # a 1-d quadratic with positive depth is convex


# -- Monte Carlo evaluation --------------------------------------------------


def binomial_with_strategy():
    # a fixed nontrivial schedule: leaf outcomes differ, so the sample
    # variance is positive and the draw actually matters
    tree = generate(preset("binomial"))
    u = exponential(1.0)
    values = {tree.root_id: 0.5}
    for node in tree.nodes_at(1):
        values[node.id] = -0.25
    for node in tree.nodes_at(2):
        values[node.id] = -0.25
    from impactdp.tree import PredictableAssignment

    return tree, PredictableAssignment(values), u


def test_monte_carlo_is_reproducible_and_seed_sensitive():
    tree, strategy, u = binomial_with_strategy()
    a = monte_carlo_eval(tree, strategy, u, 0.0, n_samples=2000, seed=3)
    b = monte_carlo_eval(tree, strategy, u, 0.0, n_samples=2000, seed=3)
    c = monte_carlo_eval(tree, strategy, u, 0.0, n_samples=2000, seed=4)
    assert (a.estimate, a.stderr) == (b.estimate, b.stderr)
    assert a.estimate != c.estimate


def test_monte_carlo_matches_exact_value():
    tree, strategy, u = binomial_with_strategy()
    r = monte_carlo_eval(tree, strategy, u, 0.0, n_samples=20000, seed=0)
    assert r.exact == evaluate_strategy(tree, strategy, u, 0.0)
    assert r.stderr > 0.0
    assert r.within_3_stderr is True
    assert r.to_dict()["n_samples"] == 20000


def test_monte_carlo_needs_two_samples():
    tree, strategy, u = binomial_with_strategy()
    with pytest.raises(ValueError, match="two samples"):
        monte_carlo_eval(tree, strategy, u, 0.0, n_samples=1)
    small = monte_carlo_eval(tree, strategy, u, 0.0, n_samples=2, seed=1)
    assert math.isfinite(small.estimate) and math.isfinite(small.stderr)
