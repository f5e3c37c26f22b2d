"""Numeric kernels: both backends, interpolation, bound search, forced layer."""

import math

import numpy as np
import pytest

import impactdp._kernels as K
from impactdp.utility import capped_linear, exponential


def exp_encoding(alpha=1.0):
    return exponential(alpha).kernel_encoding()


def small_axes():
    xg = np.linspace(-4.0, 4.0, 9)
    zg = np.linspace(0.0, 2.0, 5)
    xxg = np.linspace(-2.0, 2.0, 5)
    return xg, zg, xxg


def exact_problem():
    """Hand-packed two-children / four-leaves closed-form sweep input."""
    decay = math.exp(-0.1)
    cp = np.array([0.5, 0.5])
    cP = np.array([1.2, 0.8])
    cdelta = np.array([1.0, 2.0])
    cdecay = np.array([math.exp(-0.2), math.exp(-0.3)])
    goff = np.array([0, 2, 4], dtype=np.int64)
    gp = np.array([0.6, 0.4, 0.5, 0.5])
    gP = np.array([1.4, 1.0, 0.9, 0.6])
    gd = np.array([1.5, 1.5, 2.0, 2.0])
    gB = np.array([0.0, 0.1, 0.0, -0.1])
    return decay, cp, cP, cdelta, cdecay, goff, gp, gP, gd, gB


def grid_problem(rng, monotone=True):
    """Random grid-mode sweep input with child values on the same axes."""
    xg, zg, xxg = small_axes()
    shape = (2, xg.size, zg.size, xxg.size)
    noise = rng.normal(0, 0.5, size=shape)
    if monotone:
        grids = np.cumsum(np.abs(noise), axis=1) - 3.0
    else:
        grids = noise
    decay = math.exp(-0.05)
    cp = np.array([0.3, 0.7])
    cP = np.array([1.0, -0.5])
    cdelta = np.array([1.0, 2.0])
    return xg, zg, xxg, decay, cp, cP, cdelta, np.ascontiguousarray(grids)


# -- scalar utility ----------------------------------------------------------


def test_u_scalar_matches_family_formulas():
    code, a, xs, ys = exp_encoding(2.0)
    assert K.u_scalar(code, a, xs, ys, 0.5) == -math.exp(-1.0)
    code, a, xs, ys = capped_linear(3.0).kernel_encoding()
    assert K.u_scalar(code, a, xs, ys, 10.0) == 3.0
    assert K.u_scalar(code, a, xs, ys, -2.0) == -2.0


def test_u_scalar_floors_instead_of_overflowing():
    code, a, xs, ys = exp_encoding(1.0)
    assert K.u_scalar(code, a, xs, ys, -800.0) == K.U_FLOOR
    assert K.U_FLOOR == -1e300
    # capped utility floors too once wealth is absurd
    code, a, xs, ys = capped_linear(0.0).kernel_encoding()
    assert K.u_scalar(code, a, xs, ys, -2e300) == K.U_FLOOR


def test_u_scalar_piecewise_interpolates_between_knots():
    from impactdp.utility import piecewise_linear

    u = piecewise_linear([(-1.0, -2.0), (0.0, 0.0), (2.0, 1.0)])
    code, a, xs, ys = u.kernel_encoding()
    for w in (-5.0, -1.0, -0.25, 0.0, 1.0, 2.0, 9.0):
        assert K.u_scalar(code, a, xs, ys, w) == u(w)


# -- interpolation -----------------------------------------------------------


def test_interp_reproduces_grid_nodes_bitwise():
    rng = np.random.default_rng(0)
    xg, zg, xxg = small_axes()
    grid = rng.normal(size=(xg.size, zg.size, xxg.size))
    for i in (0, 3, 8):
        for j in (0, 2, 4):
            for k in (0, 1, 4):
                got = K.interp3_scalar(grid, xg, zg, xxg, xg[i], zg[j], xxg[k])
                assert got == grid[i, j, k]


def test_interp_clamps_outside_the_box():
    rng = np.random.default_rng(1)
    xg, zg, xxg = small_axes()
    grid = rng.normal(size=(xg.size, zg.size, xxg.size))
    inside = K.interp3_scalar(grid, xg, zg, xxg, xg[0], zg[-1], xxg[0])
    outside = K.interp3_scalar(grid, xg, zg, xxg, xg[0] - 50.0, zg[-1] + 9.0, xxg[0] - 1.0)
    assert outside == inside


def test_interp_preserves_monotone_data_along_xi():
    rng = np.random.default_rng(2)
    xg, zg, xxg = small_axes()
    grid = np.cumsum(np.abs(rng.normal(size=(xg.size, zg.size, xxg.size))), axis=0)
    queries = np.sort(rng.uniform(xg[0] - 1, xg[-1] + 1, 40))
    for j in (0.3, 1.7):
        for k in (-1.9, 0.4):
            vals = [K.interp3_scalar(grid, xg, zg, xxg, q, j, k) for q in queries]
            assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_interp_linear_inside_a_cell():
    xg, zg, xxg = small_axes()
    grid = np.zeros((xg.size, zg.size, xxg.size))
    grid[4, 2, 2] = 0.0
    grid[5, 2, 2] = 2.0
    mid = K.interp3_scalar(grid, xg, zg, xxg, (xg[4] + xg[5]) / 2, zg[2], xxg[2])
    assert mid == pytest.approx(1.0, rel=1e-15)


def test_scalar_and_vector_interp_agree_bitwise():
    rng = np.random.default_rng(3)
    xg, zg, xxg = small_axes()
    grid = rng.normal(size=(xg.size, zg.size, xxg.size))
    xi = rng.uniform(-6, 6, 64)
    ze = rng.uniform(-0.5, 3.0, 64)
    xx = rng.uniform(-3, 3, 64)
    vec = K._interp3_numpy(grid, xg, zg, xxg, xi, ze, xx)
    for n in range(64):
        assert vec[n] == K.interp3_scalar(grid, xg, zg, xxg, xi[n], ze[n], xx[n])


# -- backend agreement -------------------------------------------------------


def test_sweep_exact_backends_bit_identical():
    xg, zg, xxg = small_axes()
    decay, cp, cP, cdelta, cdecay, goff, gp, gP, gd, gB = exact_problem()
    code, a, uxs, uys = exp_encoding(1.0)
    args = (xg, zg, xxg, decay, cp, cP, cdelta, cdecay, goff, gp, gP, gd, gB, code, a, uxs, uys, 0.3, 1.0, 2.0, 40, 41)
    v1, p1, e1, w1 = K.sweep_exact(*args)
    v2, p2, e2, w2 = K.sweep_exact_numpy(*args)
    assert np.array_equal(v1, v2)
    assert np.array_equal(p1, p2)
    assert np.array_equal(e1, e2)
    assert np.array_equal(w1, w2)


def test_sweep_grid_backends_bit_identical():
    rng = np.random.default_rng(7)
    xg, zg, xxg, decay, cp, cP, cdelta, grids = grid_problem(rng, monotone=False)
    args = (xg, zg, xxg, decay, cp, cP, cdelta, grids, xg, zg, xxg, 1.0, 2.0, 40, 31)
    v1, p1, e1, w1 = K.sweep_grid(*args)
    v2, p2, e2, w2 = K.sweep_grid_numpy(*args)
    assert np.array_equal(v1, v2)
    assert np.array_equal(p1, p2)
    assert np.array_equal(e1, e2)
    assert np.array_equal(w1, w2)


def test_backend_flag_consistent():
    assert K.BACKEND in ("numba", "numpy")
    assert K.BACKEND == ("numba" if K.NUMBA_ENABLED else "numpy")


# -- sweep semantics ---------------------------------------------------------


def test_swept_values_monotone_in_cash_for_monotone_children():
    # one shared action set per layer makes this structural, whatever the draw
    for seed in range(5):
        rng = np.random.default_rng(seed)
        xg, zg, xxg, decay, cp, cP, cdelta, grids = grid_problem(rng, monotone=True)
        values, policy, nexp, warn = K.sweep_grid(
            xg, zg, xxg, decay, cp, cP, cdelta, grids, xg, zg, xxg, 1.0, 2.0, 40, 21
        )
        assert np.all(values[1:] >= values[:-1])


def test_action_zero_is_exact_and_ties_break_to_no_trade():
    # flat children make every action equally good; the tie must go to h = 0
    xg, zg, xxg = small_axes()
    grids = np.zeros((2, xg.size, zg.size, xxg.size))
    decay = 1.0
    cp = np.array([0.5, 0.5])
    cP = np.zeros(2)
    cdelta = np.ones(2)
    values, policy, nexp, warn = K.sweep_grid(
        xg, zg, xxg, decay, cp, cP, cdelta, grids, xg, zg, xxg, 1.0, 2.0, 40, 21
    )
    assert np.all(values == 0.0)
    assert np.all(policy == 0.0)
    assert np.all(nexp == 0)
    assert np.all(warn == 0)


def test_bound_search_expands_when_the_optimum_is_far():
    # strong positive child price with deep books: the best sale is about
    # delta*P/2 ~ 5 units, far beyond k0=1, so the bound must expand
    xg = np.array([0.0])
    zg = np.array([0.0])
    xxg = np.array([0.0])
    decay = 1.0
    cp = np.array([1.0])
    cP = np.array([10.0])
    cdelta = np.array([1.0])
    cdecay = np.array([1.0])
    goff = np.array([0, 1], dtype=np.int64)
    gp = np.array([1.0])
    gP = np.array([0.0])
    gd = np.array([1.0])
    gB = np.array([0.0])
    code, a, uxs, uys = capped_linear(1000.0).kernel_encoding()
    values, policy, nexp, warn = K.sweep_exact(
        xg, zg, xxg, decay, cp, cP, cdelta, cdecay, goff, gp, gP, gd, gB,
        code, a, uxs, uys, 0.0, 1.0, 2.0, 40, 201,
    )
    assert warn[0, 0, 0] == 0
    assert nexp[0, 0, 0] >= 2
    assert policy[0, 0, 0] < -1.0  # sells more than the initial half-width
    assert values[0, 0, 0] > 0.0


def test_bound_search_warns_when_capped_by_max_expansions():
    xg = np.array([0.0])
    zg = np.array([0.0])
    xxg = np.array([0.0])
    decay = 1.0
    cp = np.array([1.0])
    cP = np.array([10.0])
    cdelta = np.array([1.0])
    cdecay = np.array([1.0])
    goff = np.array([0, 1], dtype=np.int64)
    gp = np.array([1.0])
    gP = np.array([0.0])
    gd = np.array([1.0])
    gB = np.array([0.0])
    code, a, uxs, uys = capped_linear(1000.0).kernel_encoding()
    values, policy, nexp, warn = K.sweep_exact(
        xg, zg, xxg, decay, cp, cP, cdelta, cdecay, goff, gp, gP, gd, gB,
        code, a, uxs, uys, 0.0, 1.0, 2.0, 0, 21,
    )
    assert warn[0, 0, 0] == 1
    assert nexp[0, 0, 0] == 0


def test_bound_search_stops_on_frozen_boundary_probes():
    # children reward a short position; once the transition saturates the
    # clamped box the boundary probes freeze and the search must stop with a
    # warning instead of doubling to the expansion cap
    xg, zg, xxg = small_axes()
    grids = np.broadcast_to(-xxg[None, None, :], (xg.size, zg.size, xxg.size))
    grids = np.ascontiguousarray(np.stack([grids]))
    decay = 1.0
    cp = np.array([1.0])
    cP = np.array([0.0])
    cdelta = np.array([1.0])
    for backend in (K.sweep_grid, K.sweep_grid_numpy):
        values, policy, nexp, warn = backend(
            np.array([0.0]), np.array([0.5]), np.array([0.0]),
            decay, cp, cP, cdelta, grids, xg, zg, xxg, 1.0, 2.0, 40, 41,
        )
        assert warn[0, 0, 0] == 1
        assert nexp[0, 0, 0] < 10
        # the scan still finds the genuinely best reachable short position
        assert values[0, 0, 0] > 0.0
        assert policy[0, 0, 0] < 0.0


def test_forced_layer_matches_hand_loop():
    xg, zg, xxg = small_axes()
    decay = math.exp(-0.2)
    lp = np.array([0.25, 0.75])
    lP = np.array([1.5, 0.5])
    ld = np.array([1.0, 2.0])
    lB = np.array([0.2, -0.1])
    u = exponential(1.0)
    code, a, uxs, uys = u.kernel_encoding()
    values, policy = K.forced_layer(xg, zg, xxg, decay, lp, lP, ld, lB, code, a, uxs, uys, 0.4)
    for i in range(xg.size):
        for j in range(zg.size):
            for k in range(xxg.size):
                g = -xxg[k]
                acc = 0.0
                for q in range(2):
                    ze2 = decay * zg[j] + abs(g) / ld[q]
                    xi2 = xg[i] - lP[q] * g - ze2 * abs(g)
                    acc += lp[q] * max(u(0.4 + xi2 - lB[q]), K.U_FLOOR)
                assert policy[i, j, k] == g
                assert values[i, j, k] == pytest.approx(acc, rel=1e-15, abs=1e-300)


def test_forced_layer_values_monotone_in_cash():
    xg, zg, xxg = small_axes()
    values, policy = K.forced_layer(
        xg, zg, xxg, 1.0,
        np.array([1.0]), np.array([2.0]), np.array([1.0]), np.array([0.0]),
        *exp_encoding(1.0), 0.0,
    )
    assert np.all(values[1:] >= values[:-1])


def test_set_threads_accepts_small_counts():
    K.set_threads(1)
    K.set_threads(10_000)  # clamped to the configured maximum, not an error
