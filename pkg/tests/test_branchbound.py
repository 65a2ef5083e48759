"""MILP solver tests against brute-force enumeration oracles."""

import itertools

import numpy as np
import pytest

from chargebid.branchbound import (MILP_INFEASIBLE, MILP_OPTIMAL,
                                   MixedIntegerProgram, Sos2Set, solve_milp)
from chargebid.lp import EQ, GE, INF, LE, OPTIMAL, LpBuilder, solve_lp


def knapsack_mip(values, weights, cap):
    b = LpBuilder("knap", sense="max")
    for j, v in enumerate(values):
        b.add_col(f"z{j}", 0.0, 1.0, obj=float(v))
    b.add_row("cap", {f"z{j}": float(w) for j, w in enumerate(weights)}, LE,
              float(cap))
    lp = b.build()
    return MixedIntegerProgram(lp, binaries=list(range(len(values))))


def brute_force_knapsack(values, weights, cap):
    best = 0.0
    for pattern in itertools.product([0, 1], repeat=len(values)):
        w = sum(p * wt for p, wt in zip(pattern, weights))
        if w <= cap + 1e-12:
            best = max(best, sum(p * v for p, v in zip(pattern, values)))
    return best


def test_knapsack_against_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(12):
        n = 6
        values = rng.uniform(1, 10, n).round(3)
        weights = rng.uniform(1, 5, n).round(3)
        cap = float(rng.uniform(4, 10))
        mip = knapsack_mip(values, weights, cap)
        oracle = brute_force_knapsack(values, weights, cap)
        out = solve_milp(mip, rel_gap=0.0, abs_gap=1e-9)
        assert out.status == MILP_OPTIMAL
        assert out.objective == pytest.approx(oracle, abs=1e-7)
        # incumbent is exactly integral
        for j in mip.binaries:
            assert min(out.x[j], 1.0 - out.x[j]) == 0.0
        # bound sandwiches the incumbent
        assert out.bound >= out.objective - 1e-9


def sos2_interpolation_mip(breaks, heights, target_obj_coef=1.0):
    """y = interpolation over (breaks, heights) via SOS2 weights; max y."""
    b = LpBuilder("sos2", sense="max")
    names = []
    for i in range(len(breaks)):
        b.add_col(f"w{i}", 0.0, 1.0, obj=0.0)
        names.append(f"w{i}")
    b.add_col("y", -INF, INF, obj=target_obj_coef)
    b.add_row("convex", {n: 1.0 for n in names}, EQ, 1.0)
    b.add_row("ydef", dict([("y", 1.0)] + [(f"w{i}", -float(h))
                                           for i, h in enumerate(heights)]),
              EQ, 0.0)
    lp = b.build()
    members = [lp.col(n) for n in names]
    return MixedIntegerProgram(lp, sos2=[Sos2Set("curve", members)]), lp


def test_sos2_picks_best_adjacent_pair():
    # concave-violating heights: the relaxation mixes non-adjacent points,
    # a valid SOS2 solution may only mix neighbours.
    breaks = [0.0, 1.0, 2.0, 3.0, 4.0]
    heights = [0.0, 5.0, 1.0, 6.0, 0.5]
    mip, lp = sos2_interpolation_mip(breaks, heights)
    out = solve_milp(mip, rel_gap=0.0, abs_gap=1e-9)
    assert out.status == MILP_OPTIMAL
    assert out.objective == pytest.approx(6.0, abs=1e-9)
    w = out.x[: len(breaks)]
    support = np.flatnonzero(w > 1e-9)
    assert len(support) <= 2
    if len(support) == 2:
        assert support[1] - support[0] == 1


def test_sos2_with_row_coupling_against_enumeration():
    # max y s.t. y interpolates heights, and the interpolated x-position
    # is capped. Enumerate adjacent pairs for the oracle.
    breaks = [0.0, 1.0, 2.0, 3.0]
    heights = [1.0, 4.0, 2.0, 5.0]
    cap = 1.6
    b = LpBuilder("sos2cap", sense="max")
    for i in range(4):
        b.add_col(f"w{i}", 0.0, 1.0, obj=float(heights[i]))
    b.add_row("convex", {f"w{i}": 1.0 for i in range(4)}, EQ, 1.0)
    b.add_row("poscap", {f"w{i}": float(breaks[i]) for i in range(4)}, LE, cap)
    lp = b.build()
    mip = MixedIntegerProgram(lp, sos2=[Sos2Set("c", [lp.col(f"w{i}") for i in range(4)])])

    best = -np.inf
    for i in range(3):
        # mass split between breaks i and i+1 subject to the position cap
        b0, b1 = breaks[i], breaks[i + 1]
        h0, h1 = heights[i], heights[i + 1]
        # position = b0 + t (b1 - b0) <= cap, t in [0, 1]
        t_hi = min(1.0, max(0.0, (cap - b0) / (b1 - b0))) if b1 > b0 else 1.0
        if b0 > cap + 1e-12:
            continue
        for t in (0.0, t_hi):
            best = max(best, h0 + t * (h1 - h0))
    out = solve_milp(mip, rel_gap=0.0, abs_gap=1e-9)
    assert out.status == MILP_OPTIMAL
    assert out.objective == pytest.approx(best, abs=1e-9)


def test_mixed_binary_and_sos2():
    rng = np.random.default_rng(11)
    for _ in range(8):
        heights = rng.uniform(0, 5, 4).round(3)
        bonus = rng.uniform(0, 3, 3).round(3)
        wcost = rng.uniform(0.5, 2, 3).round(3)
        budget = float(rng.uniform(1, 3))
        b = LpBuilder("mix", sense="max")
        for i in range(4):
            b.add_col(f"w{i}", 0.0, 1.0, obj=float(heights[i]))
        for k in range(3):
            b.add_col(f"z{k}", 0.0, 1.0, obj=float(bonus[k]))
        b.add_row("convex", {f"w{i}": 1.0 for i in range(4)}, EQ, 1.0)
        b.add_row("budget", {f"z{k}": float(wcost[k]) for k in range(3)}, LE,
                  budget)
        lp = b.build()
        mip = MixedIntegerProgram(
            lp, binaries=[lp.col(f"z{k}") for k in range(3)],
            sos2=[Sos2Set("c", [lp.col(f"w{i}") for i in range(4)])])
        # oracle: best adjacent pair (vertex at a break) + binary knapsack
        best_h = max(heights)
        best_z = brute_force_knapsack(bonus, wcost, budget)
        out = solve_milp(mip, rel_gap=0.0, abs_gap=1e-9)
        assert out.status == MILP_OPTIMAL
        assert out.objective == pytest.approx(best_h + best_z, abs=1e-7)


def test_hint_seeds_incumbent_and_never_hurts():
    values = [3.0, 5.0, 4.0]
    weights = [2.0, 4.0, 3.0]
    mip = knapsack_mip(values, weights, 5.0)
    oracle = brute_force_knapsack(values, weights, 5.0)
    hint = {"z0": 1.0, "z1": 0.0, "z2": 1.0}  # feasible: weight 5 <= 5
    out = solve_milp(mip, hint=hint, rel_gap=0.0, abs_gap=1e-9)
    assert out.objective == pytest.approx(oracle, abs=1e-9)
    # infeasible hint is ignored rather than trusted
    bad = {"z0": 1.0, "z1": 1.0, "z2": 1.0}
    out2 = solve_milp(mip, hint=bad, rel_gap=0.0, abs_gap=1e-9)
    assert out2.objective == pytest.approx(oracle, abs=1e-9)


def test_infeasible_milp():
    b = LpBuilder("bad", sense="max")
    b.add_col("z", 0.0, 1.0, obj=1.0)
    b.add_row("lo", [("z", 1.0)], GE, 0.4)
    b.add_row("hi", [("z", 1.0)], LE, 0.6)
    lp = b.build()
    mip = MixedIntegerProgram(lp, binaries=[lp.col("z")])
    out = solve_milp(mip, rel_gap=0.0, abs_gap=1e-9)
    assert out.status == MILP_INFEASIBLE


def test_pure_lp_passthrough():
    b = LpBuilder("plain", sense="max")
    b.add_col("x", 0.0, 2.0, obj=1.0)
    lp = b.build()
    out = solve_milp(MixedIntegerProgram(lp), rel_gap=0.0, abs_gap=1e-9)
    assert out.status == MILP_OPTIMAL
    assert out.objective == pytest.approx(2.0, abs=1e-12)


def test_determinism_same_tree():
    values = [3.0, 5.0, 4.0, 6.0, 2.0, 7.0]
    weights = [2.0, 4.0, 3.0, 5.0, 1.0, 6.0]
    mip = knapsack_mip(values, weights, 9.0)
    runs = [solve_milp(mip, rel_gap=0.0, abs_gap=1e-9) for _ in range(3)]
    assert len({r.nodes for r in runs}) == 1
    assert len({round(r.objective, 12) for r in runs}) == 1
    for a, b in zip(runs, runs[1:]):
        assert np.array_equal(a.x, b.x)
