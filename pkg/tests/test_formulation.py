"""Model-builder tests: breakpoint grids, tangent envelopes, clearing
interpolation, sub-problem duals, and extensive-form spot checks against
closed-form oracles."""

import numpy as np
import pytest

from chargebid.branchbound import solve_milp
from chargebid.errors import DegenerateRange, PriceOutsideGrid
from chargebid.formulation import (
    COMMODITIES,
    bracket,
    build_extensive_form,
    build_master,
    build_subproblem,
    extract_first_stage,
    extract_scenario,
    linearization_error_bound,
    lin_ranges,
    max_affine_lines,
    sos2_grid,
)
from chargebid.instance import ELECTRICITY, HYDROGEN, validate_instance
from chargebid.lp import OPTIMAL, solve_lp
from chargebid.synth import flat_instance, toy_instance, zero_demand_instance


def test_sos2_grid_frozen_example():
    g = sos2_grid(0.0, 10.0, 6)
    assert np.allclose(g, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    with pytest.raises(DegenerateRange):
        sos2_grid(5.0, 5.0, 3)
    with pytest.raises(DegenerateRange):
        sos2_grid(0.0, 10.0, 1)


def test_max_affine_frozen_example():
    lines = max_affine_lines(-1.0, 3.0, 3)
    assert lines == [(-2.0, -1.0), (2.0, -1.0), (6.0, -9.0)]
    # each line touches z^2 at its breakpoint and stays below elsewhere
    for z in np.linspace(-1.0, 3.0, 101):
        env = max(a * z + b for a, b in lines)
        assert env <= z * z + 1e-12
    for z, (a, b) in zip([-1.0, 1.0, 3.0], lines):
        assert abs((a * z + b) - z * z) <= 1e-12


def test_envelope_gaps_bounded_by_quarter_square_step():
    lo, hi, n = -2.0, 5.0, 5
    step = (hi - lo) / (n - 1)
    lines = max_affine_lines(lo, hi, n)
    grid = sos2_grid(lo, hi, n)
    for z in np.linspace(lo, hi, 301):
        env = max(a * z + b for a, b in lines)
        assert z * z - env <= step * step / 4.0 + 1e-12
        # chord over-estimate on the bracketing interval
        k = min(np.searchsorted(grid, z, side="right") - 1, n - 2)
        zl, zr = grid[k], grid[k + 1]
        w = (z - zl) / (zr - zl)
        chord = (1 - w) * zl * zl + w * zr * zr
        assert -1e-12 <= chord - z * z <= step * step / 4.0 + 1e-12


def test_bracket_conventions():
    y = np.array([0.0, 10.0, 20.0])
    assert bracket(y, 0.0) == (0, 1.0, 0.0)
    assert bracket(y, 5.0) == (0, 0.5, 0.5)
    assert bracket(y, 10.0) == (1, 1.0, 0.0)   # right-open at breakpoints
    assert bracket(y, 20.0) == (1, 0.0, 1.0)   # top price takes the last step
    assert bracket(y, 19.999)[0] == 1
    with pytest.raises(PriceOutsideGrid):
        bracket(y, 25.0)
    with pytest.raises(PriceOutsideGrid):
        bracket(y, -1.0)


def test_master_structure_and_lp_relaxation():
    vi = validate_instance(toy_instance(0))
    mip, meta = build_master(vi, cuts=(), n_groups=2)
    nq, n_da = vi.time.n_quarters, vi.scenarios.n_da
    assert len(meta.md) == nq * n_da
    assert len(meta.xd) == vi.time.n_hours * vi.bid_grid.J
    assert len(meta.sos2) == 2 * nq
    # electric quarters carry two segment binaries, hydrogen one
    assert len(meta.binaries) == 3 * nq
    out = solve_lp(mip.lp)
    assert out.status == OPTIMAL
    # surrogates have nothing propping them up without cuts
    assert abs(out.value("alpha_k0")) <= 1e-9
    assert abs(out.value("alpha_k1")) <= 1e-9


def test_master_clearing_rows_interpolate():
    vi = validate_instance(toy_instance(3))
    mip, meta = build_master(vi, cuts=(), n_groups=1)
    out = solve_milp(mip, rel_gap=1e-9)
    y = vi.bid_grid.y
    for a, da in enumerate(vi.scenarios.da_scenarios):
        for h in range(vi.time.n_hours):
            j, w_lo, w_hi = bracket(y, da.da_price[h])
            steps = [out.value(meta.xd[(h, jj)]) for jj in range(len(y))]
            cleared = w_lo * steps[j] + w_hi * steps[j + 1]
            bought = sum(out.value(meta.md[(t, a)])
                         for t in vi.time.quarters_of(h))
            assert abs(cleared - bought) <= 1e-7
            assert all(steps[k + 1] <= steps[k] + 1e-9
                       for k in range(len(y) - 1))


def test_subproblem_zero_demand_costs_nothing():
    vi = validate_instance(zero_demand_instance(0))
    nq = vi.time.n_quarters
    lp, meta = build_subproblem(vi, 0, np.zeros(nq), np.zeros(nq), np.zeros(nq))
    out = solve_lp(lp)
    assert out.status == OPTIMAL
    sc = extract_scenario(vi, meta, out)
    assert abs(sc.cost) <= 1e-9
    assert np.all(np.abs(sc.mi) <= 1e-9)


def fs_point(vi, frac_le, frac_lh, frac_md, rng=None):
    """In-bounds first-stage point for sub-problem tests."""
    nq = vi.time.n_quarters
    dt = vi.dt
    le = np.array([frac_le * vi.max_load_q(ELECTRICITY, t) for t in range(nq)])
    lh = np.array([frac_lh * vi.max_load_q(HYDROGEN, t) for t in range(nq)])
    cap = (vi.devices.b_chg_max + vi.devices.e_max) * dt
    md = np.array([[frac_md * (vi.max_load_q(ELECTRICITY, t) + cap)
                    for _ in range(vi.scenarios.n_da)] for t in range(nq)])
    if rng is not None:
        le *= rng.uniform(0.2, 1.0, size=nq)
        lh *= rng.uniform(0.2, 1.0, size=nq)
        md *= rng.uniform(0.0, 1.0, size=md.shape)
    return md, le, lh


def test_subproblem_feasible_across_fs_box():
    # recourse must stay feasible for any in-bounds first-stage choice
    rng = np.random.default_rng(7)
    for seed in range(3):
        vi = validate_instance(toy_instance(seed))
        for fle, flh, fmd in [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0),
                              (1.0, 1.0, 1.0), (0.0, 0.0, 1.0)]:
            md, le, lh = fs_point(vi, fle, flh, fmd, rng)
            for a in range(vi.scenarios.n_da):
                lp, meta = build_subproblem(vi, a, md[:, a], le, lh)
                out = solve_lp(lp)
                assert out.status == OPTIMAL, (seed, fle, flh, fmd, a)


def test_subproblem_duals_and_subgradient_validity():
    vi = validate_instance(toy_instance(1))
    nq = vi.time.n_quarters
    md, le, lh = fs_point(vi, 0.6, 0.5, 0.2)
    rng = np.random.default_rng(11)
    for a in range(vi.scenarios.n_da):
        lp, meta = build_subproblem(vi, a, md[:, a], le, lh)
        out = solve_lp(lp)
        sc = extract_scenario(vi, meta, out)
        assert sc.cost >= -1e-9
        assert np.all(sc.lam <= 1e-9)
        g_md = sc.lam.sum(axis=1)
        g_le = -sc.lam.sum(axis=1)
        g_lh = -sc.rho.sum(axis=1)
        # convexity: cost at any other point dominates the supporting plane
        for _ in range(8):
            md2 = md[:, a] * rng.uniform(0.0, 1.5, nq)
            le2 = le * rng.uniform(0.5, 1.4, nq)
            le2 = np.minimum(le2, [vi.max_load_q(ELECTRICITY, t)
                                   for t in range(nq)])
            lh2 = lh * rng.uniform(0.5, 1.4, nq)
            lh2 = np.minimum(lh2, [vi.max_load_q(HYDROGEN, t)
                                   for t in range(nq)])
            lp2, meta2 = build_subproblem(vi, a, md2, le2, lh2)
            out2 = solve_lp(lp2)
            assert out2.status == OPTIMAL
            cost2 = -out2.objective
            plane = (sc.cost + g_md @ (md2 - md[:, a])
                     + g_le @ (le2 - le) + g_lh @ (lh2 - lh))
            assert cost2 >= plane - 1e-6 * (1.0 + abs(cost2))


def test_extensive_form_toy_solves_with_certified_revenue():
    vi = validate_instance(toy_instance(0))
    mip, meta, ops = build_extensive_form(vi)
    out = solve_milp(mip, rel_gap=1e-9, abs_gap=1e-9)
    assert out.status == "optimal"
    fs = extract_first_stage(vi, meta, out)
    # binaries integral, selected segment consistent with the price
    for name in meta.binaries:
        v = out.value(name)
        assert min(abs(v), abs(v - 1.0)) <= 1e-6
    # revenue linearization honest at the incumbent
    dt = vi.dt
    for c in COMMODITIES:
        tag = "e" if c == ELECTRICITY else "h"
        arr_l = fs.le if c == ELECTRICITY else fs.lh
        arr_p = fs.pe if c == ELECTRICITY else fs.ph
        for t in range(vi.time.n_quarters):
            w1 = out.value(f"w1_{tag}_t{t}")
            w2 = out.value(f"w2_{tag}_t{t}")
            err = meta.grids[(c, t)].err_bound
            assert abs((w1 - w2) - arr_l[t] * arr_p[t]) <= err + 1e-6
    # served load stays on or below the selected segment's curve
    for t in range(vi.time.n_quarters):
        segs = vi.load_price.segments(ELECTRICITY, t)
        m = max(range(len(segs)),
                key=lambda k: out.value(meta.u[(ELECTRICITY, t, k)]))
        s = segs[m]
        assert fs.le[t] <= dt * (s.A * fs.pe[t] + s.B) + 1e-6
        assert s.p_lo - 1e-7 <= fs.pe[t] <= s.p_hi + 1e-7


def scan_flat_optimum(vi, price):
    """Closed-form optimum for a flat-price instance: per quarter and
    commodity, the best margin over each segment of a concave quadratic,
    hydrogen charged at its electricity-equivalent cost."""
    dt = vi.dt
    d = vi.devices
    total = 0.0
    for t in range(vi.time.n_quarters):
        for c, unit_cost in ((ELECTRICITY, price),
                             (HYDROGEN, price * d.H / d.eta_e)):
            best = 0.0
            for s in vi.load_price.segments(c, t):
                for p in (s.p_lo, s.p_hi, 0.5 * (unit_cost - s.B / s.A)
                          if s.A < 0 else s.p_lo):
                    p = min(max(p, s.p_lo), s.p_hi)
                    load = max(s.A * p + s.B, 0.0) * dt
                    best = max(best, load * (p - unit_cost))
            total += best
    return total


def test_flat_price_scan_sandwich():
    for seed in (0, 1):
        raw = flat_instance(seed, price=0.12)
        vi = validate_instance(raw)
        scan = scan_flat_optimum(vi, 0.12)
        mip, meta, ops = build_extensive_form(vi)
        out = solve_milp(mip, rel_gap=1e-9, abs_gap=1e-9)
        assert out.status == "optimal"
        slack = linearization_error_bound(vi)
        assert scan - 1e-7 <= out.objective <= scan + slack + 1e-7
        assert scan > 0.0  # the case is not vacuous


def test_linearization_error_bound_totals_per_quarter_terms():
    vi = validate_instance(toy_instance(0))
    total = 0.0
    n = vi.config.sos2_points
    for c in COMMODITIES:
        for t in range(vi.time.n_quarters):
            s_lo, s_hi, d_lo, d_hi = lin_ranges(vi, c, t)
            d1 = (s_hi - s_lo) / (n - 1)
            d2 = (d_hi - d_lo) / (n - 1)
            total += 0.25 * (d1 * d1 + d2 * d2)
    assert abs(linearization_error_bound(vi) - total) <= 1e-12


def test_master_bounds_extensive_form_from_above():
    # with no cuts the master ignores recourse cost entirely
    vi = validate_instance(toy_instance(2))
    mip_m, _ = build_master(vi, cuts=(), n_groups=vi.scenarios.n_da)
    out_m = solve_milp(mip_m, rel_gap=1e-9)
    mip_e, _, _ = build_extensive_form(vi)
    out_e = solve_milp(mip_e, rel_gap=1e-9)
    assert out_m.objective >= out_e.objective - 1e-7
