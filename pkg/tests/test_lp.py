"""LP core tests: both engines against small frozen oracles, strong duality,
warm starts, and status detection."""

import itertools

import numpy as np
import pytest

from chargebid.lp import (EQ, GE, INF, INFEASIBLE, LE, OPTIMAL, UNBOUNDED,
                          LpBuilder, solve_lp, write_mps)

ENGINES = ["dense", "highs"]


def build_simple():
    # max 3a + 2b  s.t.  a + b <= 4,  a <= 2
    b = LpBuilder("simple", sense="max")
    b.add_col("a", 0.0, INF, obj=3.0)
    b.add_col("b", 0.0, INF, obj=2.0)
    b.add_row("cap", [("a", 1.0), ("b", 1.0)], LE, 4.0)
    b.add_row("lim", [("a", 1.0)], LE, 2.0)
    return b.build()


def vertex_enumeration_optimum(lp):
    """Brute-force oracle: evaluate all basic points of a tiny LP by solving
    every n x n subsystem of active constraints."""
    m, n = lp.n_rows, lp.n_cols
    A = lp.matrix.toarray()
    rows = []
    rhs = []
    for i in range(m):
        rows.append(A[i])
        rhs.append(lp.row_rhs[i])
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if lp.col_lower[j] > -INF:
            rows.append(e.copy())
            rhs.append(lp.col_lower[j])
        if lp.col_upper[j] < INF:
            rows.append(e.copy())
            rhs.append(lp.col_upper[j])
    rows = np.array(rows)
    rhs = np.array(rhs)
    best = -np.inf
    arg = None
    for combo in itertools.combinations(range(len(rows)), n):
        M = rows[list(combo)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs[list(combo)])
        ax = A @ x
        ok = True
        for i, rel in enumerate(lp.row_relations):
            r = ax[i] - lp.row_rhs[i]
            if rel == LE and r > 1e-9:
                ok = False
            if rel == GE and r < -1e-9:
                ok = False
            if rel == EQ and abs(r) > 1e-9:
                ok = False
        if not ok:
            continue
        if (x < lp.col_lower - 1e-9).any() or (x > lp.col_upper + 1e-9).any():
            continue
        v = float(lp.obj @ x)
        if v > best:
            best, arg = v, x
    return best, arg


@pytest.mark.parametrize("engine", ENGINES)
def test_simple_lp_against_vertex_oracle(engine):
    lp = build_simple()
    oracle_obj, oracle_x = vertex_enumeration_optimum(lp)
    assert oracle_obj == pytest.approx(10.0, abs=1e-12)
    assert oracle_x == pytest.approx([2.0, 2.0], abs=1e-12)
    out = solve_lp(lp, engine=engine)
    assert out.status == OPTIMAL
    assert out.objective == pytest.approx(10.0, abs=1e-9)
    assert out.value("a") == pytest.approx(2.0, abs=1e-9)
    assert out.value("b") == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("engine", ENGINES)
def test_dual_convention_shadow_price(engine):
    # max x s.t. x <= 1: raising the rhs by 1 raises the optimum by 1,
    # so the reported dual must be +1.
    b = LpBuilder("dual", sense="max")
    b.add_col("x", 0.0, INF, obj=1.0)
    b.add_row("cap", [("x", 1.0)], LE, 1.0)
    out = solve_lp(b.build(), engine=engine)
    assert out.status == OPTIMAL
    assert out.dual("cap") == pytest.approx(1.0, abs=1e-9)

    # min x s.t. x >= 1: dual is also +1 in the same d(obj)/d(rhs) sense.
    b = LpBuilder("dual2", sense="min")
    b.add_col("x", 0.0, INF, obj=1.0)
    b.add_row("floor", [("x", 1.0)], GE, 1.0)
    out = solve_lp(b.build(), engine=engine)
    assert out.dual("floor") == pytest.approx(1.0, abs=1e-9)


def random_lp(rng, n=8, m=6, eq_frac=0.2):
    b = LpBuilder("rand", sense="max" if rng.random() < 0.5 else "min")
    for j in range(n):
        lo = 0.0 if rng.random() < 0.7 else -float(rng.uniform(0, 3))
        hi = float(rng.uniform(1, 6)) if rng.random() < 0.8 else INF
        b.add_col(f"x{j}", lo, hi, obj=float(rng.normal()))
    x_feas = np.array([rng.uniform(0, 1) for _ in range(n)])
    for i in range(m):
        coeffs = {f"x{j}": float(rng.normal()) for j in range(n)
                  if rng.random() < 0.6}
        if not coeffs:
            coeffs = {f"x{rng.integers(0, n)}": 1.0}
        lhs = sum(v * x_feas[int(k[1:])] for k, v in coeffs.items())
        u = rng.random()
        if u < eq_frac:
            b.add_row(f"r{i}", coeffs, EQ, lhs)
        elif u < 0.6:
            b.add_row(f"r{i}", coeffs, LE, lhs + float(rng.uniform(0, 2)))
        else:
            b.add_row(f"r{i}", coeffs, GE, lhs - float(rng.uniform(0, 2)))
    return b.build()


def check_strong_duality(lp, out):
    """obj == y'b + sum of reduced-cost * bound contributions."""
    if out.status != OPTIMAL:
        return
    dual_obj = float(out.duals @ lp.row_rhs)
    for j in range(lp.n_cols):
        rc = out.reduced_costs[j]
        if abs(rc) < 1e-7:
            continue
        x = out.x[j]
        dual_obj += rc * x
    assert dual_obj == pytest.approx(out.objective, abs=1e-6 * (1 + abs(out.objective)))


@pytest.mark.parametrize("engine", ENGINES)
def test_random_lps_cross_engine_and_duality(engine):
    rng = np.random.default_rng(42)
    solved = 0
    for _ in range(60):
        lp = random_lp(rng)
        out = solve_lp(lp, engine=engine)
        ref = solve_lp(lp, engine="highs" if engine == "dense" else "dense")
        assert out.status == ref.status, lp.name
        if out.status == OPTIMAL:
            solved += 1
            assert out.objective == pytest.approx(
                ref.objective, abs=1e-6 * (1 + abs(ref.objective)))
            check_strong_duality(lp, out)
            # feasibility of the reported point
            ax = lp.matrix @ out.x
            for i, rel in enumerate(lp.row_relations):
                r = ax[i] - lp.row_rhs[i]
                scale = 1e-6 * (1 + abs(lp.row_rhs[i]))
                if rel == LE:
                    assert r <= scale
                elif rel == GE:
                    assert r >= -scale
                else:
                    assert abs(r) <= scale
    assert solved >= 30  # the generator makes mostly feasible instances


def test_warm_start_reoptimize_matches_cold():
    rng = np.random.default_rng(7)
    for _ in range(100):
        lp = random_lp(rng, n=6, m=5)
        cold = solve_lp(lp, engine="dense")
        if cold.status != OPTIMAL:
            continue
        # perturb one rhs and re-solve warm vs cold
        i = int(rng.integers(0, lp.n_rows))
        rhs = lp.row_rhs.copy()
        rhs[i] += float(rng.uniform(-0.1, 0.1))
        lp2 = lp.with_rhs(rhs)
        warm = solve_lp(lp2, warm=cold.basis, engine="dense")
        cold2 = solve_lp(lp2, engine="dense")
        assert warm.status == cold2.status
        if warm.status == OPTIMAL:
            assert warm.objective == pytest.approx(cold2.objective, abs=1e-8 * (1 + abs(cold2.objective)))


@pytest.mark.parametrize("engine", ENGINES)
def test_infeasible_detected(engine):
    b = LpBuilder("inf", sense="max")
    b.add_col("x", 0.0, INF, obj=1.0)
    b.add_row("lo", [("x", 1.0)], GE, 5.0)
    b.add_row("hi", [("x", 1.0)], LE, 2.0)
    out = solve_lp(b.build(), engine=engine)
    assert out.status == INFEASIBLE


@pytest.mark.parametrize("engine", ENGINES)
def test_unbounded_detected(engine):
    b = LpBuilder("unb", sense="max")
    b.add_col("x", 0.0, INF, obj=1.0)
    b.add_col("y", 0.0, 1.0, obj=0.0)
    b.add_row("r", [("y", 1.0)], LE, 1.0)
    out = solve_lp(b.build(), engine=engine)
    assert out.status == UNBOUNDED


def test_equality_row_and_free_variable():
    # free variable forced negative through an equality
    b = LpBuilder("free", sense="min")
    b.add_col("v", -INF, INF, obj=1.0)
    b.add_col("y", 0.0, 2.0, obj=0.0)
    b.add_row("bal", [("v", 1.0), ("y", 1.0)], EQ, -1.0)
    out = solve_lp(b.build(), engine="dense")
    assert out.status == OPTIMAL
    assert out.value("v") == pytest.approx(-3.0, abs=1e-9)
    assert out.objective == pytest.approx(-3.0, abs=1e-9)


def test_bound_flip_path():
    # optimum at upper bounds, reached via bound flips
    b = LpBuilder("flips", sense="max")
    for j in range(5):
        b.add_col(f"x{j}", 0.0, 1.0, obj=1.0 + 0.1 * j)
    b.add_row("cap", {f"x{j}": 1.0 for j in range(5)}, LE, 10.0)
    out = solve_lp(b.build(), engine="dense")
    assert out.objective == pytest.approx(sum(1.0 + 0.1 * j for j in range(5)), abs=1e-9)


def test_mps_dump_smoke(tmp_path):
    lp = build_simple()
    text = write_mps(lp)
    assert "ROWS" in text and "COLUMNS" in text and "RHS" in text
    p = tmp_path / "simple.mps"
    p.write_text(text)
    assert p.stat().st_size > 0
