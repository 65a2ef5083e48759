"""Model builders: first-stage block (loads, selling prices, bilinear-revenue
linearization, DA bid curves), per-DA-scenario operational sub-problems, the
decomposition master, and the extensive-form monolith used as an oracle.

Revenue l*p is handled as w1 - w2 with w1 = ((l+p)/2)^2 interpolated on an
SOS2 breakpoint grid (chord over-estimates a convex square, which is safe in
a maximization) and w2 = ((l-p)/2)^2 bounded below by tangent lines
(max-affine under-estimator). Segment selection for the price-responsive
load model uses one binary per segment with per-row big-M constants computed
from the instance ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .branchbound import MixedIntegerProgram, Sos2Set
from .errors import DegenerateRange, PriceOutsideGrid
from .instance import COMMODITIES, ELECTRICITY, HYDROGEN, ValidatedInstance
from .lp import EQ, GE, INF, LE, LpBuilder

C_TAGS = {ELECTRICITY: "e", HYDROGEN: "h"}


def sos2_grid(lo, hi, n_pts):
    """Evenly spaced breakpoints spanning [lo, hi] inclusive."""
    if hi <= lo:
        raise DegenerateRange(f"breakpoint range [{lo}, {hi}] is empty")
    if n_pts < 2:
        raise DegenerateRange(f"need at least 2 breakpoints, got {n_pts}")
    step = (hi - lo) / (n_pts - 1)
    return np.array([lo + m * step for m in range(n_pts)])


def max_affine_lines(lo, hi, n_pts):
    """Tangent lines to z^2 at the sos2_grid breakpoints: each line
    a*z + b touches z^2 at its breakpoint and under-estimates it elsewhere."""
    grid = sos2_grid(lo, hi, n_pts)
    return [(2.0 * z, -z * z) for z in grid]


def bracket(y, xi):
    """Bracketing step index and interpolation weights for price xi on the
    bid grid y: returns (j, w_j, w_j1) with the right-open convention; the
    top grid price maps to the last step."""
    if xi < y[0] or xi > y[-1]:
        raise PriceOutsideGrid(f"price {xi} outside bid grid [{y[0]}, {y[-1]}]")
    if xi >= y[-1]:
        return len(y) - 2, 0.0, 1.0
    j = int(np.searchsorted(y, xi, side="right")) - 1
    if xi == y[j]:
        return j, 1.0, 0.0
    w_hi = (xi - y[j]) / (y[j + 1] - y[j])
    return j, 1.0 - w_hi, w_hi


@dataclass
class LinGrid:
    """Linearization data for one (quarter, commodity) pair."""
    s_grid: np.ndarray            # breakpoints of (l+p)/2
    d_lines: list                 # tangent (a, b) pairs for (l-p)/2
    err_bound: float              # chord + tangent worst-case gap


@dataclass
class FsMeta:
    """Column/row bookkeeping for the shared first-stage block."""
    le: list = field(default_factory=list)    # [t] -> col name
    lh: list = field(default_factory=list)
    pe: list = field(default_factory=list)
    ph: list = field(default_factory=list)
    w1: dict = field(default_factory=dict)    # (c, t) -> col name
    w2: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)     # (c, t, m) -> col name
    beta: dict = field(default_factory=dict)  # (c, t) -> [col names]
    md: dict = field(default_factory=dict)    # (t, a) -> col name
    xd: dict = field(default_factory=dict)    # (hour, j) -> col name
    grids: dict = field(default_factory=dict)  # (c, t) -> LinGrid
    binaries: list = field(default_factory=list)
    sos2: list = field(default_factory=list)  # (set name, [col names])
    q_cap_e: np.ndarray = None                # per-quarter procurement cap


def lin_ranges(vi: ValidatedInstance, commodity, t):
    """Value ranges of (l+p)/2 and (l-p)/2 for one quarter and commodity."""
    p_lo, p_hi = vi.load_price.price_range(commodity, t)
    l_hi = vi.max_load_q(commodity, t)
    return (0.5 * p_lo, 0.5 * (l_hi + p_hi),
            -0.5 * p_hi, 0.5 * (l_hi - p_lo))


def _lin_grid(vi, commodity, t):
    n = vi.config.sos2_points
    s_lo, s_hi, d_lo, d_hi = lin_ranges(vi, commodity, t)
    s_grid = sos2_grid(s_lo, s_hi, n)
    d_lines = max_affine_lines(d_lo, d_hi, n)
    d1 = (s_hi - s_lo) / (n - 1)
    d2 = (d_hi - d_lo) / (n - 1)
    return LinGrid(s_grid, d_lines, 0.25 * d1 * d1 + 0.25 * d2 * d2)


def linearization_error_bound(vi: ValidatedInstance):
    """Worst-case |(w1 - w2) - l*p| summed over quarters and commodities."""
    total = 0.0
    for c in COMMODITIES:
        for t in range(vi.time.n_quarters):
            total += _lin_grid(vi, c, t).err_bound
    return total


def add_first_stage(b: LpBuilder, vi: ValidatedInstance, alpha_groups=None):
    """Add loads, selling prices, segment selection, revenue linearization,
    DA purchases/bid steps, and the procurement valid inequality. Returns
    FsMeta. alpha_groups, when given, adds one surrogate column per group
    with objective -1 (the master's expected-ID-cost stand-ins)."""
    meta = FsMeta()
    dt = vi.dt
    nq = vi.time.n_quarters
    tree = vi.scenarios.da_scenarios
    y = vi.bid_grid.y

    for c in COMMODITIES:
        tag = C_TAGS[c]
        for t in range(nq):
            p_lo, p_hi = vi.load_price.price_range(c, t)
            l_hi = vi.max_load_q(c, t)
            l_name = f"l_{tag}_t{t}"
            p_name = f"p_{tag}_t{t}"
            b.add_col(l_name, 0.0, l_hi)
            b.add_col(p_name, p_lo, p_hi)
            (meta.le if c == ELECTRICITY else meta.lh).append(l_name)
            (meta.pe if c == ELECTRICITY else meta.ph).append(p_name)

            segs = vi.load_price.segments(c, t)
            seg_names = []
            hull_p, hull_l = [], []
            for m, s in enumerate(segs):
                u_name = f"u_{tag}_t{t}_m{m}"
                b.add_col(u_name, 0.0, 1.0)
                meta.u[(c, t, m)] = u_name
                seg_names.append(u_name)
                meta.binaries.append(u_name)
                # price window rows with per-segment big-M spans
                m6 = s.p_lo - p_lo
                m7 = p_hi - s.p_hi
                if m6 > 0:
                    b.add_row(f"plo_{tag}_t{t}_m{m}",
                              {p_name: 1.0, u_name: -m6}, GE, s.p_lo - m6)
                if m7 > 0:
                    b.add_row(f"phi_{tag}_t{t}_m{m}",
                              {p_name: 1.0, u_name: m7}, LE, s.p_hi + m7)
                # load cap within the active segment (off-segment slack m9)
                seg_min_load = dt * (s.A * p_hi + s.B)
                m9 = max(0.0, l_hi - seg_min_load)
                b.add_row(f"lcap_{tag}_t{t}_m{m}",
                          {l_name: 1.0, p_name: -dt * s.A, u_name: m9},
                          LE, dt * s.B + m9)
                # hull companions: per-segment shares whose caps scale with
                # the selector, so the relaxation cannot mix segments into
                # load/price pairs no single segment admits; redundant once
                # the selectors are integral
                ps = f"ps_{tag}_t{t}_m{m}"
                ls = f"ls_{tag}_t{t}_m{m}"
                b.add_col(ps, 0.0, s.p_hi)
                b.add_col(ls, 0.0, max(dt * (s.A * s.p_lo + s.B), 0.0))
                hull_p.append(ps)
                hull_l.append(ls)
                b.add_row(f"hplo_{tag}_t{t}_m{m}",
                          {ps: 1.0, u_name: -s.p_lo}, GE, 0.0)
                b.add_row(f"hphi_{tag}_t{t}_m{m}",
                          {ps: 1.0, u_name: -s.p_hi}, LE, 0.0)
                b.add_row(f"hlcap_{tag}_t{t}_m{m}",
                          {ls: 1.0, ps: -dt * s.A, u_name: -dt * s.B},
                          LE, 0.0)
            b.add_row(f"useg_{tag}_t{t}", {n: 1.0 for n in seg_names}, EQ, 1.0)
            b.add_row(f"hpsum_{tag}_t{t}",
                      dict([(p_name, 1.0)] + [(n, -1.0) for n in hull_p]),
                      EQ, 0.0)
            b.add_row(f"hlsum_{tag}_t{t}",
                      dict([(l_name, 1.0)] + [(n, -1.0) for n in hull_l]),
                      EQ, 0.0)

            grid = _lin_grid(vi, c, t)
            meta.grids[(c, t)] = grid
            beta_names = []
            for m, f in enumerate(grid.s_grid):
                bn = f"be_{tag}_t{t}_m{m}"
                b.add_col(bn, 0.0, 1.0)
                beta_names.append(bn)
            meta.beta[(c, t)] = beta_names
            meta.sos2.append((f"sos_{tag}_t{t}", beta_names,
                              [float(f) for f in grid.s_grid]))
            w1 = f"w1_{tag}_t{t}"
            w2 = f"w2_{tag}_t{t}"
            f2max = float(np.max(grid.s_grid ** 2))
            d2max = max(x * x for x in
                        (grid.d_lines[0][0] / 2.0, grid.d_lines[-1][0] / 2.0))
            b.add_col(w1, 0.0, f2max, obj=1.0)
            b.add_col(w2, 0.0, d2max, obj=-1.0)
            meta.w1[(c, t)] = w1
            meta.w2[(c, t)] = w2
            b.add_row(f"sdef_{tag}_t{t}",
                      dict([(l_name, 0.5), (p_name, 0.5)]
                           + [(bn, -f) for bn, f in zip(beta_names, grid.s_grid)]),
                      EQ, 0.0)
            b.add_row(f"w1def_{tag}_t{t}",
                      dict([(w1, 1.0)]
                           + [(bn, -f * f) for bn, f in zip(beta_names, grid.s_grid)]),
                      EQ, 0.0)
            b.add_row(f"bsum_{tag}_t{t}", {bn: 1.0 for bn in beta_names}, EQ, 1.0)
            for k, (a_c, b_c) in enumerate(grid.d_lines):
                b.add_row(f"w2lin_{tag}_t{t}_k{k}",
                          {w2: 1.0, l_name: -0.5 * a_c, p_name: 0.5 * a_c},
                          GE, b_c)
            # product caps: every point satisfying the interpolation rows
            # with an adjacent support obeys w1 - w2 <= l*p + err, and l*p
            # is bounded by its bilinear upper envelopes over the box; these
            # rows cut nothing feasible but stop fractional interpolation
            # weights from faking revenue
            err = grid.err_bound
            b.add_row(f"wcapa_{tag}_t{t}",
                      {w1: 1.0, w2: -1.0, l_name: -p_hi}, LE, err)
            b.add_row(f"wcapb_{tag}_t{t}",
                      {w1: 1.0, w2: -1.0, l_name: -p_lo, p_name: -l_hi},
                      LE, err - l_hi * p_lo)
            # revenue never exceeds the active segment's concave quadratic
            # q_m(p) = dt*(A_m*p + B_m)*p, so tangents of q_m homogenized
            # with the hull shares stay valid at every selection and deny
            # the interpolation weights the chord's overestimate
            for k, frac in enumerate((0.0, 0.5, 1.0)):
                coeffs = {w1: 1.0, w2: -1.0}
                for m, s in enumerate(segs):
                    p_hat = s.p_lo + frac * (s.p_hi - s.p_lo)
                    slope = dt * (2.0 * s.A * p_hat + s.B)
                    const = dt * (s.A * p_hat + s.B) * p_hat - slope * p_hat
                    if slope != 0.0:
                        coeffs[hull_p[m]] = -slope
                    if const != 0.0:
                        coeffs[meta.u[(c, t, m)]] = -const
                b.add_row(f"wsec_{tag}_t{t}_k{k}", coeffs, LE, err)
            # the same product caps as above but on the per-segment shares,
            # each segment contributing its own tighter box
            dma = {w1: 1.0, w2: -1.0}
            dmb = {w1: 1.0, w2: -1.0}
            for m, s in enumerate(segs):
                lhi_m = max(dt * (s.A * s.p_lo + s.B), 0.0)
                if s.p_hi != 0.0:
                    dma[hull_l[m]] = -s.p_hi
                if s.p_lo != 0.0:
                    dmb[hull_l[m]] = -s.p_lo
                if lhi_m != 0.0:
                    dmb[hull_p[m]] = -lhi_m
                    dmb[meta.u[(c, t, m)]] = (
                        dmb.get(meta.u[(c, t, m)], 0.0) + lhi_m * s.p_lo)
            b.add_row(f"wdma_{tag}_t{t}", dma, LE, err)
            b.add_row(f"wdmb_{tag}_t{t}", dmb, LE, err)

    # DA purchases per quarter/DA scenario, bid steps per hour, clearing rows
    dev = vi.devices
    q_cap = np.array([vi.max_load_q(ELECTRICITY, t)
                      + (dev.b_chg_max + dev.e_max) * dt for t in range(nq)])
    meta.q_cap_e = q_cap
    n_da = len(tree)
    for t in range(nq):
        for a in range(n_da):
            name = f"md_t{t}_s{a}"
            xi = tree[a].da_price[vi.time.hour_of(t)]
            b.add_col(name, 0.0, float(q_cap[t]), obj=-tree[a].prob * xi)
            meta.md[(t, a)] = name
            # procurement never exceeds load plus device intake capability
            b.add_row(f"vproc_t{t}_s{a}",
                      {name: 1.0, meta.le[t]: -1.0}, LE,
                      (dev.b_chg_max + dev.e_max) * dt)
    for h in range(vi.time.n_hours):
        cap_h = float(sum(q_cap[t] for t in vi.time.quarters_of(h)))
        for j in range(len(y)):
            name = f"xd_h{h}_j{j}"
            b.add_col(name, 0.0, cap_h)
            meta.xd[(h, j)] = name
        for j in range(len(y) - 1):
            b.add_row(f"xdmono_h{h}_j{j}",
                      {meta.xd[(h, j + 1)]: 1.0, meta.xd[(h, j)]: -1.0}, LE, 0.0)
        for a in range(n_da):
            j, w_lo, w_hi = bracket(y, tree[a].da_price[h])
            coeffs = {meta.md[(t, a)]: 1.0 for t in vi.time.quarters_of(h)}
            coeffs[meta.xd[(h, j)]] = coeffs.get(meta.xd[(h, j)], 0.0) - w_lo
            coeffs[meta.xd[(h, j + 1)]] = (coeffs.get(meta.xd[(h, j + 1)], 0.0)
                                           - w_hi)
            b.add_row(f"daclr_h{h}_s{a}", coeffs, EQ, 0.0)

    if alpha_groups is not None:
        for k in range(alpha_groups):
            b.add_col(f"alpha_k{k}", 0.0, INF, obj=-1.0)
    return meta


@dataclass
class OpsMeta:
    """Column/row bookkeeping for one DA scenario's operational block."""
    a: int
    mi: dict = field(default_factory=dict)    # (t, child) -> col name
    xi: dict = field(default_factory=dict)    # (t, j) -> col name
    ops: dict = field(default_factory=dict)   # (kind, t, child) -> col name
    comb: dict = field(default_factory=dict)  # (t, child) -> row name
    edem: dict = field(default_factory=dict)  # (t, child) -> row name
    hdem: dict = field(default_factory=dict)  # (t, child) -> row name

OP_KINDS = ("bc", "bd", "bl", "ep", "hc", "hd", "hl", "ve", "vh")


def add_scenario_ops(b: LpBuilder, vi: ValidatedInstance, a,
                     le_vars=None, lh_vars=None, md_vars=None,
                     le_vals=None, lh_vals=None, md_vals=None,
                     children_sel=None):
    """Add the operational recourse block for DA scenario a: one device
    trajectory per ID child, shared intraday bid steps, clearing rows, and
    the relaxed balance/demand rows. First-stage quantities enter either as
    columns (extensive form) or as fixed right-hand sides (sub-problem).
    children_sel restricts the block to a subset of ID children (used by
    the finest cut disaggregation, which prices each child separately)."""
    meta = OpsMeta(a)
    dev = vi.devices
    dt = vi.dt
    nq = vi.time.n_quarters
    scen = vi.scenarios.da_scenarios[a]
    children = scen.id_children
    y = vi.bid_grid.y
    sfx = f"_a{a}"

    q_cap = [vi.max_load_q(ELECTRICITY, t) + (dev.b_chg_max + dev.e_max) * dt
             for t in range(nq)]
    for t in range(nq):
        for j in range(len(y)):
            name = f"xi{sfx}_t{t}_j{j}"
            b.add_col(name, 0.0, q_cap[t])
            meta.xi[(t, j)] = name
        for j in range(len(y) - 1):
            b.add_row(f"ximono{sfx}_t{t}_j{j}",
                      {meta.xi[(t, j + 1)]: 1.0, meta.xi[(t, j)]: -1.0},
                      LE, 0.0)

    caps = {
        "bc": vi.b_chg_cap_q(), "bd": vi.b_dis_cap_q(),
        "hc": vi.h_chg_cap_q(), "hd": vi.h_dis_cap_q(),
        "ep": vi.e_cap_q(),
    }
    sel = range(len(children)) if children_sel is None else children_sel
    for ci in sel:
        child = children[ci]
        pi = scen.prob * child.prob
        for t in range(nq):
            cols = {}
            for kind in OP_KINDS:
                name = f"{kind}{sfx}_t{t}_c{ci}"
                if kind == "bl":
                    b.add_col(name, dev.b_level_min, dev.b_level_max)
                elif kind == "hl":
                    b.add_col(name, dev.h_level_min, dev.h_level_max)
                elif kind in ("ve", "vh"):
                    b.add_col(name, -INF, INF)
                else:
                    b.add_col(name, 0.0, caps[kind])
                cols[kind] = name
                meta.ops[(kind, t, ci)] = name
            mi_name = f"mi{sfx}_t{t}_c{ci}"
            b.add_col(mi_name, 0.0, q_cap[t], obj=-pi * child.id_price[t])
            meta.mi[(t, ci)] = mi_name

            # relaxed electric balance: purchases cover charging, conversion
            # and the served load net of battery discharge
            comb = {mi_name: 1.0, cols["bd"]: 1.0,
                    cols["bc"]: -1.0, cols["ep"]: -1.0}
            rhs = 0.0
            if md_vars is not None:
                comb[md_vars[(t, a)]] = 1.0
            else:
                rhs -= md_vals[t]
            if le_vars is not None:
                comb[le_vars[t]] = -1.0
            else:
                rhs += le_vals[t]
            rname = f"comb{sfx}_t{t}_c{ci}"
            b.add_row(rname, comb, GE, rhs)
            meta.comb[(t, ci)] = rname

            edem = {cols["ve"]: 1.0, cols["bd"]: 1.0}
            e_rhs = 0.0
            if le_vars is not None:
                edem[le_vars[t]] = -1.0
            else:
                e_rhs = le_vals[t]
            ename = f"edem{sfx}_t{t}_c{ci}"
            b.add_row(ename, edem, EQ, e_rhs)
            meta.edem[(t, ci)] = ename

            hdem = {cols["vh"]: 1.0, cols["hd"]: 1.0}
            h_rhs = 0.0
            if lh_vars is not None:
                hdem[lh_vars[t]] = -1.0
            else:
                h_rhs = lh_vals[t]
            hname = f"hdem{sfx}_t{t}_c{ci}"
            b.add_row(hname, hdem, EQ, h_rhs)
            meta.hdem[(t, ci)] = hname

            b.add_row(f"conv{sfx}_t{t}_c{ci}",
                      {cols["ep"]: dev.eta_e / dev.H,
                       cols["hc"]: -1.0, cols["vh"]: -1.0}, EQ, 0.0)

            b_prev = meta.ops.get(("bl", t - 1, ci))
            h_prev = meta.ops.get(("hl", t - 1, ci))
            bdyn = {cols["bl"]: 1.0, cols["bc"]: -dev.eta_b,
                    cols["bd"]: 1.0 / dev.eta_b}
            hdyn = {cols["hl"]: 1.0, cols["hc"]: -dev.eta_h,
                    cols["hd"]: 1.0 / dev.eta_h}
            if b_prev is None:
                b.add_row(f"bdyn{sfx}_t{t}_c{ci}", bdyn, EQ, dev.b_level_init)
                b.add_row(f"hdyn{sfx}_t{t}_c{ci}", hdyn, EQ, dev.h_level_init)
            else:
                bdyn[b_prev] = -1.0
                hdyn[h_prev] = -1.0
                b.add_row(f"bdyn{sfx}_t{t}_c{ci}", bdyn, EQ, 0.0)
                b.add_row(f"hdyn{sfx}_t{t}_c{ci}", hdyn, EQ, 0.0)

            j, w_lo, w_hi = bracket(y, child.id_price[t])
            b.add_row(f"idclr{sfx}_t{t}_c{ci}",
                      {mi_name: 1.0, meta.xi[(t, j)]: -w_lo,
                       meta.xi[(t, j + 1)]: -w_hi}, EQ, 0.0)
    return meta


@dataclass(frozen=True)
class Cut:
    """Optimality cut for one surrogate group: alpha_group is bounded below
    by the supporting plane of the group's expected ID cost."""
    group: int
    const: float   # group cost at the generating first-stage point
    rhs: float     # const minus the gradient's inner product with that point
    g_md: dict     # (t, a) -> cost sensitivity to the DA purchase
    g_le: dict     # t -> cost sensitivity to the served electric load
    g_lh: dict     # t -> cost sensitivity to the served hydrogen load
    iteration: int = -1
    point_digest: str = ""  # digest of the generating first-stage point

    def value_at(self, md, le, lh):
        """Supporting-plane value at a first-stage point (arrays indexed
        [t, a] and [t])."""
        v = self.rhs
        for (t, a), g in self.g_md.items():
            v += g * md[t, a]
        for t, g in self.g_le.items():
            v += g * le[t]
        for t, g in self.g_lh.items():
            v += g * lh[t]
        return v


def build_master(vi: ValidatedInstance, cuts=(), n_groups=1):
    """Decomposition master: first-stage block plus cost surrogates bounded
    by the accumulated cuts."""
    b = LpBuilder("master")
    meta = add_first_stage(b, vi, alpha_groups=n_groups)
    for i, cut in enumerate(cuts):
        coeffs = {f"alpha_k{cut.group}": 1.0}
        for (t, a), g in cut.g_md.items():
            name = meta.md[(t, a)]
            coeffs[name] = coeffs.get(name, 0.0) - g
        for t, g in cut.g_le.items():
            coeffs[meta.le[t]] = coeffs.get(meta.le[t], 0.0) - g
        for t, g in cut.g_lh.items():
            coeffs[meta.lh[t]] = coeffs.get(meta.lh[t], 0.0) - g
        b.add_row(f"cut_{i}", coeffs, GE, cut.rhs)
    lp = b.build()
    mip = MixedIntegerProgram(
        lp,
        binaries=[lp.col(n) for n in meta.binaries],
        sos2=[Sos2Set(n, [lp.col(c) for c in cols], g)
              for n, cols, g in meta.sos2],
    )
    return mip, meta


def build_subproblem(vi: ValidatedInstance, a, md_vals, le_vals, lh_vals,
                     children_sel=None):
    """Recourse LP for DA scenario a with first-stage decisions fixed:
    md_vals is the per-quarter DA purchase in scenario a, le_vals/lh_vals
    the served loads."""
    b = LpBuilder(f"sp_a{a}")
    meta = add_scenario_ops(b, vi, a,
                            le_vals=le_vals, lh_vals=lh_vals, md_vals=md_vals,
                            children_sel=children_sel)
    return b.build(), meta


def refresh_subproblem(lp, meta: OpsMeta, md_vals, le_vals, lh_vals):
    """Re-target a built sub-problem at another first-stage point.

    The first stage enters the recourse LP only through right-hand sides
    (balance, electric demand, hydrogen demand), so re-pricing swaps the rhs
    vector and shares everything else with the original program."""
    rhs = lp.row_rhs.copy()
    for (t, _ci), name in meta.comb.items():
        rhs[lp.row_index[name]] = le_vals[t] - md_vals[t]
    for (t, _ci), name in meta.edem.items():
        rhs[lp.row_index[name]] = le_vals[t]
    for (t, _ci), name in meta.hdem.items():
        rhs[lp.row_index[name]] = lh_vals[t]
    return lp.with_rhs(rhs)


def build_extensive_form(vi: ValidatedInstance):
    """Monolithic equivalent: first-stage block plus every scenario's
    operational block, coupled through shared columns."""
    b = LpBuilder("extensive")
    meta = add_first_stage(b, vi, alpha_groups=None)
    ops = []
    for a in range(vi.scenarios.n_da):
        md_vars = {(t, a): meta.md[(t, a)] for t in range(vi.time.n_quarters)}
        ops.append(add_scenario_ops(b, vi, a, le_vars=meta.le,
                                    lh_vars=meta.lh, md_vars=md_vars))
    lp = b.build()
    mip = MixedIntegerProgram(
        lp,
        binaries=[lp.col(n) for n in meta.binaries],
        sos2=[Sos2Set(n, [lp.col(c) for c in cols], g)
              for n, cols, g in meta.sos2],
    )
    return mip, meta, ops


@dataclass
class FirstStageSolution:
    """First-stage decisions pulled out of a master or extensive solve."""
    le: np.ndarray
    lh: np.ndarray
    pe: np.ndarray
    ph: np.ndarray
    md: np.ndarray      # (n_quarters, n_da)
    xd: np.ndarray      # (n_hours, J)
    alpha: np.ndarray   # (n_groups,)
    fs_value: float     # objective excluding the surrogate columns
    objective: float    # raw objective of the solved program


def extract_first_stage(vi: ValidatedInstance, meta: FsMeta, out, n_groups=0):
    nq = vi.time.n_quarters
    n_da = vi.scenarios.n_da
    j_pts = vi.bid_grid.J
    le = np.array([out.value(n) for n in meta.le])
    lh = np.array([out.value(n) for n in meta.lh])
    pe = np.array([out.value(n) for n in meta.pe])
    ph = np.array([out.value(n) for n in meta.ph])
    md = np.array([[out.value(meta.md[(t, a)]) for a in range(n_da)]
                   for t in range(nq)])
    xd = np.array([[out.value(meta.xd[(h, j)]) for j in range(j_pts)]
                   for h in range(vi.time.n_hours)])
    alpha = np.array([out.value(f"alpha_k{k}") for k in range(n_groups)])
    obj = out.objective
    return FirstStageSolution(le, lh, pe, ph, md, xd, alpha,
                              obj + float(alpha.sum()), obj)


@dataclass
class ScenarioOutcome:
    """Recourse solve for one DA scenario: cost, flows and the dual data
    the cuts are built from."""
    a: int
    cost: float          # joint-probability-weighted ID purchase cost
    mi: np.ndarray       # (n_quarters, n_children)
    xi: np.ndarray       # (n_quarters, J)
    lam: np.ndarray      # (n_quarters, n_children) balance-row duals
    rho: np.ndarray      # (n_quarters, n_children) hydrogen-demand duals
    ops: dict            # kind -> (n_quarters, n_children)
    children: tuple = () # child indices actually present in the block


def extract_scenario(vi: ValidatedInstance, meta: OpsMeta, out):
    nq = vi.time.n_quarters
    nch = len(vi.scenarios.da_scenarios[meta.a].id_children)
    j_pts = vi.bid_grid.J

    # children outside the block (subset solves) read as zeros
    def val(key, table):
        name = table.get(key)
        return out.value(name) if name is not None else 0.0

    def dual(key, table):
        name = table.get(key)
        return out.dual(name) if name is not None else 0.0

    mi = np.array([[val((t, c), meta.mi) for c in range(nch)]
                   for t in range(nq)])
    xi = np.array([[out.value(meta.xi[(t, j)]) for j in range(j_pts)]
                   for t in range(nq)])
    lam = np.array([[dual((t, c), meta.comb) for c in range(nch)]
                    for t in range(nq)])
    rho = np.array([[dual((t, c), meta.hdem) for c in range(nch)]
                    for t in range(nq)])
    ops = {kind: np.array([[val((kind, t, c), meta.ops)
                            for c in range(nch)] for t in range(nq)])
           for kind in OP_KINDS}
    present = tuple(sorted({c for (_, c) in meta.mi}))
    return ScenarioOutcome(meta.a, -out.objective, mi, xi, lam, rho, ops,
                           present)
