"""Bid curves and settlement.

A curve is the step-volume vector a solve leaves on the bid price grid: one
day-ahead curve per delivery hour, one intraday curve per quarter and
conditioning DA scenario. Clearing interpolates the steps at the realized
price with the same right-open bracketing the model's clearing rows use, so
replaying a solve against its own scenario path reproduces the optimized
purchases exactly. Settlement clears a whole horizon, picking the intraday
curve set whose conditioning DA price vector sits nearest the realized one,
and a fixed-purchase scheduling LP checks the cleared energy can actually be
routed through the devices to the committed loads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (InfeasibleReplay, MonotonicityViolation,
                     NoMatchingScenario)
from .formulation import bracket
from .instance import ELECTRICITY
from .lp import EQ, GE, INF, LpBuilder, OPTIMAL, solve_lp

DA = "da"
ID = "id"


@dataclass(frozen=True)
class BidCurve:
    """Monotone bid curve for one delivery interval: volumes offered at the
    grid prices, non-increasing in price. Intraday curves carry the DA
    scenario they were optimized under; day-ahead curves carry None."""
    interval: int
    market: str           # DA | ID
    scenario: object      # conditioning DA scenario index, None for DA
    prices: tuple
    volumes: tuple

    @property
    def points(self):
        return list(zip(self.prices, self.volumes))


def curve_from_steps(grid, steps, interval=0, market=DA, scenario=None,
                     tol=1e-9):
    """Build a curve from grid prices and step volumes.

    Prices must be strictly increasing and volumes monotone non-increasing;
    a step that rises above its predecessor raises MonotonicityViolation
    naming its index. Volumes within tol of zero are clamped to zero."""
    y = [float(p) for p in grid]
    x = [float(v) for v in steps]
    if len(y) != len(x):
        raise ValueError(f"{len(y)} grid prices but {len(x)} steps")
    if len(y) < 2:
        raise ValueError("a curve needs at least two price steps")
    for j in range(1, len(y)):
        if y[j] <= y[j - 1]:
            raise ValueError(f"grid prices not strictly increasing at {j}")
    for j in range(1, len(x)):
        if x[j] > x[j - 1] + tol:
            raise MonotonicityViolation(j, f"{x[j]} > {x[j - 1]}")
    for j, v in enumerate(x):
        if v < -tol:
            raise ValueError(f"negative volume {v} at step {j}")
        if v < 0.0:
            x[j] = 0.0
    return BidCurve(interval, market, scenario, tuple(y), tuple(x))


def cleared_volume(curve, price):
    """Volume awarded at a realized price: linear interpolation between the
    bracketing steps, exact at grid prices, right-open so the top grid price
    maps to the last step. Prices outside the grid raise PriceOutsideGrid."""
    j, w_lo, w_hi = bracket(curve.prices, price)
    return w_lo * curve.volumes[j] + w_hi * curve.volumes[j + 1]


@dataclass
class CurveBook:
    """Every curve a solve produced: day-ahead per delivery hour, intraday
    per (DA scenario, quarter), plus each scenario's DA price vector used to
    condition the intraday selection at settlement."""
    da: list                # [hour] -> BidCurve
    id_curves: dict         # a -> [quarter] -> BidCurve
    da_prices: dict         # a -> hourly DA price vector of scenario a


def build_curve_book(vi, fs, outcomes):
    """Assemble the curve book from a solved first stage and one recourse
    outcome per DA scenario (the per-da and single policies produce exactly
    that; the extensive form does too)."""
    y = vi.bid_grid.y
    seen = {}
    for o in outcomes:
        if o.a in seen:
            raise ValueError(f"two outcomes for DA scenario {o.a}; curves "
                             "need one joint recourse solve per scenario")
        seen[o.a] = o
    da = [curve_from_steps(y, fs.xd[h], interval=h, market=DA)
          for h in range(vi.time.n_hours)]
    id_curves = {}
    da_prices = {}
    for a in sorted(seen):
        o = seen[a]
        id_curves[a] = [curve_from_steps(y, o.xi[t], interval=t, market=ID,
                                         scenario=a)
                        for t in range(vi.time.n_quarters)]
        da_prices[a] = np.asarray(
            vi.scenarios.da_scenarios[a].da_price, dtype=float)
    return CurveBook(da, id_curves, da_prices)


@dataclass
class Settlement:
    """Cleared volumes and purchase cost for one realized price path."""
    scenario: int           # conditioning DA scenario the ID curves came from
    da_volumes: np.ndarray  # [hour] energy awarded day-ahead
    id_volumes: np.ndarray  # [quarter] energy awarded intraday
    da_cost: float
    id_cost: float

    @property
    def cost(self):
        return self.da_cost + self.id_cost


def _euclidean(u, v):
    return float(np.linalg.norm(np.asarray(u, float) - np.asarray(v, float)))


def settle_horizon(book, realized_da, realized_id, metric=_euclidean,
                   tol=1e-9):
    """Clear every curve against a realized price path.

    Day-ahead curves clear at the realized hourly prices. The intraday curve
    set is the one whose conditioning DA price vector is nearest the realized
    one under metric; two scenarios tied within tol leave the choice
    undefined and raise NoMatchingScenario."""
    realized_da = np.asarray(realized_da, dtype=float)
    realized_id = np.asarray(realized_id, dtype=float)
    if len(realized_da) != len(book.da):
        raise ValueError(f"{len(realized_da)} realized DA prices for "
                         f"{len(book.da)} delivery hours")
    if not book.id_curves:
        raise NoMatchingScenario("curve book holds no intraday curves")
    ranked = sorted((metric(realized_da, book.da_prices[a]), a)
                    for a in book.id_curves)
    if len(ranked) > 1 and ranked[1][0] - ranked[0][0] <= tol:
        raise NoMatchingScenario(
            f"DA scenarios {ranked[0][1]} and {ranked[1][1]} are "
            f"equidistant from the realized prices (within {tol})")
    a = ranked[0][1]
    curves = book.id_curves[a]
    if len(realized_id) != len(curves):
        raise ValueError(f"{len(realized_id)} realized ID prices for "
                         f"{len(curves)} delivery quarters")
    da_vol = np.array([cleared_volume(c, p)
                       for c, p in zip(book.da, realized_da)])
    id_vol = np.array([cleared_volume(c, p)
                       for c, p in zip(curves, realized_id)])
    return Settlement(a, da_vol, id_vol,
                      float(da_vol @ realized_da), float(id_vol @ realized_id))


def sale_revenue(vi, fs):
    """Selling revenue of a first-stage solution: its objective value with
    the expected DA purchase cost added back."""
    expected_da = 0.0
    tree = vi.scenarios.da_scenarios
    for a in range(vi.scenarios.n_da):
        for t in range(vi.time.n_quarters):
            expected_da += (tree[a].prob * tree[a].da_price[vi.time.hour_of(t)]
                            * fs.md[t, a])
    return fs.fs_value + expected_da


@dataclass
class ReplayResult:
    """Device schedule feasible for the settled purchases, and the profit it
    realizes: committed-load revenue minus what the settlement cost."""
    profit: float
    revenue: float
    cost: float
    md: np.ndarray      # [quarter] DA energy allotted within each hour
    ops: dict           # kind -> [quarter] device trajectory


_REPLAY_KINDS = ("bc", "bd", "bl", "ep", "hc", "hd", "hl", "ve", "vh")


def replay_operations(vi, fs, settlement):
    """Schedule the devices against settled purchases.

    Purchases are fixed: the hourly DA award (its split across quarters stays
    free) and the quarterly ID award. The LP re-optimizes charging,
    discharging, conversion and levels to deliver the committed loads; if no
    schedule fits, the settlement is not deliverable and InfeasibleReplay is
    raised."""
    dev = vi.devices
    dt = vi.dt
    nq = vi.time.n_quarters
    b = LpBuilder("replay")
    caps = {
        "bc": vi.b_chg_cap_q(), "bd": vi.b_dis_cap_q(),
        "hc": vi.h_chg_cap_q(), "hd": vi.h_dis_cap_q(),
        "ep": vi.e_cap_q(),
    }
    md = []
    cols = []
    for t in range(nq):
        name = f"md_t{t}"
        # same per-quarter intake cap the bidding model puts on DA purchases
        cap_t = vi.max_load_q(ELECTRICITY, t) + (dev.b_chg_max + dev.e_max) * dt
        b.add_col(name, 0.0, cap_t)
        md.append(name)
        ct = {}
        for kind in _REPLAY_KINDS:
            cn = f"{kind}_t{t}"
            if kind == "bl":
                b.add_col(cn, dev.b_level_min, dev.b_level_max)
            elif kind == "hl":
                b.add_col(cn, dev.h_level_min, dev.h_level_max)
            elif kind in ("ve", "vh"):
                b.add_col(cn, -INF, INF)
            else:
                b.add_col(cn, 0.0, caps[kind])
            ct[kind] = cn
        cols.append(ct)

        mi_t = float(settlement.id_volumes[t])
        b.add_row(f"comb_t{t}",
                  {name: 1.0, ct["bd"]: 1.0, ct["bc"]: -1.0, ct["ep"]: -1.0},
                  GE, float(fs.le[t]) - mi_t)
        b.add_row(f"edem_t{t}", {ct["ve"]: 1.0, ct["bd"]: 1.0},
                  EQ, float(fs.le[t]))
        b.add_row(f"hdem_t{t}", {ct["vh"]: 1.0, ct["hd"]: 1.0},
                  EQ, float(fs.lh[t]))
        b.add_row(f"conv_t{t}",
                  {ct["ep"]: dev.eta_e / dev.H, ct["hc"]: -1.0,
                   ct["vh"]: -1.0}, EQ, 0.0)
        bdyn = {ct["bl"]: 1.0, ct["bc"]: -dev.eta_b, ct["bd"]: 1.0 / dev.eta_b}
        hdyn = {ct["hl"]: 1.0, ct["hc"]: -dev.eta_h, ct["hd"]: 1.0 / dev.eta_h}
        if t == 0:
            b.add_row(f"bdyn_t{t}", bdyn, EQ, dev.b_level_init)
            b.add_row(f"hdyn_t{t}", hdyn, EQ, dev.h_level_init)
        else:
            bdyn[cols[t - 1]["bl"]] = -1.0
            hdyn[cols[t - 1]["hl"]] = -1.0
            b.add_row(f"bdyn_t{t}", bdyn, EQ, 0.0)
            b.add_row(f"hdyn_t{t}", hdyn, EQ, 0.0)
    for h in range(vi.time.n_hours):
        b.add_row(f"dasplit_h{h}", {md[t]: 1.0 for t in vi.time.quarters_of(h)},
                  EQ, float(settlement.da_volumes[h]))
    out = solve_lp(b.build())
    if out.status != OPTIMAL:
        raise InfeasibleReplay(
            f"no device schedule delivers the committed loads from the "
            f"settled purchases (LP status {out.status})")
    revenue = sale_revenue(vi, fs)
    ops = {kind: np.array([out.value(f"{kind}_t{t}") for t in range(nq)])
           for kind in _REPLAY_KINDS}
    return ReplayResult(revenue - settlement.cost, revenue, settlement.cost,
                        np.array([out.value(n) for n in md]), ops)


def _iter_curves(book):
    for c in book.da:
        yield c
    for a in sorted(book.id_curves):
        for c in book.id_curves[a]:
            yield c


def curve_table(book):
    """Tabular export: one CSV row per (curve, price step)."""
    lines = ["market,scenario,interval,step,price,volume"]
    for c in _iter_curves(book):
        s = "" if c.scenario is None else str(c.scenario)
        for j, (p, v) in enumerate(c.points):
            lines.append(f"{c.market},{s},{c.interval},{j},{p:.10g},{v:.10g}")
    return "\n".join(lines) + "\n"


def plot_data(book):
    """Plot export: one (price, volume) polyline block per curve, blocks
    separated by blank lines, each headed by a comment naming the curve."""
    blocks = []
    for c in _iter_curves(book):
        tag = (f"# {c.market} interval={c.interval}"
               + ("" if c.scenario is None else f" scenario={c.scenario}"))
        rows = "\n".join(f"{p:.10g} {v:.10g}" for p, v in c.points)
        blocks.append(f"{tag}\n{rows}")
    return "\n\n".join(blocks) + "\n"
