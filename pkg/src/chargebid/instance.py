"""Problem data model: devices, time grid, scenario tree, load-price
segments, bid grid, solver configuration, and validation.

Unit conventions owned here:
  - electric prices internally EUR/kWh (EUR_per_MWh inputs divided by 1000)
  - hydrogen prices EUR/kg
  - device rates stay in their natural per-hour units (kW, kg/h); the
    per-quarter energy caps used by the model builders come from the
    `*_cap_q` helpers, which multiply by the interval length in hours
  - load model slopes/intercepts are in kW (electric) and kg/h (hydrogen);
    builders convert to per-interval energy the same way
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ViolatedInvariant

ELECTRICITY = "electricity"
HYDROGEN = "hydrogen"
COMMODITIES = (ELECTRICITY, HYDROGEN)

PROB_TOL = 1e-9


@dataclass
class DeviceParams:
    eta_b: float  # battery single-leg efficiency
    eta_h: float  # tank single-leg efficiency
    eta_e: float  # electrolyzer efficiency
    H: float      # energy content of hydrogen, kWh per kg
    b_level_min: float = 0.0   # kWh
    b_level_max: float = 60.0
    b_chg_min: float = 0.0     # kW
    b_chg_max: float = 15.0
    b_dis_min: float = 0.0
    b_dis_max: float = 15.0
    h_level_min: float = 0.0   # kg
    h_level_max: float = 20.0
    h_chg_min: float = 0.0     # kg/h
    h_chg_max: float = 5.0
    h_dis_min: float = 0.0
    h_dis_max: float = 5.0
    e_min: float = 0.0         # kW
    e_max: float = 1000.0
    b_level_init: float = 0.0
    h_level_init: float = 0.0


@dataclass
class TimeGrid:
    n_hours: int
    quarters_per_hour: int = 4

    @property
    def n_quarters(self):
        return self.n_hours * self.quarters_per_hour

    @property
    def dt_hours(self):
        return 1.0 / self.quarters_per_hour

    def hour_of(self, q):
        return q // self.quarters_per_hour

    def quarters_of(self, hour):
        q0 = hour * self.quarters_per_hour
        return range(q0, q0 + self.quarters_per_hour)


@dataclass
class IdChild:
    prob: float
    id_price: np.ndarray  # EUR/kWh per quarter


@dataclass
class DaScenario:
    prob: float
    da_price: np.ndarray  # EUR/kWh per hour
    id_children: list


@dataclass
class ScenarioTree:
    da_scenarios: list

    @property
    def n_da(self):
        return len(self.da_scenarios)

    def joint(self):
        """Yield (i_da, i_id, joint probability)."""
        for a, da in enumerate(self.da_scenarios):
            for b, ch in enumerate(da.id_children):
                yield a, b, da.prob * ch.prob


@dataclass
class Segment:
    p_lo: float
    p_hi: float
    A: float  # load per unit price, <= 0
    B: float  # load at price 0


@dataclass
class LoadPriceModel:
    """Per quarter and commodity: contiguous price segments with an affine
    load response on each."""
    electricity: list  # [t] -> list of Segment
    hydrogen: list

    def segments(self, commodity, t):
        table = self.electricity if commodity == ELECTRICITY else self.hydrogen
        return table[t]

    def price_range(self, commodity, t):
        segs = self.segments(commodity, t)
        return segs[0].p_lo, segs[-1].p_hi

    def max_load(self, commodity, t):
        # A <= 0, so each segment peaks at its left price bound
        segs = self.segments(commodity, t)
        return max(s.A * s.p_lo + s.B for s in segs)


@dataclass
class BidGrid:
    y: np.ndarray  # strictly increasing price steps, EUR/kWh

    @property
    def J(self):
        return len(self.y)


CUT_POLICIES = ("single", "per-da", "per-scenario")


@dataclass
class SolverConfig:
    eps_gap: float = 1e-4
    max_iter: int = 200
    cut_policy: str = "per-da"
    warm_start: bool = True
    sos2_points: int = 5
    lp_feas_tol: float = 1e-7
    lp_opt_tol: float = 1e-9
    seed: int = 0
    threads: int = 1
    # master termination gap; an order below eps_gap so the master's own
    # slack stays a small fraction of the reported bound spread
    milp_gap: float = 1e-5


@dataclass
class Instance:
    devices: DeviceParams
    time: TimeGrid
    scenarios: ScenarioTree
    load_price: LoadPriceModel
    bid_grid: BidGrid
    config: SolverConfig = field(default_factory=SolverConfig)
    schema_version: int = 1
    # unit of every electric price field (scenario prices, bid grid, electric
    # segment bounds); hydrogen prices are always EUR/kg
    price_unit: str = "EUR_per_kWh"


@dataclass
class ValidatedInstance:
    """Instance with all invariants checked plus derived lookup tables."""
    devices: DeviceParams
    time: TimeGrid
    scenarios: ScenarioTree
    load_price: LoadPriceModel
    bid_grid: BidGrid
    config: SolverConfig
    schema_version: int
    joint_probs: list          # [(i_da, i_id, pi)]
    hour_of_quarter: np.ndarray
    normalized: bool = True

    # per-quarter energy caps (interval length folded in)
    @property
    def dt(self):
        return self.time.dt_hours

    def b_chg_cap_q(self):
        return self.devices.b_chg_max * self.dt

    def b_dis_cap_q(self):
        return self.devices.b_dis_max * self.dt

    def h_chg_cap_q(self):
        return self.devices.h_chg_max * self.dt

    def h_dis_cap_q(self):
        return self.devices.h_dis_max * self.dt

    def e_cap_q(self):
        return self.devices.e_max * self.dt

    def max_load_q(self, commodity, t):
        return self.load_price.max_load(commodity, t) * self.dt


def _check(cond, name, detail):
    if not cond:
        raise ViolatedInvariant(name, detail)


def validate_instance(raw) -> ValidatedInstance:
    """Check every structural invariant, normalize price units, and derive
    the joint-probability and quarter->hour tables.

    Idempotent: validating a ValidatedInstance (or an Instance already
    normalized) changes no value.
    """
    if isinstance(raw, ValidatedInstance):
        return raw
    if raw.price_unit == "EUR_per_MWh":
        # scale electric prices to EUR/kWh; load slopes scale inversely so
        # the predicted load at a given physical price is unchanged
        tree = ScenarioTree([
            DaScenario(
                prob=da.prob,
                da_price=np.asarray(da.da_price, dtype=float) / 1000.0,
                id_children=[
                    IdChild(ch.prob, np.asarray(ch.id_price, dtype=float) / 1000.0)
                    for ch in da.id_children
                ],
            )
            for da in raw.scenarios.da_scenarios
        ])
        elec = [[Segment(s.p_lo / 1000.0, s.p_hi / 1000.0, s.A * 1000.0, s.B)
                 for s in segs] for segs in raw.load_price.electricity]
        raw = replace(
            raw,
            scenarios=tree,
            load_price=LoadPriceModel(electricity=elec,
                                      hydrogen=raw.load_price.hydrogen),
            bid_grid=BidGrid(np.asarray(raw.bid_grid.y, dtype=float) / 1000.0),
            price_unit="EUR_per_kWh",
        )
    elif raw.price_unit != "EUR_per_kWh":
        raise ViolatedInvariant("price_unit",
                                f"unrecognized unit {raw.price_unit!r}")
    d = raw.devices
    tg = raw.time
    _check(0.0 < d.eta_b <= 1.0, "eta_b", f"eta_b={d.eta_b} outside (0,1]")
    _check(0.0 < d.eta_h <= 1.0, "eta_h", f"eta_h={d.eta_h} outside (0,1]")
    _check(0.0 < d.eta_e <= 1.0, "eta_e", f"eta_e={d.eta_e} outside (0,1]")
    _check(d.H > 0.0, "H", f"H={d.H} must be positive")
    for lo, hi, name in [
        (d.b_level_min, d.b_level_max, "b_level"),
        (d.b_chg_min, d.b_chg_max, "b_chg"),
        (d.b_dis_min, d.b_dis_max, "b_dis"),
        (d.h_level_min, d.h_level_max, "h_level"),
        (d.h_chg_min, d.h_chg_max, "h_chg"),
        (d.h_dis_min, d.h_dis_max, "h_dis"),
        (d.e_min, d.e_max, "e"),
    ]:
        _check(lo <= hi, name, f"{name}: min {lo} > max {hi}")
    _check(d.b_level_min <= d.b_level_init <= d.b_level_max, "b_level_init",
           f"initial battery level {d.b_level_init} outside bounds")
    _check(d.h_level_min <= d.h_level_init <= d.h_level_max, "h_level_init",
           f"initial tank level {d.h_level_init} outside bounds")
    # zero flow minima keep the relaxed sub-problem exact
    for v, name in [(d.b_chg_min, "b_chg_min"), (d.b_dis_min, "b_dis_min"),
                    (d.h_chg_min, "h_chg_min"), (d.h_dis_min, "h_dis_min"),
                    (d.e_min, "e_min")]:
        _check(v == 0.0, name, f"{name}={v}; flow minima must be 0")

    _check(tg.n_hours >= 1, "n_hours", f"n_hours={tg.n_hours}")
    _check(tg.quarters_per_hour >= 1, "quarters_per_hour",
           f"quarters_per_hour={tg.quarters_per_hour}")
    nq = tg.n_quarters

    tree = raw.scenarios
    _check(len(tree.da_scenarios) >= 1, "da_count", "no DA scenarios")
    psum = 0.0
    for a, da in enumerate(tree.da_scenarios):
        _check(da.prob >= 0.0, "prob_nonneg", f"DA scenario {a} prob {da.prob}")
        psum += da.prob
        _check(len(da.da_price) == tg.n_hours, "da_price_len",
               f"DA scenario {a}: {len(da.da_price)} prices, need {tg.n_hours}")
        _check(np.isfinite(da.da_price).all(), "price_finite",
               f"DA scenario {a} has non-finite price")
        _check(len(da.id_children) >= 1, "id_count",
               f"DA scenario {a} has no ID children")
        csum = 0.0
        for b, ch in enumerate(da.id_children):
            _check(ch.prob >= 0.0, "prob_nonneg",
                   f"ID child {a}/{b} prob {ch.prob}")
            csum += ch.prob
            _check(len(ch.id_price) == nq, "id_price_len",
                   f"ID child {a}/{b}: {len(ch.id_price)} prices, need {nq}")
            _check(np.isfinite(ch.id_price).all(), "price_finite",
                   f"ID child {a}/{b} has non-finite price")
        _check(abs(csum - 1.0) <= PROB_TOL, "prob_sum",
               f"ID probs of DA scenario {a} sum to {csum}")
    _check(abs(psum - 1.0) <= PROB_TOL, "prob_sum",
           f"DA probs sum to {psum}")

    grid = raw.bid_grid
    y = np.asarray(grid.y, dtype=float)
    _check(len(y) >= 2, "bid_grid_size", f"J={len(y)} < 2")
    _check((np.diff(y) > 0).all(), "bid_grid_increasing",
           "bid price steps must be strictly increasing")
    for a, da in enumerate(tree.da_scenarios):
        for tprime, xi in enumerate(da.da_price):
            _check(y[0] <= xi <= y[-1], "bid_grid_span",
                   f"DA price {xi} (scenario {a}, hour {tprime}) outside grid")
        for b, ch in enumerate(da.id_children):
            for t, xi in enumerate(ch.id_price):
                _check(y[0] <= xi <= y[-1], "bid_grid_span",
                       f"ID price {xi} (scenario {a}/{b}, quarter {t}) outside grid")
    for a, da in enumerate(tree.da_scenarios):
        _check((np.asarray(da.da_price) >= 0).all(), "price_nonneg",
               f"DA scenario {a} has a negative price")
        for b, ch in enumerate(da.id_children):
            _check((np.asarray(ch.id_price) >= 0).all(), "price_nonneg",
                   f"ID child {a}/{b} has a negative price")

    lp = raw.load_price
    _check(len(lp.electricity) == nq, "load_price_len",
           f"electricity model covers {len(lp.electricity)} quarters, need {nq}")
    _check(len(lp.hydrogen) == nq, "load_price_len",
           f"hydrogen model covers {len(lp.hydrogen)} quarters, need {nq}")
    for cname, table in ((ELECTRICITY, lp.electricity), (HYDROGEN, lp.hydrogen)):
        for t, segs in enumerate(table):
            _check(len(segs) >= 1, "segments", f"{cname} quarter {t}: no segments")
            for m, s in enumerate(segs):
                _check(s.p_hi > s.p_lo, "segment_range",
                       f"{cname} t={t} m={m}: p_hi {s.p_hi} <= p_lo {s.p_lo}")
                _check(s.A <= 0.0, "segment_slope",
                       f"{cname} t={t} m={m}: A={s.A} > 0")
                _check(s.A * s.p_hi + s.B >= -1e-9, "segment_load_nonneg",
                       f"{cname} t={t} m={m}: implied load negative at p_hi")
                if m + 1 < len(segs):
                    _check(abs(s.p_hi - segs[m + 1].p_lo) <= 1e-9,
                           "segment_contiguous",
                           f"{cname} t={t}: gap between segments {m} and {m+1}")

    cfg = raw.config
    _check(cfg.eps_gap > 0.0, "eps_gap", f"eps_gap={cfg.eps_gap}")
    _check(cfg.max_iter >= 1, "max_iter", f"max_iter={cfg.max_iter}")
    _check(cfg.sos2_points >= 2, "sos2_points", f"M_pts={cfg.sos2_points}")
    _check(cfg.cut_policy in CUT_POLICIES, "cut_policy",
           f"cut_policy={cfg.cut_policy!r}")
    _check(cfg.threads >= 1, "threads", f"threads={cfg.threads}")

    # every quarter's peak hydrogen demand must be coverable by direct
    # electrolyzer output alone: the tank starts at its initial level and
    # cannot be counted on, and recourse problems must never be infeasible
    # for any in-bounds first-stage choice
    dt = tg.dt_hours
    h_supply_cap = d.eta_e * (d.e_max * dt) / d.H
    for t in range(nq):
        lh_max = lp.max_load(HYDROGEN, t) * dt
        _check(lh_max <= h_supply_cap + 1e-9, "h_deliverability",
               f"quarter {t}: peak hydrogen load {lh_max:.6g} kg exceeds "
               f"direct production capability {h_supply_cap:.6g} kg")

    joint = [(a, b, p) for a, b, p in tree.joint()]
    jsum = sum(p for _, _, p in joint)
    _check(abs(jsum - 1.0) <= 1e-9, "joint_prob_sum", f"joint probs sum to {jsum}")
    hour_of = np.array([tg.hour_of(q) for q in range(nq)], dtype=int)

    return ValidatedInstance(
        devices=d, time=tg, scenarios=tree, load_price=lp,
        bid_grid=BidGrid(y=y), config=cfg, schema_version=raw.schema_version,
        joint_probs=joint, hour_of_quarter=hour_of,
    )
