"""Seeded synthetic instances for tests, demos and benchmarks.

Three sizes: `toy_instance` (8 quarters, 2x2 scenarios, small devices) for
oracle comparisons, `midsize_instance` (24 hours, 4x4) for cut-policy
comparisons, and `smoke_instance` (24 hours, 10x10) for the timed end-to-end
run. `flat_instance` and `zero_demand_instance` are degenerate cases with
closed-form optima used by the oracle tests.

All prices are strictly positive and stay inside the bid grid; hydrogen
demand stays below what the electrolyzer plus tank can deliver.
"""

from __future__ import annotations

import numpy as np

from .instance import (
    BidGrid,
    DaScenario,
    DeviceParams,
    IdChild,
    Instance,
    LoadPriceModel,
    ScenarioTree,
    Segment,
    SolverConfig,
    TimeGrid,
)


def station_devices():
    """Full-size station: battery 60 kWh / 15 kW, tank 20 kg / 5 kg/h,
    electrolyzer 1 MW, hydrogen at 33.33 kWh/kg."""
    return DeviceParams(eta_b=0.85, eta_h=0.9, eta_e=0.8, H=33.33)


def small_devices():
    """Scaled-down station for toy instances."""
    return DeviceParams(eta_b=0.85, eta_h=0.9, eta_e=0.8, H=33.33,
                        b_level_max=10.0, b_chg_max=8.0, b_dis_max=8.0,
                        h_level_max=4.0, h_chg_max=2.0, h_dis_max=2.0,
                        e_max=60.0)


def _probs(rng, k):
    u = rng.uniform(0.5, 1.5, size=k)
    return u / u.sum()


def _id_children(rng, k, base_q, spread, lo, hi):
    probs = _probs(rng, k)
    kids = []
    for p in probs:
        prices = np.clip(base_q + rng.normal(0.0, spread, size=len(base_q)),
                         lo, hi)
        kids.append(IdChild(float(p), prices))
    return kids


def _tree(rng, n_da, n_id, n_hours, qph, da_lo, da_hi, spread, clip_lo, clip_hi):
    probs = _probs(rng, n_da)
    scens = []
    for p in probs:
        da = rng.uniform(da_lo, da_hi, size=n_hours)
        base_q = np.repeat(da, qph)
        scens.append(DaScenario(float(p), da,
                                _id_children(rng, n_id, base_q, spread,
                                             clip_lo, clip_hi)))
    return ScenarioTree(scens)


def _elec_segments(rng, nq, peak_lo, peak_hi, p_lo, p_hi, n_seg):
    """Per-quarter electric demand curves: n_seg contiguous price windows
    with non-increasing affine load, peak load following a daily shape."""
    shape = 1.0 + 0.3 * np.sin(2.0 * np.pi * np.arange(nq) / max(nq, 1))
    table = []
    if n_seg == 2:
        mid = rng.uniform(p_lo + 0.3 * (p_hi - p_lo), p_lo + 0.7 * (p_hi - p_lo))
        edges = [p_lo, float(mid), p_hi]
    else:
        edges = [p_lo, p_hi]
    for t in range(nq):
        peak = rng.uniform(peak_lo, peak_hi) * shape[t]
        segs = []
        level = peak
        for m in range(n_seg):
            lo, hi = edges[m], edges[m + 1]
            a = -rng.uniform(0.2, 0.8) * level / (hi - lo)
            segs.append(Segment(lo, hi, float(a), float(level - a * lo)))
            level = float(a * hi + (level - a * lo)) * rng.uniform(0.6, 1.0)
        table.append(segs)
    return table


def _hyd_segments(rng, nq, peak_lo, peak_hi, p_lo, p_hi):
    shape = 1.0 + 0.2 * np.cos(2.0 * np.pi * np.arange(nq) / max(nq, 1))
    table = []
    for t in range(nq):
        peak = rng.uniform(peak_lo, peak_hi) * shape[t]
        a = -rng.uniform(0.2, 0.8) * peak / (p_hi - p_lo)
        table.append([Segment(p_lo, p_hi, float(a), float(peak - a * p_lo))])
    return table


def toy_instance(seed=0):
    """8 quarters, 2 DA x 2 ID scenarios, 3-step curves, two electric
    segments. Small enough for the extensive-form oracle."""
    rng = np.random.default_rng(seed)
    time = TimeGrid(n_hours=2)
    tree = _tree(rng, 2, 2, time.n_hours, time.quarters_per_hour,
                 da_lo=0.06, da_hi=0.28, spread=0.04,
                 clip_lo=0.02, clip_hi=0.38)
    nq = time.n_quarters
    load = LoadPriceModel(
        electricity=_elec_segments(rng, nq, 15.0, 40.0, 0.05, 0.45, n_seg=2),
        hydrogen=_hyd_segments(rng, nq, 0.4, 1.0, 1.5, 4.0),
    )
    return Instance(
        devices=small_devices(), time=time, scenarios=tree, load_price=load,
        bid_grid=BidGrid(np.array([0.01, 0.20, 0.40])),
        config=SolverConfig(sos2_points=3, seed=seed),
    )


def midsize_instance(seed=0):
    """24 hours, 4 DA x 4 ID scenarios, single-segment curves, coarse
    linearization. Used for the cut-policy comparison."""
    rng = np.random.default_rng(seed)
    time = TimeGrid(n_hours=24)
    tree = _tree(rng, 4, 4, time.n_hours, time.quarters_per_hour,
                 da_lo=0.05, da_hi=0.30, spread=0.03,
                 clip_lo=0.02, clip_hi=0.38)
    nq = time.n_quarters
    load = LoadPriceModel(
        electricity=_elec_segments(rng, nq, 30.0, 80.0, 0.05, 0.45, n_seg=1),
        hydrogen=_hyd_segments(rng, nq, 2.0, 6.5, 1.5, 4.0),
    )
    return Instance(
        devices=station_devices(), time=time, scenarios=tree, load_price=load,
        bid_grid=BidGrid(np.array([0.01, 0.20, 0.40])),
        config=SolverConfig(sos2_points=2, seed=seed),
    )


def smoke_instance(seed=0):
    """96 quarters, 10 DA x 10 ID scenarios, 5-step curves. The timed
    end-to-end benchmark size."""
    rng = np.random.default_rng(seed)
    time = TimeGrid(n_hours=24)
    tree = _tree(rng, 10, 10, time.n_hours, time.quarters_per_hour,
                 da_lo=0.05, da_hi=0.30, spread=0.03,
                 clip_lo=0.02, clip_hi=0.38)
    nq = time.n_quarters
    load = LoadPriceModel(
        electricity=_elec_segments(rng, nq, 30.0, 80.0, 0.05, 0.45, n_seg=1),
        hydrogen=_hyd_segments(rng, nq, 2.0, 6.5, 1.5, 4.0),
    )
    return Instance(
        devices=station_devices(), time=time, scenarios=tree, load_price=load,
        bid_grid=BidGrid(np.array([0.01, 0.10, 0.20, 0.30, 0.40])),
        config=SolverConfig(sos2_points=2, seed=seed, eps_gap=1e-3),
    )


def flat_instance(seed=0, price=0.12):
    """One hour, one scenario, every market price equal. The optimum is a
    per-quarter scan over the demand segments, which makes it a closed-form
    oracle case."""
    rng = np.random.default_rng(seed)
    time = TimeGrid(n_hours=1)
    da = np.array([price])
    kid = IdChild(1.0, np.full(time.n_quarters, price))
    tree = ScenarioTree([DaScenario(1.0, da, [kid])])
    nq = time.n_quarters
    load = LoadPriceModel(
        electricity=_elec_segments(rng, nq, 15.0, 40.0, 0.05, 0.45, n_seg=2),
        hydrogen=_hyd_segments(rng, nq, 0.4, 1.0, 1.5, 4.0),
    )
    return Instance(
        devices=small_devices(), time=time, scenarios=tree, load_price=load,
        bid_grid=BidGrid(np.array([0.01, 0.20, 0.40])),
        config=SolverConfig(sos2_points=7, seed=seed),
    )


def zero_demand_instance(seed=0):
    """No demand at any price: the optimum is zero (up to linearization
    slack) and the decomposition should converge immediately."""
    rng = np.random.default_rng(seed)
    time = TimeGrid(n_hours=2)
    tree = _tree(rng, 2, 2, time.n_hours, time.quarters_per_hour,
                 da_lo=0.06, da_hi=0.28, spread=0.04,
                 clip_lo=0.02, clip_hi=0.38)
    nq = time.n_quarters
    load = LoadPriceModel(
        electricity=[[Segment(0.05, 0.45, 0.0, 0.0)] for _ in range(nq)],
        hydrogen=[[Segment(1.5, 4.0, 0.0, 0.0)] for _ in range(nq)],
    )
    return Instance(
        devices=small_devices(), time=time, scenarios=tree, load_price=load,
        bid_grid=BidGrid(np.array([0.01, 0.20, 0.40])),
        config=SolverConfig(sos2_points=3, seed=seed),
    )
