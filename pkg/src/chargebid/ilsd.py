"""Decomposition driver for the two-stage bidding problem.

The master problem keeps the first-stage block plus one cost surrogate per
cut group. Each iteration fixes the master's first-stage point, prices every
day-ahead scenario's recourse LP, and adds supporting planes of the expected
intraday cost below the surrogates. The master bound can only fall as cuts
accumulate, the best recourse evaluation can only rise, and the loop stops
when the two meet within the configured gap.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .branchbound import MILP_INFEASIBLE, MILP_OPTIMAL, solve_milp
from .errors import (GroupUnsolved, MasterInfeasible, NumericalBreakdown,
                     SpNumericalBreakdown)
from .formulation import (Cut, build_master, build_subproblem,
                          extract_first_stage, extract_scenario,
                          refresh_subproblem)
from .instance import SolverConfig, ValidatedInstance
from .lp import OPTIMAL, solve_lp

CONVERGED = "converged"
ITER_LIMIT = "iter_limit"

POLICIES = ("single", "per-da", "per-scenario")

# cap on continuous-relaxation presolve passes; the duplicate-plane check
# and the gap test stop the phase long before this on anything healthy
WARMUP_LIMIT = 400


@dataclass
class _SepPoint:
    """First-stage point used only to price sub-problems and build cuts:
    a convex blend of relaxation solutions, so it carries just the fields
    the pricing step reads."""
    md: np.ndarray
    le: np.ndarray
    lh: np.ndarray
    fs_value: float


def _blend(a, b, lam):
    """Point lam of the way from a to b; the first-stage objective is
    linear, so its value blends the same way."""
    w = 1.0 - lam
    return _SepPoint(w * a.md + lam * b.md, w * a.le + lam * b.le,
                     w * a.lh + lam * b.lh,
                     w * a.fs_value + lam * b.fs_value)


def sp_plan(vi: ValidatedInstance, policy):
    """Sub-problem list and cut grouping for a policy. Returns (specs,
    groups): specs[i] = (da_scenario, children_sel) and groups[k] lists the
    spec indices whose costs fold into surrogate k.

    single aggregates everything into one surrogate; per-da keeps one per
    day-ahead scenario (the sub-problems price all of a scenario's intraday
    children jointly, sharing that scenario's intraday bid curve, so this is
    always exact); per-scenario prices every intraday child separately with
    a private curve copy - the finest disaggregation, exact whenever sibling
    children's cleared volumes fit one monotone curve."""
    n_da = vi.scenarios.n_da
    if policy == "single":
        return [(a, None) for a in range(n_da)], [list(range(n_da))]
    if policy == "per-da":
        return [(a, None) for a in range(n_da)], [[a] for a in range(n_da)]
    if policy == "per-scenario":
        specs = []
        for a in range(n_da):
            for c in range(len(vi.scenarios.da_scenarios[a].id_children)):
                specs.append((a, [c]))
        return specs, [[i] for i in range(len(specs))]
    raise ValueError(f"unknown cut policy {policy!r}")


def _coeff_digest(group, rhs, g_md, g_le, g_lh):
    h = hashlib.sha256()
    h.update(repr(group).encode())
    h.update(f"{rhs:.12e}".encode())
    for label, table in (("md", g_md), ("le", g_le), ("lh", g_lh)):
        for key in sorted(table):
            h.update(f"{label}{key}{table[key]:.12e}".encode())
    return h.hexdigest()


def point_digest(fs):
    """Digest of a first-stage point (DA purchases and served loads)."""
    h = hashlib.sha256()
    for arr in (fs.md, fs.le, fs.lh):
        h.update(np.round(np.asarray(arr, dtype=float), 10).tobytes())
    return h.hexdigest()[:16]


def make_cuts(groups, outcomes, fs, iteration=-1):
    """One supporting plane per group, tight at the generating point.

    The plane's slopes come from the sub-problem duals: the combined balance
    row prices the DA purchase (and, with opposite sign, the served electric
    load), the hydrogen demand row prices the served hydrogen load. The
    constant is the group's cost at fs, so tightness there holds by
    construction."""
    digest = point_digest(fs)
    cuts = []
    for k, members in enumerate(groups):
        for i in members:
            if outcomes[i] is None:
                raise GroupUnsolved(f"group {k}: sub-problem {i} unsolved")
        const = 0.0
        g_md, g_le, g_lh = {}, {}, {}
        for i in members:
            o = outcomes[i]
            const += o.cost
            nq, nch = o.lam.shape
            for t in range(nq):
                for c in range(nch):
                    lam = float(o.lam[t, c])
                    rho = float(o.rho[t, c])
                    if lam != 0.0:
                        g_md[(t, o.a)] = g_md.get((t, o.a), 0.0) + lam
                        g_le[t] = g_le.get(t, 0.0) - lam
                    if rho != 0.0:
                        g_lh[t] = g_lh.get(t, 0.0) - rho
        rhs = const
        for (t, a), g in g_md.items():
            rhs -= g * fs.md[t, a]
        for t, g in g_le.items():
            rhs -= g * fs.le[t]
        for t, g in g_lh.items():
            rhs -= g * fs.lh[t]
        cuts.append(Cut(k, const, rhs, g_md, g_le, g_lh, iteration, digest))
    return cuts


class CutPool:
    """Accumulated cuts with duplicate suppression by coefficient digest."""

    def __init__(self, cuts=()):
        self._cuts = []
        self._seen = set()
        for c in cuts:
            self.add(c)

    def add(self, cut):
        d = _coeff_digest(cut.group, cut.rhs, cut.g_md, cut.g_le, cut.g_lh)
        if d in self._seen:
            return False
        self._seen.add(d)
        self._cuts.append(cut)
        return True

    @property
    def cuts(self):
        return tuple(self._cuts)

    def __len__(self):
        return len(self._cuts)


@dataclass
class LemmaReport:
    """Solution-structure checks on the converged incumbent: storage never
    charges and discharges in the same interval (guaranteed for lossy
    storage), and the relaxed combined balance row is tight."""
    battery_applicable: bool   # battery strictly lossy
    tank_applicable: bool      # tank strictly lossy
    max_battery_overlap: float  # max over (t, scenario) of charge*discharge
    max_tank_overlap: float
    max_balance_slack: float    # combined balance row slack at the incumbent
    tol: float

    @property
    def complementarity_ok(self):
        ok = True
        if self.battery_applicable:
            ok = ok and self.max_battery_overlap <= self.tol
        if self.tank_applicable:
            ok = ok and self.max_tank_overlap <= self.tol
        return ok

    @property
    def balance_ok(self):
        return self.max_balance_slack <= self.tol


def verify_lemmas(vi: ValidatedInstance, fs, outcomes, tol=1e-6):
    """Check complementarity and balance tightness on solved recourse
    outcomes (full-children outcomes, as produced by the single and per-da
    policies)."""
    dev = vi.devices
    max_bb = 0.0
    max_hh = 0.0
    max_slack = 0.0
    for o in outcomes:
        sel = list(o.children) if o.children else slice(None)
        bb = (o.ops["bc"] * o.ops["bd"])[:, sel]
        hh = (o.ops["hc"] * o.ops["hd"])[:, sel]
        max_bb = max(max_bb, float(bb.max()) if bb.size else 0.0)
        max_hh = max(max_hh, float(hh.max()) if hh.size else 0.0)
        surplus = (o.mi + o.ops["bd"] - o.ops["bc"] - o.ops["ep"])[:, sel]
        need = fs.le[:, None] - fs.md[:, o.a][:, None]
        slack = surplus - need
        max_slack = max(max_slack, float(slack.max()) if slack.size else 0.0)
    return LemmaReport(dev.eta_b < 1.0, dev.eta_h < 1.0,
                       max_bb, max_hh, max_slack, tol)


@dataclass
class IlsdReport:
    status: str          # converged | iter_limit
    iterations: list     # records {iter, UB, LB, gap, cuts, ms_master, ms_sp}
    ub: float
    lb: float
    gap: float
    first_stage: object
    scenarios: list
    cuts: tuple
    lemmas: LemmaReport
    master_point: dict   # final master solution by column name (warm restart)
    warmup: list = field(default_factory=list)  # relaxation presolve log


def _alpha_hint(pool, n_groups, fs):
    """Surrogate values making a first-stage point feasible for every cut."""
    best = [0.0] * n_groups
    for cut in pool.cuts:
        v = cut.value_at(fs.md, fs.le, fs.lh)
        if v > best[cut.group]:
            best[cut.group] = v
    return best


def run_ilsd(vi: ValidatedInstance, cfg: SolverConfig = None,
             initial_cuts=(), hint=None, on_iteration=None):
    """Iterate master and sub-problems to the configured gap.

    initial_cuts and hint (a column-name dict, e.g. a previous report's
    master_point) warm-start the loop; a restart from a converged state
    stops after one iteration. on_iteration receives each log record as it
    is produced."""
    cfg = cfg if cfg is not None else vi.config
    if cfg.cut_policy not in POLICIES:
        raise ValueError(f"unknown cut policy {cfg.cut_policy!r}")
    specs, groups = sp_plan(vi, cfg.cut_policy)
    n_groups = len(groups)
    pool = CutPool(initial_cuts)
    basis_cache = {}
    # masters differ only by accumulated cut rows, so branching statistics
    # learned in one master transfer to the next
    master_pseudo = {}

    ub = float("inf")
    best_lb = float("-inf")
    best_fs = None
    best_outcomes = None
    master_point = dict(hint) if hint else None
    records = []
    status = ITER_LIMIT

    sp_cache = {}

    def solve_spec(idx, fs, use_warm=True):
        a, csel = specs[idx]
        cached = sp_cache.get(idx)
        if cached is None:
            splp, smeta = build_subproblem(vi, a, fs.md[:, a], fs.le, fs.lh,
                                           children_sel=csel)
            sp_cache[idx] = (splp, smeta)
        else:
            splp = refresh_subproblem(cached[0], cached[1], fs.md[:, a],
                                      fs.le, fs.lh)
            smeta = cached[1]
        out = solve_lp(splp, warm=basis_cache.get(idx) if use_warm else None,
                       feas_tol=cfg.lp_feas_tol, opt_tol=cfg.lp_opt_tol)
        if out.status != OPTIMAL:
            raise SpNumericalBreakdown(a, out.status)
        basis_cache[idx] = out.basis
        return extract_scenario(vi, smeta, out)

    def solve_all(fs, use_warm=True):
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
                return list(ex.map(lambda i: solve_spec(i, fs, use_warm),
                                   range(len(specs))))
        return [solve_spec(i, fs, use_warm) for i in range(len(specs))]

    # Cuts are planes under the recourse cost at any first-stage point,
    # integral or not, so the pool is first saturated against the master's
    # continuous relaxation before any integer master solve is paid for.
    # Pricing at the relaxation's argmax alone tails off badly, so the
    # separation point is pulled halfway toward the best point evaluated so
    # far; a pass that only rediscovers known planes falls back to the pure
    # argmax, and once that too saturates the phase ends. Skipped when a
    # pool is supplied so a restart from a converged state replays that
    # master unchanged.
    warmup = []
    if not pool.cuts:
        center = None
        center_lb = float("-inf")
        at_argmax = True
        for wk in range(1, WARMUP_LIMIT + 1):
            mip, meta = build_master(vi, pool.cuts, n_groups)
            lout = solve_lp(mip.lp, feas_tol=cfg.lp_feas_tol,
                            opt_tol=cfg.lp_opt_tol)
            if lout.status != OPTIMAL:
                break
            out_pt = extract_first_stage(vi, meta, lout, n_groups)
            if center is None or at_argmax:
                sep = out_pt
            else:
                sep = _blend(center, out_pt, 0.5)
            # relaxation points jump between passes, so stored bases mislead
            outcomes = solve_all(sep, use_warm=False)
            relax_lb = sep.fs_value - sum(o.cost for o in outcomes)
            if relax_lb > center_lb:
                center_lb = relax_lb
                center = sep
            added = 0
            for cut in make_cuts(groups, outcomes, sep, iteration=0):
                if pool.add(cut):
                    added += 1
            rgap = (lout.objective - center_lb) / max(abs(lout.objective),
                                                      1e-9)
            warmup.append({"iter": wk, "relax_UB": lout.objective,
                           "relax_LB": center_lb, "gap": rgap,
                           "cuts": added})
            # the integer phase has its own cut loop and closes the last
            # stretch quickly, so the relaxation tail is not worth grinding
            # below the target gap itself
            if rgap <= cfg.eps_gap:
                break
            if added == 0:
                if at_argmax:
                    break
                at_argmax = True
            else:
                at_argmax = False

    for it in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        mip, meta = build_master(vi, pool.cuts, n_groups)
        mhint = None
        if cfg.warm_start and master_point is not None:
            mhint = dict(master_point)
        # master pruning comes from bound decay, not fixings, so root
        # probing is skipped
        mout = solve_milp(mip, hint=mhint, rel_gap=cfg.milp_gap,
                          feas_tol=cfg.lp_feas_tol, opt_tol=cfg.lp_opt_tol,
                          pseudo=master_pseudo, probe=False)
        if mout.status == MILP_INFEASIBLE:
            raise MasterInfeasible(
                "master has no feasible bid schedule; instance inconsistent")
        if mout.status != MILP_OPTIMAL:
            raise NumericalBreakdown(f"master ended with {mout.status}")
        ms_master = (time.perf_counter() - t0) * 1000.0
        fs = extract_first_stage(vi, meta, mout, n_groups)
        # the proven master bound majorizes the true optimum; cuts only
        # accumulate, so the minimum over iterations is monotone
        ub = min(ub, mout.bound)

        t1 = time.perf_counter()
        outcomes = solve_all(fs)
        ms_sp = (time.perf_counter() - t1) * 1000.0

        lb_iter = fs.fs_value - sum(o.cost for o in outcomes)
        if lb_iter > best_lb:
            best_lb = lb_iter
            best_fs = fs
            best_outcomes = outcomes

        gap = (ub - best_lb) / max(abs(ub), 1e-9)
        done = gap <= cfg.eps_gap
        added = 0
        if not done:
            # on convergence no cuts are added, so the pool is exactly the
            # one that produced the final master and a restart from it
            # reproduces that master and stops after a single iteration
            for cut in make_cuts(groups, outcomes, fs, iteration=it):
                if pool.add(cut):
                    added += 1

        if cfg.warm_start:
            master_point = {n: float(mout.x[j])
                            for j, n in enumerate(mip.lp.col_names)}
            for k, v in enumerate(_alpha_hint(pool, n_groups, fs)):
                master_point[f"alpha_k{k}"] = v

        rec = {"iter": it, "UB": ub, "LB": best_lb, "gap": gap,
               "cuts": added, "ms_master": ms_master, "ms_sp": ms_sp,
               "nodes": mout.nodes}
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec)
        if done:
            status = CONVERGED
            break

    lemmas = verify_lemmas(vi, best_fs, best_outcomes, tol=1e-6)
    gap = (ub - best_lb) / max(abs(ub), 1e-9)
    return IlsdReport(status, records, ub, best_lb, gap, best_fs,
                      best_outcomes, pool.cuts, lemmas,
                      master_point if master_point is not None else {},
                      warmup)
