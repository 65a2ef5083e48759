"""Branch-and-bound MILP solver over the LP core.

Supports binary variables and SOS2 sets (at most two nonzero members, and
those adjacent). Node selection is best-bound with insertion-order tie
break, so runs are deterministic for a fixed instance and configuration.
Branching: binary dichotomy first, then SOS2 split at the weighted
interpolation centroid. Children reuse the parent's basis as a warm start.
Incumbents are produced by re-solving the node LP with all discrete
entities pinned, so binaries are exactly 0/1 and SOS2 patterns hold exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericalBreakdown, UnboundedProblem
from .lp import INF, INFEASIBLE, OPTIMAL, UNBOUNDED, LpOutcome, solve_lp

MILP_OPTIMAL = "optimal"
MILP_INFEASIBLE = "infeasible"
MILP_NODE_LIMIT = "node_limit"
MILP_UNBOUNDED = "unbounded"

_RELIABLE = 2  # strong evaluations per entity before its rate is trusted


@dataclass
class Sos2Set:
    name: str
    members: list      # ordered column indices
    grid: list = None  # optional member abscissae (interpolation breakpoints)


@dataclass
class MixedIntegerProgram:
    lp: object
    binaries: list = field(default_factory=list)
    sos2: list = field(default_factory=list)


@dataclass
class MilpOutcome:
    status: str
    objective: float
    bound: float
    x: Optional[np.ndarray]
    nodes: int
    lp_outcome: Optional[LpOutcome]
    col_index: Optional[dict] = None

    def value(self, name):
        idx = self.col_index if self.col_index is not None \
            else self.lp_outcome.lp.col_index
        return float(self.x[idx[name]])


def _most_fractional_binary(x, binaries, tol):
    worst, worst_j = tol, -1
    for j in binaries:
        f = min(x[j], 1.0 - x[j])
        if f > worst + 1e-15:
            worst, worst_j = f, j
    return worst_j


def _sos2_violation(x, s, tol):
    """Return (viol_norm, score, centroid). viol_norm is the mass fraction
    outside the best adjacent pair; 0 when the set is satisfied. score ranks
    branching candidates: with member abscissae it is the spread of the
    weights beyond what the bracketing adjacent pair can represent (the
    amount of convex-interpolation slack the relaxation is exploiting),
    otherwise just viol_norm."""
    vals = np.maximum(x[np.asarray(s.members)], 0.0)
    total = float(vals.sum())
    if total <= tol or len(vals) <= 2:
        return 0.0, 0.0, 0.0
    pair = vals[:-1] + vals[1:]
    viol = 1.0 - float(pair.max()) / total
    centroid = float(np.dot(np.arange(len(vals)), vals) / total)
    score = viol
    if s.grid is not None and viol > 0.0:
        f = np.asarray(s.grid, dtype=float)
        mean = float(vals @ f) / total
        m2 = float(vals @ (f * f)) / total
        k = min(max(int(np.searchsorted(f, mean, side="right")) - 1, 0),
                len(f) - 2)
        w = (mean - f[k]) / (f[k + 1] - f[k])
        chord = (1.0 - w) * f[k] * f[k] + w * f[k + 1] * f[k + 1]
        score = max(m2 - chord, 0.0) * total
    return viol, score, centroid


def _check_hint(mip, hint, int_tol, feas_tol):
    lp = mip.lp
    if isinstance(hint, dict):
        x = np.zeros(lp.n_cols)
        for name, v in hint.items():
            x[lp.col_index[name]] = v
    else:
        x = np.asarray(hint, dtype=float)
        if x.shape != (lp.n_cols,):
            return None
    if (x < lp.col_lower - feas_tol).any() or (x > lp.col_upper + feas_tol).any():
        return None
    ax = lp.matrix @ x
    scale = 1.0 + np.abs(lp.row_rhs)
    for i, rel in enumerate(lp.row_relations):
        r = ax[i] - lp.row_rhs[i]
        if rel == "<=" and r > feas_tol * scale[i]:
            return None
        if rel == ">=" and r < -feas_tol * scale[i]:
            return None
        if rel == "==" and abs(r) > feas_tol * scale[i]:
            return None
    for j in mip.binaries:
        if min(x[j], 1.0 - x[j]) > int_tol:
            return None
    for s in mip.sos2:
        viol, _, _ = _sos2_violation(x, s, int_tol)
        if viol > int_tol:
            return None
    return x


def _pin_set(s, x):
    """Overrides keeping only the best adjacent pair of one SOS2 set."""
    vals = np.maximum(x[np.asarray(s.members)], 0.0)
    total = float(vals.sum())
    if s.grid is not None and total > 0.0:
        # keep the pair bracketing the weighted mean abscissa
        f = np.asarray(s.grid, dtype=float)
        mean = float(vals @ f) / total
        bp = min(max(int(np.searchsorted(f, mean, side="right")) - 1, 0),
                 len(f) - 2)
    else:
        pair = vals[:-1] + vals[1:]
        bp = int(np.argmax(pair))
    return {j: (0.0, 0.0) for pos, j in enumerate(s.members)
            if pos not in (bp, bp + 1)}


def _pin_discrete(mip, x, overrides):
    """Overrides pinning every binary and SOS2 set at the candidate point."""
    fixed = dict(overrides)
    for j in mip.binaries:
        v = 1.0 if x[j] >= 0.5 else 0.0
        fixed[j] = (v, v)
    for s in mip.sos2:
        if len(s.members) <= 2:
            continue
        fixed.update(_pin_set(s, x))
    return fixed


def _undecided(mip, x, overrides):
    """Unfixed entities with a confidence in [0, 1]: how clearly the node
    solution already commits to one pin. Sorted most-confident first."""
    out = []
    for j in mip.binaries:
        o = overrides.get(j)
        if o is not None and o[0] == o[1]:
            continue
        out.append((2.0 * abs(float(x[j]) - 0.5), "bin", j))
    for si, s in enumerate(mip.sos2):
        if len(s.members) <= 2:
            continue
        free = [j for j in s.members
                if overrides.get(j, (0.0, 1.0))[0]
                != overrides.get(j, (0.0, 1.0))[1]]
        if len(free) <= 2:
            continue
        vals = np.maximum(x[np.asarray(s.members)], 0.0)
        total = float(vals.sum())
        pair = float(np.max(vals[:-1] + vals[1:])) if total > 0.0 else 0.0
        conf = pair / total if total > 0.0 else 1.0
        out.append((conf, "sos", si))
    out.sort(key=lambda e: -e[0])
    return out


def _fallback_target(mip, overrides):
    """An unfixed discrete entity, for the rare case where a within-tolerance
    node cannot be pinned exactly. Returns ('bin', j), ('sos', si) or None."""
    for j in mip.binaries:
        o = overrides.get(j)
        if o is None or o[0] != o[1]:
            return ("bin", j)
    for si, s in enumerate(mip.sos2):
        free = [pos for pos, j in enumerate(s.members)
                if overrides.get(j, (0.0, 1.0))[0] != overrides.get(j, (0.0, 1.0))[1]]
        if len(free) > 2:
            return ("sos", si)
    return None


def _free_span(s, overrides):
    free = [pos for pos, j in enumerate(s.members)
            if overrides.get(j, (0.0, 1.0))[0] != overrides.get(j, (0.0, 1.0))[1]]
    return min(free), max(free)


def _branch_children(mip, branch, overrides):
    """Both children's bound-override dicts for a branching decision."""
    if branch[0] == "bin":
        j = branch[1]
        out = []
        for pin in ((0.0, 0.0), (1.0, 1.0)):
            child = dict(overrides)
            child[j] = pin
            out.append(child)
        return out
    _, si, lo, hi, centroid = branch
    s = mip.sos2[si]
    # split point strictly inside the span so both children shrink it
    r = max(lo + 1, min(hi - 1, int(round(centroid))))
    left = dict(overrides)
    for pos in range(r + 1, len(s.members)):
        left[s.members[pos]] = (0.0, 0.0)
    right = dict(overrides)
    for pos in range(0, r):
        right[s.members[pos]] = (0.0, 0.0)
    return [left, right]


def solve_milp(mip, hint=None, rel_gap=1e-6, abs_gap=1e-9, max_nodes=200_000,
               int_tol=1e-7, feas_tol=1e-7, opt_tol=1e-9, engine="auto",
               strong_k=3, strong_depth=1_000_000, pseudo=None, probe=True,
               log: Optional[Callable] = None):
    """Best-bound branch and bound. Returns a MilpOutcome.

    A feasible `hint` (dict by column name, or a full vector) seeds the
    incumbent and can only improve the result. Termination: proven gap
    below rel_gap/abs_gap, exhausted tree, or max_nodes. Branching picks
    among the strong_k best-scored candidates: an entity's first branchings
    (down to strong_depth) are priced by solving both children, whose bounds
    ride along into the heap; later ones reuse the learned drop rates.
    `pseudo` lets a caller share that drop-rate table across related solves
    (mutated in place); branching entities must mean the same thing in all
    of them. `probe` controls root domain reduction, worth skipping on
    trees whose pruning comes from bound decay rather than fixings.
    """
    lp = mip.lp
    sense_max = lp.sense == "max"

    def better(a, b):
        return a > b if sense_max else a < b

    def key(bound):
        return -bound if sense_max else bound

    incumbent_x = None
    incumbent_val = math.nan
    incumbent_out = None
    if hint is not None:
        hx = _check_hint(mip, hint, int_tol, feas_tol)
        if hx is not None:
            incumbent_x = hx
            incumbent_val = float(lp.obj @ hx)

    def closed(bound):
        if incumbent_x is None:
            return False
        g = (bound - incumbent_val) if sense_max else (incumbent_val - bound)
        return g <= abs_gap or g <= rel_gap * max(1.0, abs(incumbent_val))

    def proven(bound):
        # the proven global bound never undercuts a feasible incumbent
        if incumbent_x is None:
            return bound
        return max(bound, incumbent_val) if sense_max else min(bound, incumbent_val)

    def note_incumbent(fout):
        nonlocal incumbent_x, incumbent_val, incumbent_out
        if incumbent_x is None or better(fout.objective, incumbent_val):
            incumbent_x = fout.x
            incumbent_val = fout.objective
            incumbent_out = fout

    def try_pin_incumbent(x, overrides, basis):
        """Heuristic: pin every discrete entity at x and resolve. Feasible
        results seed or improve the incumbent, enabling pruning long before
        the tree reaches an exactly-satisfied leaf."""
        fout = solve_lp(lp.with_bounds(_pin_discrete(mip, x, overrides)),
                        warm=basis, engine=engine, feas_tol=feas_tol,
                        opt_tol=opt_tol)
        if fout.status != OPTIMAL:
            return False
        note_incumbent(fout)
        return True

    def try_dive_incumbent(x, overrides, basis):
        """Heuristic: repeatedly pin the entity the current solution is most
        decided about and re-solve, letting the continuous variables adapt
        between pins. Costlier than a one-shot pin but lands much closer to
        the best reachable leaf."""
        cur = dict(overrides)
        cx = x
        warm = basis
        while True:
            todo = _undecided(mip, cx, cur)
            if not todo:
                break
            _, kind, ident = todo[0]
            if kind == "bin":
                v = 1.0 if cx[ident] >= 0.5 else 0.0
                pins = {ident: (v, v)}
                alt = {ident: (1.0 - v, 1.0 - v)}
            else:
                pins = _pin_set(mip.sos2[ident], cx)
                alt = None
            cand = dict(cur)
            cand.update(pins)
            o = solve_lp(lp.with_bounds(cand), warm=warm, engine=engine,
                         feas_tol=feas_tol, opt_tol=opt_tol)
            if o.status != OPTIMAL and alt is not None:
                cand = dict(cur)
                cand.update(alt)
                o = solve_lp(lp.with_bounds(cand), warm=warm, engine=engine,
                             feas_tol=feas_tol, opt_tol=opt_tol)
            if o.status != OPTIMAL:
                # contradiction mid-dive: fall back to the one-shot pin
                return try_pin_incumbent(cx, cur, warm)
            cur = cand
            cx = o.x
            warm = o.basis
        return try_pin_incumbent(cx, cur, warm)

    def probe_reduce(overrides, out):
        """Domain reduction at a node: evaluate both sides of each undecided
        entity's disjunction and permanently adopt the surviving side whenever
        the other side is infeasible or already within the termination gap of
        the incumbent. Returns the reduced scope and its LP outcome, or
        (None, None) when both sides of some disjunction are dead."""
        cur = overrides
        cur_out = out
        improved = True
        while improved:
            improved = False
            for _, kind, ident in _undecided(mip, cur_out.x, cur):
                x = cur_out.x
                if kind == "bin":
                    branch = ("bin", ident)
                else:
                    s = mip.sos2[ident]
                    lo, hi = _free_span(s, cur)
                    if hi - lo <= 1:
                        continue
                    vals = np.maximum(x[np.asarray(s.members)], 0.0)
                    tot = float(vals.sum())
                    centroid = (float(np.dot(np.arange(len(vals)), vals)) / tot
                                if tot > 0.0 else 0.5 * (lo + hi))
                    branch = ("sos", ident, lo, hi, centroid)
                kids = _branch_children(mip, branch, cur)
                outs = [solve_lp(lp.with_bounds(k), warm=cur_out.basis,
                                 engine=engine, feas_tol=feas_tol,
                                 opt_tol=opt_tol) for k in kids]
                dead = [o.status == INFEASIBLE
                        or (o.status == OPTIMAL and closed(o.objective))
                        for o in outs]
                if all(dead):
                    return None, None
                if dead[0] != dead[1]:
                    keep = 1 if dead[0] else 0
                    if outs[keep].status == OPTIMAL:
                        cur = kids[keep]
                        cur_out = outs[keep]
                        improved = True
        return cur, cur_out

    seq = 0
    heap = [(key(INF if sense_max else -INF), 0, 0, {}, None, 0, None)]
    nodes = 0
    best_bound = INF if sense_max else -INF
    # pseudocosts: per entity, mean observed bound-drop per unit of score,
    # learned from the first few strong evaluations and trusted afterwards
    if pseudo is None:
        pseudo = {}

    def pseudo_count(ent):
        rec = pseudo.get(ent)
        return 0 if rec is None else rec[1]

    def pseudo_note(ent, ratio):
        rec = pseudo.get(ent)
        if rec is None:
            pseudo[ent] = [ratio, 1]
        else:
            rec[0] += ratio
            rec[1] += 1

    def pseudo_rate(ent):
        rec = pseudo.get(ent)
        return rec[0] / rec[1] if rec else 0.0
    while heap:
        est_key, _, _, overrides, warm, depth, cached = heapq.heappop(heap)
        est = -est_key if sense_max else est_key
        best_bound = proven(est)
        if closed(est):
            break
        if nodes >= max_nodes:
            return _outcome(MILP_NODE_LIMIT, incumbent_x, incumbent_val,
                            proven(est), nodes, incumbent_out, lp.col_index)
        nodes += 1
        if cached is not None:
            out = cached
        else:
            node_lp = lp.with_bounds(overrides) if overrides else lp
            out = solve_lp(node_lp, warm=warm, engine=engine,
                           feas_tol=feas_tol, opt_tol=opt_tol)
        if out.status == INFEASIBLE:
            continue
        if out.status == UNBOUNDED:
            if not overrides and not mip.binaries and not mip.sos2:
                return _outcome(MILP_UNBOUNDED, None, math.nan, est, nodes, None)
            raise UnboundedProblem("relaxation unbounded; add explicit bounds")
        if out.status != OPTIMAL:
            raise NumericalBreakdown(f"node LP ended with status {out.status}")
        bound = out.objective
        if closed(bound):
            continue
        x = out.x
        if nodes == 1 or nodes % 200 == 0:
            try_dive_incumbent(x, overrides, out.basis)
            if closed(bound):
                continue
            if nodes == 1 and probe:
                red, red_out = probe_reduce(overrides, out)
                if red is None:
                    continue
                overrides, out = red, red_out
                bound = out.objective
                x = out.x
                if closed(bound):
                    continue
        elif incumbent_x is None or nodes % 64 == 0:
            try_pin_incumbent(x, overrides, out.basis)
            if closed(bound):
                continue
        if log is not None:
            log({"node": nodes, "depth": depth, "bound": bound,
                 "incumbent": None if incumbent_x is None else incumbent_val,
                 "open": len(heap)})

        cands = []  # (score, branch_tuple, entity_key)
        for si, s in enumerate(mip.sos2):
            viol, score, centroid = _sos2_violation(x, s, int_tol)
            if viol > int_tol:
                vals = np.maximum(x[np.asarray(s.members)], 0.0)
                support = np.flatnonzero(vals > int_tol)
                cands.append((score, ("sos", si, int(support.min()),
                                      int(support.max()), centroid),
                              ("sos", si)))
        cands.sort(key=lambda c: -c[0])
        del cands[max(strong_k, 1):]
        bj = _most_fractional_binary(x, mip.binaries, int_tol)
        if bj >= 0:
            f = x[bj]
            cands.append((min(f, 1.0 - f), ("bin", bj), ("bin", bj)))
        if not cands:
            # within tolerance: pin every discrete entity and resolve exactly
            if try_pin_incumbent(x, overrides, out.basis):
                continue
            tgt = _fallback_target(mip, overrides)
            if tgt is None:
                raise NumericalBreakdown("integral node with infeasible pinning")
            if tgt[0] == "bin":
                branch = tgt
            else:
                si = tgt[1]
                lo, hi = _free_span(mip.sos2[si], overrides)
                branch = ("sos", si, lo, hi, 0.5 * (lo + hi))
            children = _branch_children(mip, branch, overrides)
            child_outs = [None, None]
        else:
            # reliability rule: an entity's first few branchings are scored
            # by actually solving both children; afterwards its recorded
            # drop-per-score rate prices candidates for free
            best = None  # (composite, order, cand, kids, outs)
            fathomed = False
            for order, (score, cand, ent) in enumerate(cands):
                if depth <= strong_depth and pseudo_count(ent) < _RELIABLE:
                    kids = _branch_children(mip, cand, overrides)
                    outs = [solve_lp(lp.with_bounds(k), warm=out.basis,
                                     engine=engine, feas_tol=feas_tol,
                                     opt_tol=opt_tol) for k in kids]
                    drops = []
                    for o in outs:
                        if o.status == OPTIMAL:
                            d = (bound - o.objective) if sense_max \
                                else (o.objective - bound)
                            drops.append(max(d, 0.0))
                        elif o.status == INFEASIBLE:
                            drops.append(abs(bound) + 1e3)
                        else:
                            drops.append(0.0)
                    if all(o.status == INFEASIBLE for o in outs):
                        # the disjunction is exhaustive, so the node is dead
                        fathomed = True
                        break
                    comp = 8.0 * min(drops) + max(drops)
                    pseudo_note(ent, comp / max(score, 1e-12))
                else:
                    kids = None
                    outs = None
                    comp = pseudo_rate(ent) * score
                if best is None or comp > best[0]:
                    best = (comp, order, cand, kids, outs)
            if fathomed:
                continue
            branch = best[2]
            children = best[3]
            child_outs = best[4]
            if children is None:
                # children are solved eagerly either way: their exact bounds
                # order the heap and prune immediately, and the cached result
                # means no LP is ever solved twice
                children = _branch_children(mip, branch, overrides)
                child_outs = [solve_lp(lp.with_bounds(k), warm=out.basis,
                                       engine=engine, feas_tol=feas_tol,
                                       opt_tol=opt_tol) for k in children]
                if all(o.status == INFEASIBLE for o in child_outs):
                    continue
        for child, c_out in zip(children, child_outs):
            seq += 1
            if c_out is None or (c_out.status != OPTIMAL
                                 and c_out.status != INFEASIBLE):
                heapq.heappush(heap, (key(bound), -(depth + 1), seq, child,
                                      out.basis, depth + 1, None))
            elif c_out.status == OPTIMAL:
                if not closed(c_out.objective):
                    heapq.heappush(heap, (key(c_out.objective), -(depth + 1),
                                          seq, child, None, depth + 1, c_out))
            # a proven-infeasible or already-closed child is pruned here
    else:
        best_bound = incumbent_val if incumbent_x is not None else best_bound

    if incumbent_x is None:
        return _outcome(MILP_INFEASIBLE, None, math.nan, best_bound, nodes, None)
    return _outcome(MILP_OPTIMAL, incumbent_x, incumbent_val, best_bound,
                    nodes, incumbent_out, lp.col_index)


def _outcome(status, x, val, bound, nodes, lp_out, col_index=None):
    return MilpOutcome(status=status, objective=val, bound=bound, x=x,
                       nodes=nodes, lp_outcome=lp_out, col_index=col_index)
