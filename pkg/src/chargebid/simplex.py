"""Dense bounded-variable revised simplex with a composite phase 1.

The engine works on the computational form  A x + I s = b  where each row
gets one logical column s_i whose bounds encode the relation
(<=: [0,inf), >=: (-inf,0], ==: [0,0]).  Row duals then come out directly in
the shadow-price convention dual_i = d(obj)/d(b_i) for any relation.

Pivoting: Dantzig pricing with a switch to Bland's least-index rule after a
run of degenerate steps; bounded ratio test with bound flips; explicit basis
inverse maintained by product-form updates and periodically refactorized.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .errors import NumericalBreakdown
from .lp import (Basis, INF, ITERATION_LIMIT, INFEASIBLE, LE, GE, EQ, LpOutcome,
                 NUMERICAL, OPTIMAL, UNBOUNDED)

BASIC, AT_LOWER, AT_UPPER, FREE_NB = 0, 1, 2, 3

_REFRESH = 96           # pivots between refactorizations
_STALL_LIMIT = 300      # degenerate steps before switching to Bland
_PIVOT_TOL = 1e-9       # relative pivot admissibility


def _logical_bounds(relation):
    if relation == LE:
        return 0.0, INF
    if relation == GE:
        return -INF, 0.0
    return 0.0, 0.0


class _Tableau:
    def __init__(self, lp, feas_tol, opt_tol):
        m, n = lp.n_rows, lp.n_cols
        self.m, self.n = m, n
        self.nt = n + m
        self.A = np.zeros((m, self.nt))
        self.A[:, :n] = lp.matrix.toarray()
        self.A[:, n:] = np.eye(m)
        self.b = lp.row_rhs.astype(float).copy()
        self.lo = np.empty(self.nt)
        self.hi = np.empty(self.nt)
        self.lo[:n] = lp.col_lower
        self.hi[:n] = lp.col_upper
        for i, rel in enumerate(lp.row_relations):
            self.lo[n + i], self.hi[n + i] = _logical_bounds(rel)
        self.c = np.zeros(self.nt)
        sign = 1.0 if lp.sense == "max" else -1.0
        self.c[:n] = sign * lp.obj
        self.sign = sign
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.status = np.empty(self.nt, dtype=np.int8)
        self.basic = np.empty(m, dtype=np.int64)
        self.binv = np.eye(m)
        self.xb = np.zeros(m)
        self.xn_val = np.zeros(self.nt)  # values of nonbasic columns
        self.pivots_since_refresh = 0
        self.iterations = 0

    # ----- basis management -------------------------------------------------

    def start_basis_logical(self):
        n = self.n
        self.status[:] = AT_LOWER
        for j in range(n):
            lo, hi = self.lo[j], self.hi[j]
            if lo == -INF and hi == INF:
                self.status[j] = FREE_NB
            elif lo == -INF:
                self.status[j] = AT_UPPER
        self.status[n:] = BASIC
        self.basic[:] = np.arange(n, self.nt)
        self.binv = np.eye(self.m)
        self._set_nonbasic_values()
        self._recompute_xb()

    def start_basis_warm(self, warm):
        st = warm.status.copy()
        basic_idx = np.flatnonzero(st == BASIC)
        if len(basic_idx) != self.m:
            return False
        if self.m > 0:
            B = self.A[:, basic_idx]
            try:
                lu, piv = sla.lu_factor(B)
            except Exception:
                return False
            diag = np.abs(np.diag(lu))
            if diag.min() < 1e-10 * max(1.0, diag.max()):
                return False
            try:
                self.binv = sla.lu_solve((lu, piv), np.eye(self.m))
            except Exception:
                return False
        # repair nonbasic statuses against the actual bounds
        for j in range(self.nt):
            if st[j] == BASIC:
                continue
            lo, hi = self.lo[j], self.hi[j]
            if st[j] == AT_LOWER and lo == -INF:
                st[j] = FREE_NB if hi == INF else AT_UPPER
            elif st[j] == AT_UPPER and hi == INF:
                st[j] = FREE_NB if lo == -INF else AT_LOWER
            elif st[j] == FREE_NB and (lo != -INF or hi != INF):
                st[j] = AT_LOWER if lo != -INF else AT_UPPER
        self.status = st
        self.basic = basic_idx
        self._set_nonbasic_values()
        self._recompute_xb()
        return True

    def _set_nonbasic_values(self):
        self.xn_val[:] = 0.0
        for j in range(self.nt):
            s = self.status[j]
            if s == AT_LOWER:
                self.xn_val[j] = self.lo[j]
            elif s == AT_UPPER:
                self.xn_val[j] = self.hi[j]

    def _recompute_xb(self):
        rhs = self.b.copy()
        nb = np.flatnonzero(self.status != BASIC)
        vals = self.xn_val[nb]
        nz = vals != 0.0
        if nz.any():
            rhs -= self.A[:, nb[nz]] @ vals[nz]
        self.xb = self.binv @ rhs

    def refactorize(self):
        if self.m == 0:
            self.pivots_since_refresh = 0
            return
        B = self.A[:, self.basic]
        try:
            lu, piv = sla.lu_factor(B)
            diag = np.abs(np.diag(lu))
            if diag.min() < 1e-12 * max(1.0, diag.max()):
                raise NumericalBreakdown("singular basis at refactorization")
            self.binv = sla.lu_solve((lu, piv), np.eye(self.m))
        except NumericalBreakdown:
            raise
        except Exception as exc:
            raise NumericalBreakdown(f"refactorization failed: {exc}")
        self._recompute_xb()
        self.pivots_since_refresh = 0

    # ----- pricing ----------------------------------------------------------

    def duals_for(self, cb):
        return cb @ self.binv

    def _phase1_cost(self):
        d = np.zeros(self.m)
        tol = self.feas_tol
        low_viol = self.xb < self.lo[self.basic] - tol
        up_viol = self.xb > self.hi[self.basic] + tol
        d[low_viol] = -1.0
        d[up_viol] = 1.0
        infeas = 0.0
        if low_viol.any():
            infeas += float(np.sum(self.lo[self.basic][low_viol] - self.xb[low_viol]))
        if up_viol.any():
            infeas += float(np.sum(self.xb[up_viol] - self.hi[self.basic][up_viol]))
        return d, infeas

    def _choose_entering(self, rc, bland):
        tol = max(self.opt_tol, 1e-12)
        st = self.status
        cand_dir = np.zeros(self.nt)
        up_ok = (st == AT_LOWER) | (st == FREE_NB)
        dn_ok = (st == AT_UPPER) | (st == FREE_NB)
        score = np.zeros(self.nt)
        sel_up = up_ok & (rc > tol)
        sel_dn = dn_ok & (rc < -tol)
        score[sel_up] = rc[sel_up]
        # free columns prefer the better direction; AT_UPPER go down
        score[sel_dn] = np.maximum(score[sel_dn], -rc[sel_dn])
        cand_dir[sel_up] = 1.0
        cand_dir[sel_dn & ~sel_up] = -1.0
        free_both = sel_up & sel_dn
        if free_both.any():
            cand_dir[free_both] = np.sign(rc[free_both])
        cand = np.flatnonzero(score > 0.0)
        if len(cand) == 0:
            return -1, 0.0
        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmax(score[cand])])
        return j, float(cand_dir[j])

    # ----- ratio test ---------------------------------------------------------

    def _ratio_test(self, j, t, w, phase1, bland=False):
        """Return (theta, leaving_pos, leaving_bound) with leaving_pos=-1 for a
        bound flip of the entering column and -2 for unbounded."""
        tol = self.feas_tol
        m = self.m
        best_theta = INF
        leaving = -2
        leave_bound = 0.0
        lob = self.lo[self.basic]
        hib = self.hi[self.basic]
        delta = -t * w  # xb rate of change per unit theta
        for i in range(m):
            di = delta[i]
            if abs(di) < 1e-11:
                continue
            xi = self.xb[i]
            if phase1:
                below = xi < lob[i] - tol
                above = xi > hib[i] + tol
                if below:
                    if di > 0:  # rising toward lower bound
                        th = (lob[i] - xi) / di
                        bnd = lob[i]
                    else:
                        continue  # moving away; no event
                elif above:
                    if di < 0:  # falling toward upper bound
                        th = (hib[i] - xi) / di
                        bnd = hib[i]
                    else:
                        continue
                else:
                    if di > 0 and hib[i] != INF:
                        th = (hib[i] - xi) / di
                        bnd = hib[i]
                    elif di < 0 and lob[i] != -INF:
                        th = (lob[i] - xi) / di
                        bnd = lob[i]
                    else:
                        continue
            else:
                if di > 0:
                    if hib[i] == INF:
                        continue
                    th = (hib[i] - xi) / di
                    bnd = hib[i]
                else:
                    if lob[i] == -INF:
                        continue
                    th = (lob[i] - xi) / di
                    bnd = lob[i]
            if th < -tol:
                th = 0.0
            th = max(th, 0.0)
            if th < best_theta - 1e-12:
                take = True
            elif th < best_theta + 1e-12 and leaving >= 0:
                # anti-cycling needs least-index ties; otherwise favor the
                # largest pivot for stability
                if bland:
                    take = self.basic[i] < self.basic[leaving]
                else:
                    take = abs(w[i]) > abs(w[leaving]) + 1e-12
            else:
                take = leaving < 0 and th < best_theta + 1e-12
            if take:
                best_theta = th
                leaving = i
                leave_bound = bnd
        # entering column's own opposite bound (flip)
        span = self.hi[j] - self.lo[j]
        if span != INF and span < best_theta:
            return span, -1, 0.0
        if leaving == -2:
            return INF, -2, 0.0
        return best_theta, leaving, leave_bound

    # ----- pivot --------------------------------------------------------------

    def _pivot(self, j, t, theta, w, leaving, leave_bound):
        if leaving == -1:  # bound flip
            self.xb -= t * theta * w
            if self.status[j] == AT_LOWER:
                self.status[j] = AT_UPPER
                self.xn_val[j] = self.hi[j]
            else:
                self.status[j] = AT_LOWER
                self.xn_val[j] = self.lo[j]
            return
        wr = w[leaving]
        if abs(wr) < _PIVOT_TOL:
            raise NumericalBreakdown("pivot element below tolerance")
        out = self.basic[leaving]
        self.xb -= t * theta * w
        enter_val = self.xn_val[j] + t * theta
        # update inverse: binv <- E binv
        br = self.binv[leaving] / wr
        self.binv -= np.outer(w, br)
        self.binv[leaving] = br
        self.basic[leaving] = j
        self.xb[leaving] = enter_val
        self.status[j] = BASIC
        self.xn_val[j] = 0.0
        self.status[out] = AT_LOWER if leave_bound == self.lo[out] else AT_UPPER
        if self.lo[out] == -INF and self.hi[out] == INF:
            self.status[out] = FREE_NB
        self.xn_val[out] = leave_bound if self.status[out] != FREE_NB else 0.0
        self.pivots_since_refresh += 1
        if self.pivots_since_refresh >= _REFRESH:
            self.refactorize()


def solve(lp, warm=None, feas_tol=1e-7, opt_tol=1e-9, max_iter=None):
    """Two-phase bounded revised simplex. Returns LpOutcome."""
    tab = _Tableau(lp, feas_tol, opt_tol)
    if max_iter is None:
        max_iter = 200 * (tab.m + tab.n) + 2000
    started = False
    if warm is not None:
        started = tab.start_basis_warm(warm)
    if not started:
        tab.start_basis_logical()

    stall = 0
    bland = False
    phase = 1
    while True:
        if tab.iterations >= max_iter:
            return _finish(lp, tab, ITERATION_LIMIT)
        if phase == 1:
            d, infeas = tab._phase1_cost()
            if infeas <= feas_tol * (1.0 + abs(tab.b).sum()):
                phase = 2
                stall = 0
                bland = False
                continue
            # maximizing -infeasibility: basic pseudo-costs are -d, so the
            # max-sense reduced cost of nonbasic j is 0 - (-d)'B^-1 A_j = y.A_j
            y = tab.duals_for(d)
            rc = y @ tab.A
            rc[tab.basic] = 0.0
            j, t = tab._choose_entering(rc, bland)
            if j < 0:
                return _finish(lp, tab, INFEASIBLE)
        else:
            y = tab.duals_for(tab.c[tab.basic])
            rc = tab.c - y @ tab.A
            rc[tab.basic] = 0.0
            j, t = tab._choose_entering(rc, bland)
            if j < 0:
                return _finish(lp, tab, OPTIMAL, duals_y=y, rc=rc)
        w = tab.binv @ tab.A[:, j]
        theta, leaving, leave_bound = tab._ratio_test(j, t, w, phase == 1,
                                                      bland=bland)
        if leaving == -2:
            if phase == 1:
                # should not happen: infeasibility is bounded below
                raise NumericalBreakdown("phase-1 ray without blocking event")
            return _finish(lp, tab, UNBOUNDED)
        tab.iterations += 1
        if theta <= 1e-11:
            stall += 1
            if stall > _STALL_LIMIT:
                bland = True
        else:
            stall = 0
            if bland and stall == 0:
                bland = False
        tab._pivot(j, t, theta, w, leaving, leave_bound)

    raise AssertionError("unreachable")


def _finish(lp, tab, status, duals_y=None, rc=None):
    n, m = tab.n, tab.m
    x = np.empty(tab.nt)
    nbmask = tab.status != BASIC
    x[nbmask] = tab.xn_val[nbmask]
    x[tab.basic] = tab.xb
    xs = x[:n].copy()
    if duals_y is None:
        duals_y = tab.duals_for(tab.c[tab.basic])
    if rc is None:
        rc = tab.c - duals_y @ tab.A
    sign = tab.sign
    obj = float(tab.c[:n] @ xs) * sign
    duals = duals_y * sign
    rcs = rc[:n] * sign
    basis = Basis(status=tab.status.copy(), n_cols=n, n_rows=m)
    if status in (INFEASIBLE, UNBOUNDED, ITERATION_LIMIT):
        obj = obj if status != INFEASIBLE else math.nan
    return LpOutcome(
        status=status, objective=obj, x=xs, duals=duals, reduced_costs=rcs,
        basis=basis, iterations=tab.iterations, lp=lp,
    )
