"""scipy HiGHS adapter behind the solve_lp contract.

Used for LPs too large for the dense reference engine. Duals are remapped to
the engine-wide shadow-price convention (max sense, dual = d obj / d rhs).
Reduced costs are recomputed from the duals so no scipy sign convention can
leak through. No warm-basis support on this path.

Two routes to the same solver: a direct call into scipy's HiGHS wrapper,
which takes two-sided rows and skips linprog's per-call validation and
matrix reshuffling, and the public linprog interface as fallback when the
private wrapper is missing or reports anything unusual.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .lp import (EQ, GE, INF, INFEASIBLE, ITERATION_LIMIT, LE, LpOutcome,
                 NUMERICAL, OPTIMAL, UNBOUNDED)

try:
    from scipy.optimize._highspy._highs_wrapper import \
        _highs_wrapper as _raw_highs
    from scipy.optimize._highspy._core import HighsModelStatus, kHighsInf
except Exception:  # pragma: no cover - depends on scipy internals
    _raw_highs = None
    kHighsInf = 1e30


# converted structural data per (matrix, objective) pair; branch-and-bound
# nodes and re-solves at new right-hand sides share both, so the sparse
# assembly is paid once per problem instead of once per solve. Anything
# derived from the rhs is rebuilt on every call, which keeps repeated
# solves of one structure at different rhs vectors cheap and correct.
_CONV_CACHE = {}
_CONV_LIMIT = 16


def _converted(lp):
    key = (id(lp.matrix), id(lp.obj))
    hit = _CONV_CACHE.get(key)
    if hit is not None and hit[0] is lp.matrix and hit[1] is lp.obj:
        return hit[2]
    sign = 1.0 if lp.sense == "max" else -1.0
    c = -sign * lp.obj  # both routes minimize
    rel = np.asarray([{LE: 0, GE: 1, EQ: 2}[r] for r in lp.row_relations])
    mat = lp.matrix.tocsr()
    le_rows = np.flatnonzero(rel == 0)
    ge_rows = np.flatnonzero(rel == 1)
    eq_rows = np.flatnonzero(rel == 2)
    # linprog route: stacked <= block plus equality block
    blocks = []
    if len(le_rows):
        blocks.append(mat[le_rows])
    if len(ge_rows):
        blocks.append(-mat[ge_rows])
    A_ub = sp.vstack(blocks).tocsr() if blocks else None
    A_eq = mat[eq_rows] if len(eq_rows) else None
    # direct route: rows stay in place with two-sided bounds
    csc = lp.matrix.tocsc()
    conv = (sign, c, mat, le_rows, ge_rows, eq_rows, A_ub, A_eq, csc,
            rel == 0, rel == 1)
    if len(_CONV_CACHE) >= _CONV_LIMIT:
        _CONV_CACHE.pop(next(iter(_CONV_CACHE)))
    _CONV_CACHE[key] = (lp.matrix, lp.obj, conv)
    return conv


_RAW_OPTIONS = {
    "presolve": True,
    "solver": "simplex",
    "output_flag": False,
    "log_to_console": False,
}


def _solve_raw(lp, conv):
    (sign, c, mat, _le, _ge, _eq, _aub, _aeq, csc, is_le, is_ge) = conv
    lhs = np.where(is_le, -kHighsInf, lp.row_rhs)
    rhs = np.where(is_ge, kHighsInf, lp.row_rhs)
    lb = np.where(np.isinf(lp.col_lower), -kHighsInf, lp.col_lower)
    ub = np.where(np.isinf(lp.col_upper), kHighsInf, lp.col_upper)
    res = _raw_highs(c, csc.indptr, csc.indices, csc.data, lhs, rhs,
                     lb, ub, np.empty(0, dtype=np.uint8), _RAW_OPTIONS)
    hstat = res.get("status")
    if hstat == HighsModelStatus.kOptimal:
        status = OPTIMAL
    elif hstat == HighsModelStatus.kInfeasible:
        status = INFEASIBLE
    elif hstat == HighsModelStatus.kUnbounded:
        status = UNBOUNDED
    else:
        return None  # unusual outcome; let linprog classify it
    n = lp.n_cols
    m = lp.n_rows
    if status == OPTIMAL:
        x = np.asarray(res["x"], dtype=float)
        # HiGHS reports min-sense row marginals in original row order
        duals = -sign * np.asarray(res["lambda"], dtype=float)
        objective = float(sign * -res["fun"])
    else:
        x = np.zeros(n)
        duals = np.zeros(m)
        objective = float("nan")
    rcs = lp.obj - duals @ mat
    return LpOutcome(status=status, objective=objective, x=x, duals=duals,
                     reduced_costs=rcs, basis=None,
                     iterations=int(res.get("simplex_nit", 0) or 0), lp=lp)


def solve(lp):
    conv = _converted(lp)
    if _raw_highs is not None:
        out = _solve_raw(lp, conv)
        if out is not None:
            return out
    return _solve_linprog(lp, conv)


def _solve_linprog(lp, conv):
    (sign, c, mat, le_rows, ge_rows, eq_rows,
     A_ub, A_eq, _csc, _is_le, _is_ge) = conv
    parts = []
    if len(le_rows):
        parts.append(lp.row_rhs[le_rows])
    if len(ge_rows):
        parts.append(-lp.row_rhs[ge_rows])
    b_ub = np.concatenate(parts) if parts else None
    b_eq = lp.row_rhs[eq_rows] if len(eq_rows) else None
    bounds = np.column_stack((lp.col_lower, lp.col_upper))
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    status_map = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED,
                  4: NUMERICAL}
    status = status_map.get(res.status, NUMERICAL)
    n = lp.n_cols
    m = lp.n_rows
    x = np.asarray(res.x, dtype=float) if res.x is not None else np.zeros(n)
    duals = np.zeros(m)
    if status == OPTIMAL:
        # min-sense marginal of row i is d(min)/d rhs_i; ours is
        # d(max)/d rhs_i = -marginal, with an extra flip for negated >= rows.
        if A_ub is not None:
            marg_ub = np.asarray(res.ineqlin.marginals, dtype=float)
            k = 0
            for i in le_rows:
                duals[i] = -marg_ub[k] * sign
                k += 1
            for i in ge_rows:
                duals[i] = marg_ub[k] * sign
                k += 1
        if A_eq is not None:
            marg_eq = np.asarray(res.eqlin.marginals, dtype=float)
            for k, i in enumerate(eq_rows):
                duals[i] = -marg_eq[k] * sign
    # reduced costs in our convention: rc = c - y.A with y the reported duals
    rcs = lp.obj - duals @ mat
    objective = float(sign * -res.fun) if res.fun is not None else float("nan")
    return LpOutcome(status=status, objective=objective, x=x, duals=duals,
                     reduced_costs=rcs, basis=None,
                     iterations=int(getattr(res, "nit", 0) or 0), lp=lp)
