"""Linear program container, builder, outcomes, and solve dispatch.

Conventions used across the engine:

* objective sense is MAX unless stated otherwise;
* row duals follow the shadow-price convention dual_i = d(objective)/d(rhs_i)
  for the row written exactly as stored (<=, >= or ==);
* reduced costs are max-sense: rc_j = c_j - y . A_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalBreakdown, UnboundedProblem

INF = math.inf

LE, GE, EQ = "<=", ">=", "=="
_RELATIONS = (LE, GE, EQ)

# statuses
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL = "numerical"


@dataclass
class LinearProgram:
    """Immutable-ish LP in row form: optimize c'x s.t. A x (rel) b, l <= x <= u."""

    name: str
    sense: str  # "max" or "min"
    col_names: list
    col_lower: np.ndarray
    col_upper: np.ndarray
    obj: np.ndarray
    row_names: list
    row_relations: list
    row_rhs: np.ndarray
    matrix: sp.csr_matrix
    col_index: dict = field(default_factory=dict)
    row_index: dict = field(default_factory=dict)

    @property
    def n_cols(self):
        return len(self.col_names)

    @property
    def n_rows(self):
        return len(self.row_names)

    def col(self, name):
        return self.col_index[name]

    def row(self, name):
        return self.row_index[name]

    def with_bounds(self, overrides):
        """Return a shallow copy with per-column bound overrides {col: (lo, hi)}.

        The matrix and all name tables are shared; only the bound arrays are copied.
        """
        lo = self.col_lower.copy()
        hi = self.col_upper.copy()
        for j, (a, b) in overrides.items():
            jj = self.col_index[j] if isinstance(j, str) else j
            lo[jj] = a
            hi[jj] = b
        return LinearProgram(
            self.name, self.sense, self.col_names, lo, hi, self.obj,
            self.row_names, self.row_relations, self.row_rhs, self.matrix,
            self.col_index, self.row_index,
        )

    def with_rhs(self, rhs):
        """Return a shallow copy with a replacement rhs vector."""
        return LinearProgram(
            self.name, self.sense, self.col_names, self.col_lower,
            self.col_upper, self.obj, self.row_names, self.row_relations,
            np.asarray(rhs, dtype=float), self.matrix,
            self.col_index, self.row_index,
        )


class LpBuilder:
    """Incremental LP construction with named columns and rows."""

    def __init__(self, name="lp", sense="max"):
        self.name = name
        self.sense = sense
        self._col_names = []
        self._col_lower = []
        self._col_upper = []
        self._obj = []
        self._col_index = {}
        self._row_names = []
        self._row_rel = []
        self._row_rhs = []
        self._row_index = {}
        self._entries = []  # (row, col, coef)

    def add_col(self, name, lower=0.0, upper=INF, obj=0.0):
        if name in self._col_index:
            raise ValueError(f"duplicate column {name}")
        j = len(self._col_names)
        self._col_index[name] = j
        self._col_names.append(name)
        self._col_lower.append(lower)
        self._col_upper.append(upper)
        self._obj.append(obj)
        return j

    def set_obj(self, name, coef):
        self._obj[self._col_index[name]] = coef

    def add_obj(self, name, coef):
        self._obj[self._col_index[name]] += coef

    def add_row(self, name, coeffs, relation, rhs):
        """coeffs: mapping or iterable of (col name/index, coefficient)."""
        if relation not in _RELATIONS:
            raise ValueError(f"bad relation {relation}")
        if name in self._row_index:
            raise ValueError(f"duplicate row {name}")
        i = len(self._row_names)
        self._row_index[name] = i
        self._row_names.append(name)
        self._row_rel.append(relation)
        self._row_rhs.append(rhs)
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        for c, v in items:
            if v == 0.0:
                continue
            j = self._col_index[c] if isinstance(c, str) else c
            self._entries.append((i, j, float(v)))
        return i

    def build(self):
        m, n = len(self._row_names), len(self._col_names)
        if self._entries:
            rows, cols, vals = zip(*self._entries)
        else:
            rows, cols, vals = (), (), ()
        mat = sp.coo_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
            shape=(m, n),
        ).tocsr()
        mat.sum_duplicates()
        return LinearProgram(
            self.name, self.sense, list(self._col_names),
            np.asarray(self._col_lower, dtype=float),
            np.asarray(self._col_upper, dtype=float),
            np.asarray(self._obj, dtype=float),
            list(self._row_names), list(self._row_rel),
            np.asarray(self._row_rhs, dtype=float), mat,
            dict(self._col_index), dict(self._row_index),
        )


@dataclass
class Basis:
    """Warm-start descriptor: per-column status over structurals + logicals.

    status codes: 0 basic, 1 nonbasic at lower, 2 nonbasic at upper,
    3 nonbasic free (at zero). Logical j of row i sits at index n_cols + i.
    """

    status: np.ndarray
    n_cols: int
    n_rows: int

    def compatible(self, lp: LinearProgram):
        return self.n_cols == lp.n_cols and self.n_rows == lp.n_rows


@dataclass
class LpOutcome:
    status: str
    objective: float
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: Optional[Basis]
    iterations: int
    lp: LinearProgram

    def value(self, name):
        return float(self.x[self.lp.col_index[name]])

    def dual(self, name):
        return float(self.duals[self.lp.row_index[name]])

    def reduced_cost(self, name):
        return float(self.reduced_costs[self.lp.col_index[name]])

    def values(self, names):
        idx = [self.lp.col_index[n] for n in names]
        return self.x[idx]


# engine selection thresholds: problems comfortably inside dense linear algebra
_DENSE_MAX_ROWS = 150
_DENSE_MAX_CELLS = 40_000


def solve_lp(lp, warm=None, engine="auto", feas_tol=1e-7, opt_tol=1e-9,
             max_iter=None):
    """Solve an LP, returning an LpOutcome with primal, duals and basis.

    engine: "dense" (own bounded revised simplex), "highs" (scipy backend),
    or "auto" (dense below a size threshold). Warm basis is honored by the
    dense engine when compatible; other engines solve cold.
    """
    from . import simplex as _simplex
    from . import highs_backend as _hb

    if engine == "auto":
        m, n = lp.n_rows, lp.n_cols
        dense_ok = m <= _DENSE_MAX_ROWS and m * (n + m) <= _DENSE_MAX_CELLS
        if dense_ok:
            try:
                out = solve_lp(lp, warm=warm, engine="dense",
                               feas_tol=feas_tol, opt_tol=opt_tol,
                               max_iter=max_iter)
            except NumericalBreakdown:
                return _resolve_highs(lp)
            if out.status in (ITERATION_LIMIT, NUMERICAL):
                return _resolve_highs(lp)
            return out
        engine = "highs"
    if engine == "dense":
        if warm is not None and not warm.compatible(lp):
            warm = None
        try:
            cap = max_iter
            if warm is not None and cap is None:
                # a useful warm start finishes in few pivots; a misleading
                # one can stall on degenerate crawls, so cap it and fall
                # back to a cold solve instead of grinding
                cap = 2 * (lp.n_rows + lp.n_cols) + 300
            out = _simplex.solve(lp, warm=warm, feas_tol=feas_tol,
                                 opt_tol=opt_tol, max_iter=cap)
        except NumericalBreakdown:
            if warm is None:
                raise
            return _simplex.solve(lp, warm=None, feas_tol=feas_tol,
                                  opt_tol=opt_tol, max_iter=max_iter)
        if warm is not None and out.status == ITERATION_LIMIT:
            return _simplex.solve(lp, warm=None, feas_tol=feas_tol,
                                  opt_tol=opt_tol, max_iter=max_iter)
        return out
    if engine == "highs":
        return _hb.solve(lp)
    raise ValueError(f"unknown engine {engine}")


def _resolve_highs(lp):
    from . import highs_backend as _hb
    return _hb.solve(lp)


def write_mps(lp, objname="COST"):
    """Render the LP in fixed-column MPS interchange format (debug dump)."""
    rel_tag = {LE: "L", GE: "G", EQ: "E"}
    out = []
    out.append(f"NAME          {lp.name[:60]}")
    if lp.sense == "max":
        out.append("OBJSENSE")
        out.append("    MAX")
    out.append("ROWS")
    out.append(f" N  {objname}")
    for nm, rel in zip(lp.row_names, lp.row_relations):
        out.append(f" {rel_tag[rel]}  {nm}")
    out.append("COLUMNS")
    csc = lp.matrix.tocsc()
    for j, cn in enumerate(lp.col_names):
        if lp.obj[j] != 0.0:
            out.append(f"    {cn:<10}{objname:<10}{lp.obj[j]:< .12g}")
        for k in range(csc.indptr[j], csc.indptr[j + 1]):
            i = csc.indices[k]
            out.append(f"    {cn:<10}{lp.row_names[i]:<10}{csc.data[k]:< .12g}")
    out.append("RHS")
    for i, nm in enumerate(lp.row_names):
        if lp.row_rhs[i] != 0.0:
            out.append(f"    RHS       {nm:<10}{lp.row_rhs[i]:< .12g}")
    out.append("BOUNDS")
    for j, cn in enumerate(lp.col_names):
        lo, hi = lp.col_lower[j], lp.col_upper[j]
        if lo == 0.0 and hi == INF:
            continue
        if lo == -INF and hi == INF:
            out.append(f" FR BND       {cn}")
            continue
        if lo == hi:
            out.append(f" FX BND       {cn:<10}{lo:< .12g}")
            continue
        if lo != 0.0:
            if lo == -INF:
                out.append(f" MI BND       {cn}")
            else:
                out.append(f" LO BND       {cn:<10}{lo:< .12g}")
        if hi != INF:
            out.append(f" UP BND       {cn:<10}{hi:< .12g}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"
