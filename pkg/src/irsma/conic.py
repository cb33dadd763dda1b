"""Thin uniform layer over the two subproblem classes the planners need.

Exactly two program classes are exposed: linear programs and second-order
cone programs, both in "maximize" orientation with box bounds and
upper-bounded inequality rows.  LPs are solved with HiGHS through scipy;
SOCPs with the Clarabel interior-point solver.  A complex-to-real lifting
helper maps phase-vector slots onto (re, im) pairs and unit-disc cones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import optimize, sparse

DEFAULT_TOL = 1e-8

_INF = np.inf


@dataclass
class LinearProgramSpec:
    """Maximize objective @ x subject to row @ x <= bound and box bounds."""

    num_vars: int
    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_idx: list = field(default_factory=list)
    row_coef: list = field(default_factory=list)
    row_bound: list = field(default_factory=list)

    @classmethod
    def empty(cls, num_vars: int) -> "LinearProgramSpec":
        return cls(num_vars=num_vars,
                   objective=np.zeros(num_vars),
                   lower=np.zeros(num_vars),
                   upper=np.full(num_vars, _INF))

    def add_row(self, idx, coef, bound: float) -> None:
        self.row_idx.append(np.asarray(idx, dtype=np.intp))
        self.row_coef.append(np.asarray(coef, dtype=float))
        self.row_bound.append(float(bound))

    def num_rows(self) -> int:
        return len(self.row_bound)

    def row_matrix(self) -> sparse.csr_matrix:
        if not self.row_bound:
            return sparse.csr_matrix((0, self.num_vars))
        rows = np.concatenate([np.full(len(ix), r, dtype=np.intp)
                               for r, ix in enumerate(self.row_idx)])
        cols = np.concatenate(self.row_idx)
        data = np.concatenate(self.row_coef)
        return sparse.csr_matrix((data, (rows, cols)),
                                 shape=(len(self.row_bound), self.num_vars))


@dataclass
class SocBlock:
    """Affine image y (first entry the tail) constrained to ||y[1:]|| <= y[0].

    Row i of the image is offsets[i] + coeffs[i] @ x[indices[i]].
    """

    indices: list
    coeffs: list
    offsets: np.ndarray

    def dim(self) -> int:
        return len(self.offsets)


@dataclass
class ConeProgramSpec:
    """A LinearProgramSpec core plus second-order-cone blocks."""

    lp: LinearProgramSpec
    cones: list = field(default_factory=list)

    def add_cone(self, indices, coeffs, offsets) -> None:
        self.cones.append(SocBlock(indices=[np.asarray(i, dtype=np.intp) for i in indices],
                                   coeffs=[np.asarray(c, dtype=float) for c in coeffs],
                                   offsets=np.asarray(offsets, dtype=float)))


@dataclass
class SolveOutcome:
    status: str                     # optimal | infeasible | unbounded | numerical-failure
    x: np.ndarray | None
    objective: float | None
    max_violation: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _box_violation(spec: LinearProgramSpec, x: np.ndarray) -> float:
    lo = np.where(np.isfinite(spec.lower), spec.lower - x, -_INF)
    hi = np.where(np.isfinite(spec.upper), x - spec.upper, -_INF)
    worst = 0.0
    if lo.size:
        worst = max(worst, float(np.max(lo)), float(np.max(hi)))
    return worst


def _row_violation(spec: LinearProgramSpec, x: np.ndarray) -> float:
    if not spec.row_bound:
        return 0.0
    resid = spec.row_matrix() @ x - np.asarray(spec.row_bound)
    return max(0.0, float(np.max(resid)))


def solve_lp(spec: LinearProgramSpec, tol: float = DEFAULT_TOL) -> SolveOutcome:
    """Solve the LP; infeasible and unbounded outcomes come back as statuses."""
    if np.any(spec.lower > spec.upper):
        return SolveOutcome("infeasible", None, None, np.inf)
    res = optimize.linprog(
        -spec.objective,
        A_ub=spec.row_matrix() if spec.row_bound else None,
        b_ub=np.asarray(spec.row_bound) if spec.row_bound else None,
        bounds=np.column_stack([spec.lower, spec.upper]),
        method="highs",
        options={"primal_feasibility_tolerance": min(tol, 1e-8),
                 "dual_feasibility_tolerance": min(tol, 1e-8)},
    )
    if res.status == 2:
        return SolveOutcome("infeasible", None, None, np.inf)
    if res.status == 3:
        return SolveOutcome("unbounded", None, None, np.inf)
    if res.status != 0:
        return SolveOutcome("numerical-failure", None, None, np.inf)
    x = np.asarray(res.x)
    violation = max(_box_violation(spec, x), _row_violation(spec, x))
    return SolveOutcome("optimal", x, float(spec.objective @ x), violation)


def _assemble_conic(spec: ConeProgramSpec):
    lp = spec.lp
    rows_i, cols_i, data_i, rhs = [], [], [], []
    r = 0
    for idx, coef, b in zip(lp.row_idx, lp.row_coef, lp.row_bound):
        rows_i.append(np.full(len(idx), r))
        cols_i.append(idx)
        data_i.append(coef)
        rhs.append(b)
        r += 1
    for i in range(lp.num_vars):
        if np.isfinite(lp.upper[i]):
            rows_i.append([r]); cols_i.append([i]); data_i.append([1.0])
            rhs.append(lp.upper[i]); r += 1
        if np.isfinite(lp.lower[i]):
            rows_i.append([r]); cols_i.append([i]); data_i.append([-1.0])
            rhs.append(-lp.lower[i]); r += 1
    n_nonneg = r
    cones = [clarabel.NonnegativeConeT(n_nonneg)] if n_nonneg else []
    for blk in spec.cones:
        for irow in range(blk.dim()):
            idx = blk.indices[irow]
            if len(idx):
                rows_i.append(np.full(len(idx), r))
                cols_i.append(idx)
                data_i.append(-blk.coeffs[irow])
            rhs.append(blk.offsets[irow])
            r += 1
        cones.append(clarabel.SecondOrderConeT(blk.dim()))
    a = sparse.csc_matrix(
        (np.concatenate([np.asarray(d, dtype=float) for d in data_i]) if data_i else np.empty(0),
         (np.concatenate([np.asarray(x, dtype=np.intp) for x in rows_i]) if rows_i else np.empty(0, dtype=np.intp),
          np.concatenate([np.asarray(x, dtype=np.intp) for x in cols_i]) if cols_i else np.empty(0, dtype=np.intp))),
        shape=(r, lp.num_vars))
    return a, np.asarray(rhs, dtype=float), cones


def _cone_violation(spec: ConeProgramSpec, x: np.ndarray) -> float:
    worst = 0.0
    for blk in spec.cones:
        y = blk.offsets.copy()
        for irow in range(blk.dim()):
            idx = blk.indices[irow]
            if len(idx):
                y[irow] += blk.coeffs[irow] @ x[idx]
        worst = max(worst, float(np.linalg.norm(y[1:]) - y[0]))
    return max(0.0, worst)


def solve_socp(spec: ConeProgramSpec, tol: float = DEFAULT_TOL) -> SolveOutcome:
    """Solve the SOCP with Clarabel; statuses mirror :func:`solve_lp`."""
    lp = spec.lp
    if np.any(lp.lower > lp.upper):
        return SolveOutcome("infeasible", None, None, np.inf)
    a, b, cones = _assemble_conic(spec)
    p = sparse.csc_matrix((lp.num_vars, lp.num_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = min(tol, 1e-8)
    settings.tol_gap_abs = min(tol, 1e-8)
    settings.tol_gap_rel = min(tol, 1e-8)
    solver = clarabel.DefaultSolver(p, -lp.objective, a, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("SolverStatus.PrimalInfeasible", "PrimalInfeasible"):
        return SolveOutcome("infeasible", None, None, np.inf)
    if status in ("SolverStatus.DualInfeasible", "DualInfeasible"):
        return SolveOutcome("unbounded", None, None, np.inf)
    if status not in ("SolverStatus.Solved", "Solved",
                      "SolverStatus.AlmostSolved", "AlmostSolved"):
        return SolveOutcome("numerical-failure", None, None, np.inf)
    x = np.asarray(sol.x)
    violation = max(_box_violation(lp, x), _row_violation(lp, x),
                    _cone_violation(spec, x))
    return SolveOutcome("optimal", x, float(lp.objective @ x), violation)


# ---------------------------------------------------------------------------
# complex-to-real lifting
# ---------------------------------------------------------------------------

class ComplexLift:
    """Maps ``count`` complex slots onto interleaved (re, im) real variables.

    Slot n occupies real indices base + 2n (real part) and base + 2n + 1
    (imaginary part).  Provides the exact real bilinear form for Re{c^H v}
    and the unit-disc cone |v_n| <= 1 per slot.
    """

    def __init__(self, count: int, base: int = 0):
        self.count = count
        self.base = base

    @property
    def size(self) -> int:
        return 2 * self.count

    def re_index(self, n: int) -> int:
        return self.base + 2 * n

    def im_index(self, n: int) -> int:
        return self.base + 2 * n + 1

    def indices(self) -> np.ndarray:
        return self.base + np.arange(self.size)

    def real_inner(self, coeffs: np.ndarray):
        """Row (idx, coef) computing Re{coeffs^H v} over the lifted slots."""
        idx = self.indices()
        coef = np.empty(self.size)
        coef[0::2] = np.real(coeffs)
        coef[1::2] = np.imag(coeffs)
        return idx, coef

    def unit_disc(self, n: int) -> tuple:
        """Cone block arguments enforcing ||(re_n, im_n)|| <= 1."""
        indices = [np.empty(0, dtype=np.intp),
                   np.array([self.re_index(n)]), np.array([self.im_index(n)])]
        coeffs = [np.empty(0), np.array([1.0]), np.array([1.0])]
        offsets = np.array([1.0, 0.0, 0.0])
        return indices, coeffs, offsets

    def pack(self, values: np.ndarray) -> np.ndarray:
        out = np.empty(self.size)
        out[0::2] = np.real(values)
        out[1::2] = np.imag(values)
        return out

    def unpack(self, x: np.ndarray) -> np.ndarray:
        flat = x[self.base:self.base + self.size]
        return flat[0::2] + 1j * flat[1::2]


def lift_complex(count: int, base: int = 0) -> ComplexLift:
    """Real-variable layout and constraint builders for complex slots."""
    return ComplexLift(count, base)


def dump_spec(spec, path) -> None:
    """Write a program spec as JSON for offline cross-checking."""
    lp = spec.lp if isinstance(spec, ConeProgramSpec) else spec
    doc = {"num_vars": lp.num_vars,
           "objective": lp.objective.tolist(),
           "lower": lp.lower.tolist(),
           "upper": lp.upper.tolist(),
           "rows": [{"idx": i.tolist(), "coef": c.tolist(), "bound": b}
                    for i, c, b in zip(lp.row_idx, lp.row_coef, lp.row_bound)]}
    if isinstance(spec, ConeProgramSpec):
        doc["cones"] = [{"indices": [i.tolist() for i in blk.indices],
                         "coeffs": [c.tolist() for c in blk.coeffs],
                         "offsets": blk.offsets.tolist()} for blk in spec.cones]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
