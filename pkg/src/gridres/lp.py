"""Sparse linear programs and a deterministic bounded-variable simplex solver.

Every optimization in the toolkit lowers to a :class:`LinearProgram`: a list of
bounded variables, a minimize objective, and sparse constraint rows with
relations in {<=, =, >=}.  The built-in solver is a two-phase primal simplex in
bounded-variable form.  It is fully deterministic: identical inputs produce
bitwise-identical outputs.  A scipy/HiGHS backend can be selected through
:class:`SolverOptions` for large problems; the built-in simplex remains the
reference implementation and the one exercised by the oracle tests.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

try:  # in-place rank-1 update; ~2x faster than np.outer on big tableaus
    from scipy.linalg.blas import dger as _dger
except ImportError:  # pragma: no cover
    _dger = None


class Rel(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class MalformedProblem(ValueError):
    """The LP violates a structural invariant (dangling index, NaN, bad bounds)."""


class IterationLimitExceeded(RuntimeError):
    """The simplex hit its iteration cap before proving optimality."""

    def __init__(self, iterations: int, phase: int):
        self.iterations = iterations
        self.phase = phase
        super().__init__(
            f"simplex iteration limit reached after {iterations} iterations (phase {phase})"
        )


class DimensionMismatch(ValueError):
    pass


@dataclass
class Row:
    coeffs: dict[int, float]
    rel: Rel
    rhs: float
    tag: str = ""


@dataclass
class SolverOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    pivot_tol: float = 1e-9
    max_iterations: int | None = None
    # "dantzig": most-negative reduced cost, lowest index on ties; falls back
    # to Bland's rule after a degenerate stall.  "bland": pure Bland.
    pricing: str = "dantzig"
    backend: str = "simplex"  # or "scipy"
    bland_stall: int = 40
    refine: bool = True


class LinearProgram:
    """Minimize c.x subject to sparse rows and variable bounds.

    Treat an instance as frozen once it has been handed to :func:`solve`;
    the solver never mutates it and instances are safe to share read-only.
    """

    def __init__(self) -> None:
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.objective: dict[int, float] = {}
        self.rows: list[Row] = []
        self._name_to_idx: dict[str, int] = {}

    @property
    def n_variables(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_variable(self, name: str, lower: float = -math.inf, upper: float = math.inf) -> int:
        if name in self._name_to_idx:
            raise MalformedProblem(f"duplicate variable name {name!r}")
        if math.isnan(lower) or math.isnan(upper):
            raise MalformedProblem(f"NaN bound on variable {name!r}")
        if lower > upper:
            raise MalformedProblem(f"lower > upper on variable {name!r} ({lower} > {upper})")
        idx = len(self.names)
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self._name_to_idx[name] = idx
        return idx

    def index_of(self, name: str) -> int:
        return self._name_to_idx[name]

    def set_bounds(self, idx: int, lower: float, upper: float) -> None:
        if lower > upper:
            raise MalformedProblem(f"lower > upper on variable {self.names[idx]!r}")
        self.lower[idx] = float(lower)
        self.upper[idx] = float(upper)

    def add_objective_term(self, idx: int, coeff: float) -> None:
        self.objective[idx] = self.objective.get(idx, 0.0) + float(coeff)

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.objective = {int(k): float(v) for k, v in coeffs.items()}

    def add_row(self, coeffs: dict[int, float], rel: Rel, rhs: float, tag: str = "") -> int:
        merged: dict[int, float] = {}
        for k, v in coeffs.items():
            merged[int(k)] = merged.get(int(k), 0.0) + float(v)
        self.rows.append(Row(merged, Rel(rel), float(rhs), tag))
        return len(self.rows) - 1

    def validate(self) -> None:
        n = self.n_variables
        for idx, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if math.isnan(lo) or math.isnan(hi):
                raise MalformedProblem(f"NaN bound on variable {self.names[idx]!r}")
            if lo > hi:
                raise MalformedProblem(f"lower > upper on variable {self.names[idx]!r}")
        for idx, coeff in self.objective.items():
            if not 0 <= idx < n:
                raise MalformedProblem(f"objective references unknown variable index {idx}")
            if not math.isfinite(coeff):
                raise MalformedProblem(f"non-finite objective coefficient on index {idx}")
        for ri, row in enumerate(self.rows):
            if not math.isfinite(row.rhs):
                raise MalformedProblem(f"non-finite rhs on row {ri}")
            for idx, coeff in row.coeffs.items():
                if not 0 <= idx < n:
                    raise MalformedProblem(f"row {ri} references unknown variable index {idx}")
                if not math.isfinite(coeff):
                    raise MalformedProblem(f"non-finite coefficient on row {ri}, index {idx}")

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_variables)
        for idx, coeff in self.objective.items():
            c[idx] = coeff
        return c

    def to_lp_text(self, name: str = "problem") -> str:
        """Render in CPLEX-LP style text for cross-checking with external solvers."""

        def var(idx: int) -> str:
            raw = self.names[idx]
            return raw.replace("[", "(").replace("]", ")").replace(",", "_").replace(" ", "")

        def terms(coeffs: dict[int, float]) -> str:
            parts = []
            for idx in sorted(coeffs):
                v = coeffs[idx]
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {abs(v):.17g} {var(idx)}")
            text = " ".join(parts) if parts else "0"
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ {name}", "Minimize", f" obj: {terms(self.objective)}", "Subject To"]
        for ri, row in enumerate(self.rows):
            lines.append(f" c{ri}: {terms(row.coeffs)} {row.rel.value} {row.rhs:.17g}")
        lines.append("Bounds")
        for idx in range(self.n_variables):
            lo, hi = self.lower[idx], self.upper[idx]
            if lo == hi:
                lines.append(f" {var(idx)} = {lo:.17g}")
            elif lo == -math.inf and hi == math.inf:
                lines.append(f" {var(idx)} free")
            elif hi == math.inf:
                lines.append(f" {var(idx)} >= {lo:.17g}")
            elif lo == -math.inf:
                lines.append(f" -inf <= {var(idx)} <= {hi:.17g}")
            else:
                lines.append(f" {lo:.17g} <= {var(idx)} <= {hi:.17g}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: LpStatus
    values: np.ndarray | None = None
    objective_value: float | None = None
    iterations: int = 0
    # rows whose phase-1 artificial stayed positive; an infeasibility certificate
    infeasible_rows: list[int] = field(default_factory=list)


@dataclass
class FeasibilityReport:
    max_row_residual: float
    max_bound_violation: float
    violations: list[tuple[int, float]]  # (row index, positive residual)

    def ok(self, tol: float) -> bool:
        return self.max_row_residual <= tol and self.max_bound_violation <= tol


def check_feasibility(lp: LinearProgram, point: np.ndarray, tol: float = 0.0) -> FeasibilityReport:
    """Evaluate every row and bound of `lp` at `point`.

    Residuals are one-sided: satisfied rows contribute 0, an equality row
    contributes its absolute mismatch.  Rows with residual > `tol` are listed.
    """
    point = np.asarray(point, dtype=float)
    if point.shape != (lp.n_variables,):
        raise DimensionMismatch(
            f"point has shape {point.shape}, expected ({lp.n_variables},)"
        )
    violations = []
    max_row = 0.0
    for ri, row in enumerate(lp.rows):
        ax = sum(point[idx] * coeff for idx, coeff in row.coeffs.items())
        if row.rel is Rel.LE:
            resid = ax - row.rhs
        elif row.rel is Rel.GE:
            resid = row.rhs - ax
        else:
            resid = abs(ax - row.rhs)
        resid = max(resid, 0.0)
        max_row = max(max_row, resid)
        if resid > tol:
            violations.append((ri, resid))
    lo = np.array(lp.lower)
    hi = np.array(lp.upper)
    bound_viol = np.maximum(lo - point, point - hi)
    max_bound = float(max(bound_viol.max(initial=0.0), 0.0))
    return FeasibilityReport(max_row, max_bound, violations)


def solve(lp: LinearProgram, options: SolverOptions | None = None) -> LpSolution:
    """Solve `lp` to optimality, infeasibility, or unboundedness.

    Optimal solutions satisfy all rows and bounds to `feas_tol` and are optimal
    to `opt_tol`.  Deterministic: repeated calls on equal inputs return
    bitwise-equal values.  Raises :class:`MalformedProblem` on structural
    defects and :class:`IterationLimitExceeded` rather than ever returning a
    silently suboptimal "optimal".
    """
    options = options or SolverOptions()
    lp.validate()
    if options.backend == "scipy":
        return _solve_scipy(lp, options)
    if options.backend != "simplex":
        raise ValueError(f"unknown solver backend {options.backend!r}")
    return _BoundedSimplex(lp, options).run()


# status codes for nonbasic/basic variables
_BASIC = 0
_AT_LO = 1
_AT_HI = 2
_FREE = 3
_FIXED = 4


class _BoundedSimplex:
    """Two-phase primal simplex over variables with general bounds.

    Columns are the structural variables followed by one slack per inequality
    row (LE slack in [0, inf), GE slack in (-inf, 0]).  Rows that cannot start
    with a feasible slack get a phase-1 artificial; artificial columns are
    never stored since artificials may only leave the basis.
    """

    def __init__(self, lp: LinearProgram, opt: SolverOptions):
        self.lp = lp
        self.opt = opt
        n = lp.n_variables
        m = lp.n_rows
        self.n = n
        self.m = m

        slack_cols = [i for i, row in enumerate(lp.rows) if row.rel is not Rel.EQ]
        self.slack_of_row = {ri: n + j for j, ri in enumerate(slack_cols)}
        N = n + len(slack_cols)
        self.N = N

        self.lo = np.full(N, -np.inf)
        self.hi = np.full(N, np.inf)
        self.lo[:n] = lp.lower
        self.hi[:n] = lp.upper
        for ri, col in self.slack_of_row.items():
            if lp.rows[ri].rel is Rel.LE:
                self.lo[col], self.hi[col] = 0.0, np.inf
            else:
                self.lo[col], self.hi[col] = -np.inf, 0.0

        # tableau in Fortran order so the BLAS rank-1 update runs in place
        T = np.zeros((m, N), order="F")
        for ri, row in enumerate(lp.rows):
            for idx, coeff in row.coeffs.items():
                T[ri, idx] += coeff
            if ri in self.slack_of_row:
                T[ri, self.slack_of_row[ri]] = 1.0
        self.T = T
        self.b = np.array([row.rhs for row in lp.rows], dtype=float)

        self.c = np.zeros(N)
        for idx, coeff in lp.objective.items():
            self.c[idx] = coeff

        self.status = np.empty(N, dtype=np.int8)
        self.xval = np.zeros(N)
        for j in range(N):
            lo, hi = self.lo[j], self.hi[j]
            if lo == hi:
                self.status[j] = _FIXED
                self.xval[j] = lo
            elif math.isfinite(lo) and math.isfinite(hi):
                self.status[j] = _AT_LO if abs(lo) <= abs(hi) else _AT_HI
                self.xval[j] = lo if self.status[j] == _AT_LO else hi
            elif math.isfinite(lo):
                self.status[j] = _AT_LO
                self.xval[j] = lo
            elif math.isfinite(hi):
                self.status[j] = _AT_HI
                self.xval[j] = hi
            else:
                self.status[j] = _FREE
                self.xval[j] = 0.0

        self.basis = np.full(m, -1, dtype=np.int64)  # column index, or -1 = artificial
        self.art_sign = np.zeros(m)
        self.x_B = np.zeros(m)
        self.iterations = 0

    # -- setup ----------------------------------------------------------------

    def _initial_basis(self) -> None:
        r = self.b - self.T @ self.xval
        for ri in range(self.m):
            col = self.slack_of_row.get(ri)
            ok = False
            if col is not None:
                rel = self.lp.rows[ri].rel
                ok = (rel is Rel.LE and r[ri] >= 0.0) or (rel is Rel.GE and r[ri] <= 0.0)
            if ok:
                self.basis[ri] = col
                self.status[col] = _BASIC
                self.x_B[ri] = r[ri]
            else:
                self.basis[ri] = -1
                self.art_sign[ri] = 1.0 if r[ri] >= 0.0 else -1.0
                self.x_B[ri] = abs(r[ri])
                if self.art_sign[ri] < 0.0:
                    # the tableau is B^-1 [A | slacks]; a sign-flipped artificial
                    # contributes a -1 diagonal to B, so its row negates
                    self.T[ri, :] *= -1.0

    # -- pricing ---------------------------------------------------------------

    def _entering(self, zrow: np.ndarray, bland: bool) -> tuple[int, int] | None:
        tol = self.opt.opt_tol
        st = self.status
        gain = np.zeros(self.N)
        at_lo = st == _AT_LO
        at_hi = st == _AT_HI
        free = st == _FREE
        gain[at_lo] = -zrow[at_lo]
        gain[at_hi] = zrow[at_hi]
        gain[free] = np.abs(zrow[free])
        if bland:
            elig = gain > tol
            if not elig.any():
                return None
            j = int(np.argmax(elig))
        else:
            j = int(np.argmax(gain))
            if gain[j] <= tol:
                return None
        if st[j] == _AT_HI or (st[j] == _FREE and zrow[j] > 0.0):
            return j, -1
        return j, +1

    # -- core loop ---------------------------------------------------------------

    def run(self) -> LpSolution:
        self._initial_basis()
        max_iter = self.opt.max_iterations or (50 * (self.m + self.N) + 1000)

        art_rows = self.basis == -1
        if art_rows.any():
            # phase 1: minimize total artificial infeasibility.  Rows are
            # already B^-1-scaled, so the artificial block is the identity.
            zrow = -(art_rows.astype(float)) @ self.T
            outcome = self._iterate(zrow, phase=1, max_iter=max_iter)
            if outcome is not None:  # unbounded phase 1 means numerical trouble
                raise ArithmeticError("phase-1 simplex claimed unbounded; problem is corrupt")
            p1 = float(self.x_B[self.basis == -1].sum()) if (self.basis == -1).any() else 0.0
            if p1 > self.opt.feas_tol:
                bad = [
                    ri
                    for ri in range(self.m)
                    if self.basis[ri] == -1 and self.x_B[ri] > self.opt.feas_tol
                ]
                return LpSolution(LpStatus.INFEASIBLE, iterations=self.iterations,
                                  infeasible_rows=bad)

        # phase 2: original objective; leftover artificials pinned at zero
        self.phase2 = True
        cB = np.where(self.basis >= 0, self.c[np.maximum(self.basis, 0)], 0.0)
        zrow = self.c - cB @ self.T
        outcome = self._iterate(zrow, phase=2, max_iter=max_iter)
        if outcome == "unbounded":
            return LpSolution(LpStatus.UNBOUNDED, iterations=self.iterations)
        return self._finish()

    def _iterate(self, zrow: np.ndarray, phase: int, max_iter: int) -> str | None:
        piv_tol = self.opt.pivot_tol
        art_hi = np.inf if phase == 1 else 0.0
        bland = self.opt.pricing == "bland"
        stall = 0

        while True:
            if phase == 1:
                # stop as soon as the infeasibility is eliminated
                art = self.basis == -1
                if not art.any() or float(np.maximum(self.x_B[art], 0.0).sum()) <= self.opt.feas_tol * 0.5:
                    return None
            pick = self._entering(zrow, bland or stall > self.opt.bland_stall)
            if pick is None:
                return None
            j, sigma = pick
            self.iterations += 1
            if self.iterations > max_iter:
                raise IterationLimitExceeded(self.iterations, phase)

            col = np.array(self.T[:, j])
            w = sigma * col

            basis = self.basis
            real = basis >= 0
            safe = np.maximum(basis, 0)
            lo_B = np.where(real, self.lo[safe], 0.0)
            hi_B = np.where(real, self.hi[safe], art_hi)

            t_rows = np.full(self.m, np.inf)
            pos = w > piv_tol
            neg = w < -piv_tol
            if pos.any():
                t_rows[pos] = (self.x_B[pos] - lo_B[pos]) / w[pos]
            if neg.any():
                t_rows[neg] = (self.x_B[neg] - hi_B[neg]) / w[neg]
            np.maximum(t_rows, 0.0, out=t_rows)
            t_min = float(t_rows.min()) if self.m else np.inf

            lo_j, hi_j = self.lo[j], self.hi[j]
            t_bound = hi_j - lo_j if (math.isfinite(lo_j) and math.isfinite(hi_j)) else np.inf

            if t_bound <= t_min:
                if not math.isfinite(t_bound):
                    return "unbounded"
                # bound flip: no basis change
                self.x_B -= w * t_bound
                if self.status[j] == _AT_LO:
                    self.status[j] = _AT_HI
                    self.xval[j] = hi_j
                else:
                    self.status[j] = _AT_LO
                    self.xval[j] = lo_j
                stall = stall + 1 if t_bound <= 1e-11 else 0
                continue
            if not math.isfinite(t_min):
                return "unbounded"

            # leaving row: Bland order with artificials ranked first
            tie = t_rows <= t_min + 1e-10 * (1.0 + t_min)
            keys = np.where(tie, np.where(real, basis, -1), np.iinfo(np.int64).max)
            r = int(np.argmin(keys))

            enter_val = self.xval[j] + sigma * t_min
            self.x_B -= w * t_min
            leave = basis[r]
            if leave >= 0:
                if w[r] > 0:
                    self.status[leave] = _AT_LO
                    self.xval[leave] = lo_B[r]
                else:
                    self.status[leave] = _AT_HI
                    self.xval[leave] = hi_B[r]
            self.basis[r] = j
            self.status[j] = _BASIC
            self.x_B[r] = enter_val

            piv = self.T[r, j]
            trow = self.T[r, :] / piv
            col[r] = 0.0
            if _dger is not None:
                self.T = _dger(-1.0, col, trow, a=self.T, overwrite_a=1)
            else:  # pragma: no cover
                self.T -= np.outer(col, trow)
            self.T[r, :] = trow
            self.T[:, j] = 0.0
            self.T[r, j] = 1.0
            zj = zrow[j]
            if zj != 0.0:
                zrow -= zj * trow
            zrow[j] = 0.0

            stall = stall + 1 if t_min <= 1e-11 else 0

    # -- wrap-up ---------------------------------------------------------------

    def _assemble(self) -> np.ndarray:
        x = self.xval.copy()
        real = self.basis >= 0
        x[self.basis[real]] = self.x_B[real]
        return x

    def _finish(self) -> LpSolution:
        x = self._assemble()
        report = check_feasibility(self.lp, x[: self.n])
        if not report.ok(self.opt.feas_tol) and self.opt.refine:
            x = self._refine()
            report = check_feasibility(self.lp, x[: self.n])
        if not report.ok(self.opt.feas_tol):
            raise ArithmeticError(
                "simplex finished with residual "
                f"{max(report.max_row_residual, report.max_bound_violation):.3e} > feas_tol"
            )
        values = x[: self.n].copy()
        obj = float(np.dot(self.c[: self.n], values))
        return LpSolution(LpStatus.OPTIMAL, values=values, objective_value=obj,
                          iterations=self.iterations)

    def _refine(self) -> np.ndarray:
        """Recompute basic values exactly from the original columns."""
        m = self.m
        row_of_slack = {scol: ri for ri, scol in self.slack_of_row.items()}
        col_entries: dict[int, list[tuple[int, float]]] = {}
        for ri, row in enumerate(self.lp.rows):
            for idx, coeff in row.coeffs.items():
                col_entries.setdefault(idx, []).append((ri, coeff))
        B = np.zeros((m, m))
        for pos in range(m):
            colid = int(self.basis[pos])
            if colid == -1:
                B[pos, pos] = self.art_sign[pos]
            elif colid >= self.n:  # slack
                B[row_of_slack[colid], pos] = 1.0
            else:
                for ri, coeff in col_entries.get(colid, ()):
                    B[ri, pos] = coeff
        xn = self.xval.copy()
        real = self.basis >= 0
        xn[self.basis[real]] = 0.0
        rhs = self.b - self.T0_dot(xn)
        try:
            xb = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            return self._assemble()
        self.x_B = xb
        return self._assemble()

    def T0_dot(self, x: np.ndarray) -> np.ndarray:
        """Original-constraint matrix times x (structurals and slacks)."""
        out = np.zeros(self.m)
        for ri, row in enumerate(self.lp.rows):
            acc = 0.0
            for idx, coeff in row.coeffs.items():
                acc += coeff * x[idx]
            col = self.slack_of_row.get(ri)
            if col is not None:
                acc += x[col]
            out[ri] = acc
        return out


def _solve_scipy(lp: LinearProgram, options: SolverOptions) -> LpSolution:
    from scipy.optimize import linprog
    from scipy.sparse import lil_matrix

    n = lp.n_variables
    ub_rows = [(r, 1.0) for r in lp.rows if r.rel is Rel.LE]
    ub_rows += [(r, -1.0) for r in lp.rows if r.rel is Rel.GE]
    eq_rows = [r for r in lp.rows if r.rel is Rel.EQ]

    def matrix(rows):
        A = lil_matrix((len(rows), n))
        b = np.zeros(len(rows))
        for i, item in enumerate(rows):
            row, sign = item if isinstance(item, tuple) else (item, 1.0)
            for idx, coeff in row.coeffs.items():
                A[i, idx] = sign * coeff
            b[i] = sign * row.rhs
        return A.tocsr(), b

    A_ub, b_ub = matrix(ub_rows) if ub_rows else (None, None)
    A_eq, b_eq = matrix(eq_rows) if eq_rows else (None, None)
    bounds = [(lo if math.isfinite(lo) else None, hi if math.isfinite(hi) else None)
              for lo, hi in zip(lp.lower, lp.upper)]
    res = linprog(lp.objective_vector(), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 0:
        return LpSolution(LpStatus.OPTIMAL, values=np.asarray(res.x),
                          objective_value=float(res.fun), iterations=int(res.nit))
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    raise ArithmeticError(f"scipy backend failed: {res.message}")
