"""Semidefinite feasibility layer: matrix variables, affine matrix
expressions, margin-maximizing solves, and solver-independent verification.

Expressions are sums of ``L @ X @ R`` terms (with optional transpose on
the variable) plus entry-scaled terms ``X[i, j] * coeff``; this is
enough to assemble both the analysis and the synthesis inequalities.
The actual cone solve is delegated to cvxpy; every solution is
re-checked afterwards with a dense eigendecomposition so solver
tolerance quirks cannot slip through.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import SolverFailureError

__all__ = [
    "MatrixVariable",
    "AffineExpr",
    "const_expr",
    "var_expr",
    "entry_expr",
    "block_expr",
    "MatrixInequality",
    "ScalarConstraint",
    "LmiProblem",
    "LmiSolution",
    "SolverConfig",
    "solve",
    "verify",
    "VerificationReport",
]


@dataclass(frozen=True)
class MatrixVariable:
    name: str
    rows: int
    cols: int
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.rows != self.cols:
            raise ValueError("symmetric variables must be square")


@dataclass(frozen=True)
class _MatTerm:
    """``left @ op(X) @ right`` with ``op`` optionally the transpose."""

    var: str
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False


@dataclass(frozen=True)
class _EntryTerm:
    """``X[i, j] * coeff`` for scalar couplings such as filter coefficients."""

    var: str
    i: int
    j: int
    coeff: np.ndarray


class AffineExpr:
    """Affine matrix expression over named matrix variables."""

    def __init__(self, shape, const=None, terms=()):
        self.shape = (int(shape[0]), int(shape[1]))
        if const is None:
            const = np.zeros(self.shape)
        self.const = np.asarray(const, dtype=float).reshape(self.shape)
        self.terms = list(terms)

    # -- algebra ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            other = const_expr(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return AffineExpr(self.shape, self.const + other.const,
                          self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            other = const_expr(other)
        return self + (-other)

    def scale(self, a: float) -> "AffineExpr":
        terms = []
        for t in self.terms:
            if isinstance(t, _MatTerm):
                terms.append(_MatTerm(t.var, a * t.left, t.right, t.transpose))
            else:
                terms.append(_EntryTerm(t.var, t.i, t.j, a * t.coeff))
        return AffineExpr(self.shape, a * self.const, terms)

    def left_mul(self, L: np.ndarray) -> "AffineExpr":
        L = np.atleast_2d(np.asarray(L, dtype=float))
        terms = []
        for t in self.terms:
            if isinstance(t, _MatTerm):
                terms.append(_MatTerm(t.var, L @ t.left, t.right, t.transpose))
            else:
                terms.append(_EntryTerm(t.var, t.i, t.j, L @ t.coeff))
        return AffineExpr((L.shape[0], self.shape[1]), L @ self.const, terms)

    def right_mul(self, R: np.ndarray) -> "AffineExpr":
        R = np.atleast_2d(np.asarray(R, dtype=float))
        terms = []
        for t in self.terms:
            if isinstance(t, _MatTerm):
                terms.append(_MatTerm(t.var, t.left, t.right @ R, t.transpose))
            else:
                terms.append(_EntryTerm(t.var, t.i, t.j, t.coeff @ R))
        return AffineExpr((self.shape[0], R.shape[1]), self.const @ R, terms)

    @property
    def T(self) -> "AffineExpr":
        terms = []
        for t in self.terms:
            if isinstance(t, _MatTerm):
                terms.append(_MatTerm(t.var, t.right.T, t.left.T, not t.transpose))
            else:
                terms.append(_EntryTerm(t.var, t.i, t.j, t.coeff.T))
        return AffineExpr((self.shape[1], self.shape[0]), self.const.T, terms)

    def sym(self) -> "AffineExpr":
        """``X + X^T`` (used to symmetrize supply-rate couplings)."""
        return self + self.T

    # -- evaluation -------------------------------------------------------

    def evaluate(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for t in self.terms:
            X = np.asarray(values[t.var], dtype=float)
            if isinstance(t, _MatTerm):
                out += t.left @ (X.T if t.transpose else X) @ t.right
            else:
                out += X[t.i, t.j] * t.coeff
        return out

    def to_cvxpy(self, varmap: dict):
        import cvxpy as cp

        out = self.const
        for t in self.terms:
            X = varmap[t.var]
            if isinstance(t, _MatTerm):
                out = out + t.left @ (X.T if t.transpose else X) @ t.right
            else:
                out = out + X[t.i, t.j] * t.coeff
        return out

    def variables(self) -> set:
        return {t.var for t in self.terms}


def const_expr(M) -> AffineExpr:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return AffineExpr(M.shape, M)


def var_expr(v: MatrixVariable, left=None, right=None,
             transpose: bool = False) -> AffineExpr:
    """``left @ op(v) @ right`` as an expression (identity paddings by default)."""
    rows = v.cols if transpose else v.rows
    cols = v.rows if transpose else v.cols
    L = np.eye(rows) if left is None else np.atleast_2d(np.asarray(left, dtype=float))
    R = np.eye(cols) if right is None else np.atleast_2d(np.asarray(right, dtype=float))
    if L.shape[1] != rows or R.shape[0] != cols:
        raise ValueError("padding shapes do not match variable")
    return AffineExpr((L.shape[0], R.shape[1]),
                      terms=[_MatTerm(v.name, L, R, transpose)])


def entry_expr(v: MatrixVariable, i: int, j: int, coeff) -> AffineExpr:
    coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
    return AffineExpr(coeff.shape, terms=[_EntryTerm(v.name, i, j, coeff)])


def block_expr(rows: Sequence[Sequence]) -> AffineExpr:
    """Assemble a block matrix of expressions and/or constant arrays."""
    rows = [[e if isinstance(e, AffineExpr) else const_expr(e) for e in row]
            for row in rows]
    row_h = [row[0].shape[0] for row in rows]
    col_w = [e.shape[1] for e in rows[0]]
    total = (sum(row_h), sum(col_w))
    out = AffineExpr(total)
    r0 = 0
    for i, row in enumerate(rows):
        c0 = 0
        for j, e in enumerate(row):
            if e.shape != (row_h[i], col_w[j]):
                raise ValueError(f"block ({i},{j}) shape {e.shape} inconsistent")
            emb_l = np.zeros((total[0], e.shape[0]))
            emb_l[r0 : r0 + e.shape[0], :] = np.eye(e.shape[0])
            emb_r = np.zeros((e.shape[1], total[1]))
            emb_r[:, c0 : c0 + e.shape[1]] = np.eye(e.shape[1])
            out = out + e.left_mul(emb_l).right_mul(emb_r)
            c0 += col_w[j]
        r0 += row_h[i]
    return out


# ---------------------------------------------------------------------------
# problems and solutions
# ---------------------------------------------------------------------------


@dataclass
class MatrixInequality:
    """``expr << 0`` or ``expr >> 0`` (strict via margin or fixed floor)."""

    name: str
    expr: AffineExpr
    sense: str  # "<<0" or ">>0"
    margin: bool = True
    floor: float = 0.0

    def __post_init__(self):
        if self.sense not in ("<<0", ">>0"):
            raise ValueError("sense must be '<<0' or '>>0'")
        if self.expr.shape[0] != self.expr.shape[1]:
            raise ValueError("matrix inequalities must be square")


@dataclass
class ScalarConstraint:
    """Scalar affine constraint ``expr <= 0``, ``expr >= 0`` or ``expr == 0``."""

    name: str
    expr: AffineExpr
    sense: str

    def __post_init__(self):
        if self.expr.shape != (1, 1):
            raise ValueError("scalar constraints must be 1x1")
        if self.sense not in ("<=0", ">=0", "==0"):
            raise ValueError("bad sense")


@dataclass
class LmiProblem:
    variables: list
    matrix_ineqs: list = field(default_factory=list)
    scalar_cons: list = field(default_factory=list)
    objective: object = "margin"  # "margin" | "feasibility" | ("minimize", expr)

    def dump(self) -> str:
        """Plain-text listing of the assembled problem (debugging aid)."""
        lines = ["variables:"]
        for v in self.variables:
            kind = "sym" if v.symmetric else "rect"
            lines.append(f"  {v.name}: {v.rows}x{v.cols} ({kind})")
        lines.append("matrix inequalities:")
        for c in self.matrix_ineqs:
            lines.append(f"  {c.name}: {c.expr.shape[0]}x{c.expr.shape[1]} "
                         f"{c.sense} margin={c.margin} floor={c.floor}")
            lines.append(f"    const:\n{np.array_str(c.expr.const, precision=4)}")
            for t in c.expr.terms:
                if isinstance(t, _MatTerm):
                    op = f"{t.var}^T" if t.transpose else t.var
                    lines.append(f"    + L @ {op} @ R, L {t.left.shape}, R {t.right.shape}")
                else:
                    lines.append(f"    + {t.var}[{t.i},{t.j}] * coeff {t.coeff.shape}")
        lines.append("scalar constraints:")
        for c in self.scalar_cons:
            lines.append(f"  {c.name}: {c.sense}")
        return "\n".join(lines)


@dataclass
class LmiSolution:
    status: str  # "feasible" | "infeasible" | "numerical-failure"
    values: dict
    margin: float
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


@dataclass
class SolverConfig:
    solver: str = "CLARABEL"
    fallback: str = "SCS"
    eps_min: float = 1e-7
    margin_cap: float = 1e3
    margin_mode: bool = True
    max_iters: int = 200000
    verbose: bool = False
    regularize: float = 0.0  # > 0: re-solve at a fixed fraction of the
    #                          achieved margin, minimizing variable norms
    #                          (keeps reconstruction well conditioned)


def solve(problem: LmiProblem, config: SolverConfig | None = None) -> LmiSolution:
    """Solve the feasibility/margin problem on a conic backend.

    In margin mode every strict inequality ``X << 0`` is encoded as
    ``X <= -t I`` with ``t`` maximized (``t`` may be negative, so the
    cone program itself is always feasible; the sign of the optimum
    decides feasibility of the strict system).  Feasibility holds when
    ``t >= eps_min``.
    """
    import cvxpy as cp

    config = config or SolverConfig()
    varmap = {}
    for v in problem.variables:
        varmap[v.name] = cp.Variable((v.rows, v.cols), name=v.name,
                                     symmetric=v.symmetric)

    t = cp.Variable(name="margin") if config.margin_mode else None
    cons = []
    if t is not None:
        cons.append(t <= config.margin_cap)

    for mi in problem.matrix_ineqs:
        expr = mi.expr.to_cvxpy(varmap)
        eye = np.eye(mi.expr.shape[0])
        if mi.margin:
            bound = t * eye if t is not None else config.eps_min * eye
        else:
            bound = mi.floor * eye
        if mi.sense == "<<0":
            cons.append(expr << -bound)
        else:
            cons.append(expr >> bound)

    for sc in problem.scalar_cons:
        expr = sc.expr.to_cvxpy(varmap)
        if sc.sense == "<=0":
            cons.append(expr <= 0)
        elif sc.sense == ">=0":
            cons.append(expr >= 0)
        else:
            cons.append(expr == 0)

    if problem.objective == "margin" and t is not None:
        objective = cp.Maximize(t)
    elif isinstance(problem.objective, tuple) and problem.objective[0] == "minimize":
        objective = cp.Minimize(problem.objective[1].to_cvxpy(varmap))
    else:
        objective = cp.Minimize(0)

    def extract():
        values = {}
        for v in problem.variables:
            val = varmap[v.name].value
            if val is None:
                return None
            val = np.asarray(val, dtype=float).reshape(v.rows, v.cols)
            if v.symmetric:
                val = 0.5 * (val + val.T)
            values[v.name] = val
        return values

    prob = cp.Problem(objective, cons)
    err = None
    attempts = []
    infeasible_flag = False
    for solver in (config.solver, config.fallback):
        if solver is None:
            continue
        try:
            prob.solve(solver=solver, verbose=config.verbose)
            margin = (float(t.value) if t is not None and t.value is not None
                      else config.eps_min)
            attempts.append((prob.status, solver, margin, extract()))
            if prob.status in ("infeasible", "infeasible_inaccurate"):
                infeasible_flag = True
            if prob.status == "optimal":
                break
        except (cp.SolverError, Exception) as e:  # cvxpy wraps backend errors loosely
            err = e

    chosen = None
    for want in ("optimal", "optimal_inaccurate"):
        chosen = next((a for a in attempts if a[0] == want and a[3] is not None),
                      None)
        if chosen:
            break
    if chosen is None:
        info = {"solver_status": attempts[-1][0] if attempts else None,
                "error": repr(err)}
        status = "infeasible" if infeasible_flag else "numerical-failure"
        return LmiSolution(status, {}, -np.inf, info)

    status, solver_used, margin, values = chosen
    info = {"solver_status": status, "solver": solver_used}
    feasible = margin >= config.eps_min if config.margin_mode else True

    if feasible and config.regularize > 0.0 and t is not None:
        # second pass: hold a fraction of the margin, shrink the variables;
        # margin-optimal solutions can be arbitrarily large along flat
        # directions, which wrecks downstream matrix inverses
        hold = min(margin, max(min(margin, 1.0) * config.regularize,
                               config.eps_min))
        reg_cons = cons + [t >= hold]
        reg_obj = cp.Minimize(sum(cp.sum_squares(varmap[v.name])
                                  for v in problem.variables))
        reg_prob = cp.Problem(reg_obj, reg_cons)
        try:
            reg_prob.solve(solver=solver_used, verbose=config.verbose)
            if reg_prob.status in ("optimal", "optimal_inaccurate"):
                reg_values = extract()
                if reg_values is not None:
                    values = reg_values
                    margin = float(t.value)
                    info["regularized"] = True
        except Exception:
            pass

    return LmiSolution("feasible" if feasible else "infeasible", values,
                       margin, info)


@dataclass
class VerificationReport:
    ok: bool
    constraint_margins: dict
    worst: float
    margin_consistent: bool

    def __bool__(self):
        return self.ok


def verify(solution: LmiSolution, problem: LmiProblem,
           tol: float = 1e-7) -> VerificationReport:
    """Re-check every constraint with dense eigenvalue computations.

    Margins are reported per constraint as the distance (in the correct
    direction) from the zero boundary; margined constraints must clear
    the reported solver margin up to ``tol``.
    """
    if not solution.feasible:
        return VerificationReport(False, {}, -np.inf, False)
    margins = {}
    worst = np.inf
    for mi in problem.matrix_ineqs:
        M = mi.expr.evaluate(solution.values)
        M = 0.5 * (M + M.T)
        eigs = np.linalg.eigvalsh(M)
        m = -eigs[-1] if mi.sense == "<<0" else eigs[0]
        if not mi.margin:
            m -= mi.floor
        margins[mi.name] = m
        worst = min(worst, m)
    ok = worst > -tol
    margined = [m for mi, m in zip(problem.matrix_ineqs, margins.values())
                if mi.margin]
    if margined and solution.margin > -np.inf:
        margin_consistent = min(margined) >= solution.margin - max(
            1e-6, 1e-6 * abs(solution.margin))
    else:
        margin_consistent = True
    for sc in problem.scalar_cons:
        v = float(sc.expr.evaluate(solution.values))
        if sc.sense == "<=0":
            ok = ok and v <= tol
        elif sc.sense == ">=0":
            ok = ok and v >= -tol
        else:
            ok = ok and abs(v) <= tol
        margins[sc.name] = v
    ok = ok and margin_consistent
    return VerificationReport(ok, margins, worst, margin_consistent)
