"""Worst-case rate certification of a given switched algorithm loop.

A closed loop ``(A~_r, B~_r, C~_r)`` over the gradient channel is
certified at rate ``rho`` by (i) a regulation witness pinning the
optimizer, and (ii) per-edge strict antipassivity of the weighted,
sector-transformed, multiplier-filtered loop with mode-indexed quadratic
storage.  The storage/multiplier search is one jointly affine
semidefinite program; the infimal rate is found by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lmi
from .errors import InvalidModelError, RegulationError
from .model import SwitchedSystem, blockmat, validate_graph
from .transforms import (
    ADMISSIBLE_MARGIN,
    FilterCoefficients,
    SectorSpec,
    rho_weight_and_loop,
    zf_structure,
)

__all__ = [
    "RegulationWitness",
    "RateCertificate",
    "find_regulation_witness",
    "build_rate_problem",
    "feasible_at_rate",
    "RateFeasibility",
    "bisect_rate",
    "threshold_search",
]

PD_FLOOR = 1e-7


@dataclass(frozen=True)
class RegulationWitness:
    """Per-mode vectors decoupling the optimizer from the loop dynamics."""

    theta: tuple
    residual: float


@dataclass(frozen=True)
class RateCertificate:
    """A certified decay rate with all objects needed to audit it."""

    rho: float
    lam: FilterCoefficients
    storages: tuple
    witness: RegulationWitness
    margin: float
    common_storage: bool = False

    @property
    def nu_max(self) -> int:
        return self.lam.order


def find_regulation_witness(closed: SwitchedSystem,
                            tol: float = 1e-8) -> RegulationWitness:
    """Solve the closed-loop regulation equations for witness vectors.

    Stacks ``A~_r Theta_r - Theta_r' = 0`` over edges and
    ``C~_r Theta_r = I`` over modes into one least-squares problem.
    Raises :class:`RegulationError` when no witness exists.
    """
    N = closed.graph.num_modes
    n = closed.n
    d = closed.n_out
    per = n * d
    rows, rhs = [], []
    eye_d = np.eye(d)

    def cols(r):
        return slice((r - 1) * per, r * per)

    for (r, rp) in closed.graph.sorted_edges():
        block = np.zeros((per, N * per))
        block[:, cols(r)] += np.kron(eye_d, closed.mode(r).A)
        block[:, cols(rp)] -= np.eye(per)
        rows.append(block)
        rhs.append(np.zeros(per))
    for r in range(1, N + 1):
        block = np.zeros((d * d, N * per))
        block[:, cols(r)] = np.kron(eye_d, closed.mode(r).C)
        rows.append(block)
        rhs.append(eye_d.flatten(order="F"))

    M = np.vstack(rows)
    b = np.concatenate(rhs)
    x, *_ = np.linalg.lstsq(M, b, rcond=None)
    residual = float(np.linalg.norm(M @ x - b))
    scale = 1.0 + float(np.linalg.norm(M)) + float(np.linalg.norm(b))
    if residual > tol * scale:
        raise RegulationError(
            f"no regulation witness: residual {residual:.3e} "
            f"(tolerance {tol * scale:.3e})")
    thetas = tuple(x[cols(r)].reshape(n, d, order="F") for r in range(1, N + 1))
    return RegulationWitness(thetas, residual)


# ---------------------------------------------------------------------------
# LMI assembly
# ---------------------------------------------------------------------------


def _cascade_data(closed: SwitchedSystem, sector: SectorSpec, rho: float,
                  nu_max: int):
    """Per-mode cascade blocks and coefficient bases for the edge LMIs.

    Returns ``(AB, Cparts, Dparts, n_tot, d)`` where for each mode
    ``AB[r]`` is the stacked ``[A^lam, B^lam]`` (coefficient-free) and
    ``Cparts[r][nu] / Dparts[r][nu]`` are the derivative of the output
    blocks with respect to ``lambda_nu``.
    """
    hat = rho_weight_and_loop(closed, sector, rho)
    d = closed.n_out
    n_cl = closed.n
    A_f, B_f = zf_structure(nu_max, d)
    nf = nu_max * d
    n_tot = nf + n_cl
    AB, Cparts, Dparts = [], [], []
    for m in hat.modes:
        A_lam = blockmat([
            [A_f, B_f @ m.C],
            [np.zeros((n_cl, nf)), m.A],
        ])
        B_lam = blockmat([[B_f @ m.D], [m.B]])
        AB.append(np.hstack([A_lam, B_lam]))
        cparts, dparts = [], []
        for nu in range(nu_max + 1):
            if nu == 0:
                Cb = blockmat([[np.zeros((d, nf)), m.C]])
                Db = m.D.copy()
            else:
                Cb = np.zeros((d, n_tot))
                Cb[:, (nu - 1) * d : nu * d] = np.eye(d)
                Db = np.zeros((d, d))
            cparts.append(Cb)
            dparts.append(Db)
        Cparts.append(cparts)
        Dparts.append(dparts)
    return AB, Cparts, Dparts, n_tot, d


def build_rate_problem(closed: SwitchedSystem, sector: SectorSpec, rho: float,
                       nu_max: int, lam: FilterCoefficients | None = None,
                       common_storage: bool = False, lam0_free: bool = False,
                       pd_floor: float = PD_FLOOR):
    """Assemble the joint storage/multiplier feasibility program.

    ``lam=None`` searches the coefficients (normalized ``lambda_0 = 1``
    unless ``lam0_free``); otherwise they are held fixed.  Returns
    ``(problem, info)``; ``info`` carries variable handles for extracting
    a certificate afterwards.
    """
    if not (0.0 < rho <= 1.0):
        raise InvalidModelError("rho must lie in (0, 1]")
    ok, offenders = validate_graph(closed.graph)
    if not ok:
        raise InvalidModelError(f"invalid switching graph, offenders {offenders}")
    if lam is not None and lam.order != nu_max:
        raise InvalidModelError("fixed multiplier order must equal nu_max")

    AB, Cparts, Dparts, n_tot, d = _cascade_data(closed, sector, rho, nu_max)
    N = closed.graph.num_modes

    variables = []
    if common_storage:
        Mvars = [lmi.MatrixVariable("M", n_tot, n_tot, symmetric=True)] * N
        variables.append(Mvars[0])
    else:
        Mvars = [lmi.MatrixVariable(f"M_{r}", n_tot, n_tot, symmetric=True)
                 for r in range(1, N + 1)]
        variables.extend(Mvars)

    lam_var = None
    if lam is None:
        size = nu_max + 1 if lam0_free else nu_max
        if size > 0:
            lam_var = lmi.MatrixVariable("lam", size, 1)
            variables.append(lam_var)

    # embeddings for the quadratic form over [x_cascade; u]
    E_x = np.zeros((n_tot + d, n_tot))
    E_x[:n_tot, :] = np.eye(n_tot)
    E_u = np.zeros((n_tot + d, d))
    E_u[n_tot:, :] = np.eye(d)

    ineqs = []
    for (r, rp) in closed.graph.sorted_edges():
        ab = AB[r - 1]
        expr = lmi.var_expr(Mvars[rp - 1], left=ab.T, right=ab)
        expr = expr - lmi.var_expr(Mvars[r - 1], left=E_x, right=E_x.T)

        def coupling(nu):
            CD = np.hstack([Cparts[r - 1][nu], Dparts[r - 1][nu]])
            return 0.5 * (E_u @ CD + CD.T @ E_u.T)

        if lam is not None:
            total = sum(lam.lam[nu] * coupling(nu) for nu in range(nu_max + 1))
            expr = expr + lmi.const_expr(total)
        else:
            if not lam0_free:
                expr = expr + lmi.const_expr(coupling(0))
            for nu in range(nu_max + 1):
                if nu == 0 and not lam0_free:
                    continue
                idx = nu if lam0_free else nu - 1
                expr = expr + lmi.entry_expr(lam_var, idx, 0, coupling(nu))
        ineqs.append(lmi.MatrixInequality(f"edge_{r}_{rp}", expr, "<<0"))

    seen = set()
    for v in Mvars:
        if v.name in seen:
            continue
        seen.add(v.name)
        ineqs.append(lmi.MatrixInequality(
            f"pd_{v.name}", lmi.var_expr(v), ">>0", margin=False, floor=pd_floor))

    scalars = []
    if lam is None and lam_var is not None:
        weights = rho ** (-np.arange(nu_max + 1, dtype=float))
        if lam0_free:
            for nu in range(1, nu_max + 1):
                scalars.append(lmi.ScalarConstraint(
                    f"lam_{nu}_nonpos", lmi.entry_expr(lam_var, nu, 0, [[1.0]]), "<=0"))
            sum_expr = lmi.AffineExpr((1, 1), const=[[-ADMISSIBLE_MARGIN]])
            for nu in range(nu_max + 1):
                sum_expr = sum_expr + lmi.entry_expr(lam_var, nu, 0, [[weights[nu]]])
        else:
            for nu in range(1, nu_max + 1):
                scalars.append(lmi.ScalarConstraint(
                    f"lam_{nu}_nonpos", lmi.entry_expr(lam_var, nu - 1, 0, [[1.0]]), "<=0"))
            sum_expr = lmi.AffineExpr((1, 1), const=[[1.0 - ADMISSIBLE_MARGIN]])
            for nu in range(1, nu_max + 1):
                sum_expr = sum_expr + lmi.entry_expr(lam_var, nu - 1, 0, [[weights[nu]]])
        scalars.append(lmi.ScalarConstraint("lam_weighted_sum", sum_expr, ">=0"))

    problem = lmi.LmiProblem(variables, ineqs, scalars)
    info = {
        "storage_names": [v.name for v in Mvars],
        "lam_var": lam_var.name if lam_var is not None else None,
        "lam_fixed": lam,
        "lam0_free": lam0_free,
        "nu_max": nu_max,
        "n_tot": n_tot,
        "d": d,
    }
    return problem, info


@dataclass
class RateFeasibility:
    feasible: bool
    solution: lmi.LmiSolution
    storages: tuple | None
    lam: FilterCoefficients | None
    verification: lmi.VerificationReport | None


def _extract_lam(info, values) -> FilterCoefficients:
    if info["lam_fixed"] is not None:
        return info["lam_fixed"]
    if info["lam_var"] is None:
        return FilterCoefficients.identity(0)
    raw = values[info["lam_var"]].reshape(-1)
    if info["lam0_free"]:
        lam = raw
    else:
        lam = np.concatenate([[1.0], raw])
    # clip solver dust on the sign constraint
    lam = np.concatenate([[lam[0]], np.minimum(lam[1:], 0.0)])
    return FilterCoefficients(lam)


def accept_verified(sol: lmi.LmiSolution, problem: lmi.LmiProblem,
                    config: lmi.SolverConfig):
    """Accept a solve only if a dense eigenvalue check backs the solver.

    Margined constraints must clear half the strictness floor; fixed
    positivity floors may be missed by solver dust but never by more
    than the floor itself (storages stay definite).  Guards against
    inaccurate interior-point exits.
    """
    if not sol.feasible:
        return False, None
    report = lmi.verify(sol, problem, tol=config.eps_min * 0.5)
    for mi in problem.matrix_ineqs:
        m = report.constraint_margins[mi.name]
        if mi.margin:
            if m < config.eps_min * 0.5:
                return False, report
        elif m < -0.9 * mi.floor:
            return False, report
    return True, report


def feasible_at_rate(closed: SwitchedSystem, sector: SectorSpec, rho: float,
                     nu_max: int, lam: FilterCoefficients | None = None,
                     common_storage: bool = False, lam0_free: bool = False,
                     config: lmi.SolverConfig | None = None) -> RateFeasibility:
    """Solve the certification program at one fixed rate."""
    config = config or lmi.SolverConfig()
    problem, info = build_rate_problem(closed, sector, rho, nu_max, lam,
                                       common_storage, lam0_free)
    sol = lmi.solve(problem, config)
    ok, report = accept_verified(sol, problem, config)
    if not ok:
        return RateFeasibility(False, sol, None, None, report)
    storages = tuple(sol.values[name] for name in info["storage_names"])
    return RateFeasibility(True, sol, storages, _extract_lam(info, sol.values),
                           report)


def bisect_rate(closed: SwitchedSystem, sector: SectorSpec, nu_max: int,
                lam: FilterCoefficients | None = None,
                common_storage: bool = False, lam0_free: bool = False,
                rho_tol: float = 1e-4, rho_hi: float = 1.0,
                max_iter: int = 40,
                config: lmi.SolverConfig | None = None) -> RateCertificate | None:
    """Bisection on the rate; returns ``None`` when uncertifiable at 1.

    Requires a regulation witness (raises :class:`RegulationError`
    otherwise).  The certificate is issued at the smallest rate found
    feasible, within ``rho_tol``.
    """
    witness = find_regulation_witness(closed)
    best = None

    def attempt(rho):
        nonlocal best
        res = feasible_at_rate(closed, sector, rho, nu_max, lam,
                               common_storage, lam0_free, config)
        if res.feasible:
            best = (rho, res)
        return res.feasible

    if not attempt(rho_hi):
        return None
    lo, hi = 0.0, rho_hi
    for _ in range(max_iter):
        if hi - lo <= rho_tol:
            break
        mid = 0.5 * (lo + hi)
        if attempt(mid):
            hi = mid
        else:
            lo = mid
    rho_star, res = best
    return RateCertificate(rho_star, res.lam, res.storages, witness,
                           res.solution.margin, common_storage)


def threshold_search(predicate: Callable[[float], bool], lo: float, hi: float,
                     tol: float = 0.01, max_iter: int = 60):
    """Bisection for the boundary of a monotone feasibility predicate.

    ``predicate`` must hold at ``lo``; the search returns the largest
    value (within ``tol``) at which it still holds, or ``None`` when it
    holds all the way up to ``hi`` (no finite boundary in range).
    Raises if the predicate already fails at ``lo``.
    """
    if not predicate(lo):
        raise ValueError(f"predicate fails at lower bracket {lo}")
    if predicate(hi):
        return None
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return lo
