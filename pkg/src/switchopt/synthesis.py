"""Mode-scheduled output-feedback synthesis of optimization algorithms.

The pipeline per candidate rate ``rho``:

1. interconnect the network with its internal model (``regulation``),
2. absorb the sector bound and the exponential weighting into the
   gradient channel of that open plant (``delta_plant``),
3. cascade the fixed FIR multiplier on the uncertainty output
   (``synth_cascade``),
4. solve one dilated antipassivity LMI per graph edge over nonlinearly
   transformed controller parameters with a mode-independent slack pair
   and mode-indexed storage (``synth_feasible_at_rate``),
5. invert the parameter transformation, strip the measurement
   feedthrough, and undo the weighting (``reconstruct``).

The recovered subcontroller composes with the internal model into the
deployed controller; every result is re-certified through the analysis
module, so any algebra slip here would be caught, not shipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lmi
from .analysis import RateCertificate, accept_verified, bisect_rate, feasible_at_rate
from .errors import (
    InvalidModelError,
    ReconstructionError,
    SolverFailureError,
    WellPosednessError,
)
from .model import (
    ModeRealization,
    PlantMode,
    SwitchedPlant,
    SwitchedSystem,
    blockmat,
)
from .regulation import (
    RegulatorSolution,
    assemble_controller,
    connect_plant_model,
    solve_regulator,
    verify_closed_loop_regulation,
)
from .transforms import (
    FilterCoefficients,
    SectorSpec,
    check_admissible,
    zf_realization,
)

__all__ = [
    "SubcontrollerMode",
    "Subcontroller",
    "SynthesisResult",
    "delta_plant",
    "synth_cascade",
    "build_synthesis_problem",
    "synth_feasible_at_rate",
    "SynthFeasibility",
    "reconstruct",
    "bisect_synthesis",
]

PD_FLOOR = 1e-7
CROSS_CERT_SLACK = 1e-3


@dataclass(frozen=True)
class SubcontrollerMode:
    """One mode of the subcontroller ``y~ -> (u1~, u2~)``."""

    A: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    D1: np.ndarray
    C2: np.ndarray
    D2: np.ndarray


@dataclass(frozen=True)
class Subcontroller:
    modes: tuple

    @property
    def order(self) -> int:
        return self.modes[0].A.shape[0]


@dataclass(frozen=True)
class SynthesisResult:
    subcontroller: Subcontroller
    controller: SwitchedSystem
    closed_loop: SwitchedSystem
    rho: float                   # certified rate of the deployed loop
    lam: FilterCoefficients
    margin: float
    regulator: RegulatorSolution
    common_storage: bool
    certificate: RateCertificate
    synth_infimum: float = float("nan")  # raw synthesis-LMI bisection value


def delta_plant(G: SwitchedPlant, sector: SectorSpec, rho: float) -> SwitchedPlant:
    """Loop-transform and exponentially weight the gradient channel.

    With ``Delta_r = (I - m D11_r)^-1`` the new channel-1 input/output is
    the sector-shifted pair; states and control channels pass through.
    Raises when the implied algebraic loop is singular in some mode.
    """
    if not (0.0 < rho <= 1.0):
        raise InvalidModelError("rho must lie in (0, 1]")
    m, L = sector.m, sector.L
    out = []
    for r in range(1, G.graph.num_modes + 1):
        P = G.mode(r)
        d = P.n_z
        eye = np.eye(d)
        base = eye - m * P.D11
        if abs(np.linalg.det(base)) < 1e-12:
            raise WellPosednessError(f"(I - m D11) singular in mode {r}")
        if abs(np.linalg.det(eye + m * P.D11)) < 1e-12:
            raise WellPosednessError(f"(I + m D11) singular in mode {r}")
        Delta = np.linalg.inv(base)
        A = (P.A + m * P.B1 @ Delta @ P.C1) / rho
        B1 = (P.B1 @ Delta) / rho
        B2 = (P.B2 + m * P.B1 @ Delta @ P.D12) / rho
        C1 = (L - m) * Delta @ P.C1
        D11 = (L - m) * Delta @ P.D11 - eye
        D12 = (L - m) * Delta @ P.D12
        C2 = P.C2 + m * P.D21 @ Delta @ P.C1
        D21 = P.D21 @ Delta
        D22 = P.D22 + m * P.D21 @ Delta @ P.D12
        out.append(PlantMode(A, B1, B2, C1, C2, D11, D12, D21, D22))
    return SwitchedPlant(tuple(out), G.graph)


def synth_cascade(H: SwitchedPlant, lam: FilterCoefficients) -> SwitchedPlant:
    """Prepend the FIR multiplier on the uncertainty output channel.

    State ordering ``[filter; plant]``; the measurement channel is
    untouched.  With the identity multiplier this is the plant itself.
    """
    d = H.modes[0].n_z
    A_f, B_f, C_f, D_f = zf_realization(lam, d)
    nf = A_f.shape[0]
    out = []
    for P in H.modes:
        A = blockmat([
            [A_f, B_f @ P.C1],
            [np.zeros((P.n, nf)), P.A],
        ])
        B1 = blockmat([[B_f @ P.D11], [P.B1]])
        B2 = blockmat([[B_f @ P.D12], [P.B2]])
        C1 = blockmat([[C_f, D_f @ P.C1]])
        D11 = D_f @ P.D11
        D12 = D_f @ P.D12
        C2 = blockmat([[np.zeros((P.n_y, nf)), P.C2]])
        out.append(PlantMode(A, B1, B2, C1, C2, D11, D12, P.D21, P.D22))
    return SwitchedPlant(tuple(out), H.graph)


def _structure_flags(plant: SwitchedPlant):
    """Modes whose control feedthrough must vanish to avoid algebraic loops."""
    flags = []
    for P in plant.modes:
        flags.append(bool(np.any(P.D12 != 0.0) or np.any(P.D22 != 0.0)))
    return flags


def build_synthesis_problem(H: SwitchedPlant, structure_zero,
                            common_storage: bool = False,
                            pd_floor: float = PD_FLOOR):
    """Per-edge dilated antipassivity LMIs over transformed controller data.

    Variables: slack pair ``X, Y`` and coupling ``S`` (mode-independent),
    per-mode transformed controller blocks and storage
    ``[[P_r, J_r^T], [J_r, H_r]]``.  Under the common-storage flag the
    storage is tied to the slack (``S = I``, ``P_r = X``, ``H_r = Y``,
    ``J_r = 0``), which also forces a storage independent of the mode.
    """
    N = H.graph.num_modes
    nt = H.n
    nu = H.n_u
    ny = H.n_y

    variables = []
    if common_storage:
        Xv = lmi.MatrixVariable("X", nt, nt, symmetric=True)
        Yv = lmi.MatrixVariable("Y", nt, nt, symmetric=True)
        Sv = None
        variables += [Xv, Yv]
    else:
        Xv = lmi.MatrixVariable("X", nt, nt)
        Yv = lmi.MatrixVariable("Y", nt, nt)
        Sv = lmi.MatrixVariable("S", nt, nt)
        variables += [Xv, Yv, Sv]

    Avars, Bvars, Cvars, D1vars, D2vars = [], [], [], [], []
    Pvars, Jvars, Hvars = [], [], []
    for r in range(1, N + 1):
        Avars.append(lmi.MatrixVariable(f"Ak_{r}", nt, nt))
        Bvars.append(lmi.MatrixVariable(f"Bk_{r}", nt, ny))
        Cvars.append(lmi.MatrixVariable(f"Ck_{r}", nu, nt))
        D1vars.append(lmi.MatrixVariable(f"Dk1_{r}", 1, ny))
        D2vars.append(None if structure_zero[r - 1]
                      else lmi.MatrixVariable(f"Dk2_{r}", nu - 1, ny))
        if common_storage:
            Pvars.append(Xv)
            Hvars.append(Yv)
            Jvars.append(None)
        else:
            Pvars.append(lmi.MatrixVariable(f"P_{r}", nt, nt, symmetric=True))
            Hvars.append(lmi.MatrixVariable(f"H_{r}", nt, nt, symmetric=True))
            Jvars.append(lmi.MatrixVariable(f"J_{r}", nt, nt))
        variables += [Avars[-1], Bvars[-1], Cvars[-1], D1vars[-1]]
        if D2vars[-1] is not None:
            variables.append(D2vars[-1])
        if not common_storage:
            variables += [Pvars[-1], Jvars[-1], Hvars[-1]]

    def dexpr(r):
        # stacked feedthrough [D1; D2] with the structural zero baked in
        top = lmi.var_expr(D1vars[r - 1])
        if D2vars[r - 1] is None:
            bottom = lmi.const_expr(np.zeros((nu - 1, ny)))
        else:
            bottom = lmi.var_expr(D2vars[r - 1])
        return lmi.block_expr([[top], [bottom]])

    def storage_expr(r):
        if common_storage:
            return lmi.block_expr([
                [lmi.var_expr(Xv), np.zeros((nt, nt))],
                [np.zeros((nt, nt)), lmi.var_expr(Yv)],
            ])
        return lmi.block_expr([
            [lmi.var_expr(Pvars[r - 1]), lmi.var_expr(Jvars[r - 1], transpose=True)],
            [lmi.var_expr(Jvars[r - 1]), lmi.var_expr(Hvars[r - 1])],
        ])

    if common_storage:
        s_plus_i = lmi.const_expr(2.0 * np.eye(nt))
    else:
        s_plus_i = lmi.var_expr(Sv) + lmi.const_expr(np.eye(nt))
    slack = lmi.block_expr([
        [lmi.var_expr(Xv) + lmi.var_expr(Xv, transpose=True), s_plus_i.T],
        [s_plus_i, lmi.var_expr(Yv) + lmi.var_expr(Yv, transpose=True)],
    ])

    ineqs = []
    for (r, rp) in H.graph.sorted_edges():
        P = H.mode(r)
        D = dexpr(r)
        acl = lmi.block_expr([
            [lmi.var_expr(Xv, left=P.A) + lmi.var_expr(Cvars[r - 1], left=P.B2),
             lmi.const_expr(P.A) + D.left_mul(P.B2).right_mul(P.C2)],
            [lmi.var_expr(Avars[r - 1]),
             lmi.var_expr(Yv, right=P.A) + lmi.var_expr(Bvars[r - 1], right=P.C2)],
        ])
        bcl = lmi.block_expr([
            [lmi.const_expr(P.B1) + D.left_mul(P.B2).right_mul(P.D21)],
            [lmi.var_expr(Yv, right=P.B1) + lmi.var_expr(Bvars[r - 1], right=P.D21)],
        ])
        ccl = lmi.block_expr([
            [lmi.var_expr(Xv, left=P.C1) + lmi.var_expr(Cvars[r - 1], left=P.D12),
             lmi.const_expr(P.C1) + D.left_mul(P.D12).right_mul(P.C2)],
        ])
        dcl = lmi.const_expr(P.D11) + D.left_mul(P.D12).right_mul(P.D21)
        big = lmi.block_expr([
            [storage_expr(rp), acl, bcl],
            [acl.T, slack - storage_expr(r), ccl.T.scale(-0.5)],
            [bcl.T, ccl.scale(-0.5), dcl.sym().scale(-0.5)],
        ])
        ineqs.append(lmi.MatrixInequality(f"edge_{r}_{rp}", big, ">>0"))

    seen = set()
    for r in range(1, N + 1):
        name = f"pd_storage_{r}"
        expr = storage_expr(r)
        key = tuple(sorted(expr.variables()))
        if common_storage and key in seen:
            continue
        seen.add(key)
        ineqs.append(lmi.MatrixInequality(name, expr, ">>0", margin=False,
                                          floor=pd_floor))

    problem = lmi.LmiProblem(variables, ineqs, [])
    info = {
        "nt": nt, "nu": nu, "ny": ny,
        "structure_zero": list(structure_zero),
        "common_storage": common_storage,
    }
    return problem, info


@dataclass
class SynthFeasibility:
    feasible: bool
    solution: lmi.LmiSolution
    H: SwitchedPlant | None
    info: dict | None
    verification: lmi.VerificationReport | None


def synth_feasible_at_rate(plant: SwitchedPlant, reg: RegulatorSolution,
                           sector: SectorSpec, rho: float,
                           lam: FilterCoefficients,
                           common_storage: bool = False,
                           config: lmi.SolverConfig | None = None) -> SynthFeasibility:
    """One synthesis feasibility solve at a fixed rate and multiplier."""
    if not check_admissible(lam, rho):
        raise InvalidModelError("multiplier is not admissible at this rate")
    # reconstruction inverts S - Y X, so keep the solution small by default
    config = config or lmi.SolverConfig(regularize=0.5)
    if config.regularize == 0.0:
        from dataclasses import replace

        config = replace(config, regularize=0.5)
    G = connect_plant_model(plant, reg)
    H = synth_cascade(delta_plant(G, sector, rho), lam)
    problem, info = build_synthesis_problem(H, _structure_flags(plant),
                                            common_storage)
    sol = lmi.solve(problem, config)
    ok, report = accept_verified(sol, problem, config)
    if not ok:
        return SynthFeasibility(False, sol, None, None, report)
    return SynthFeasibility(True, sol, H, info, report)


def reconstruct(values: dict, H: SwitchedPlant, rho: float, info: dict,
                singular_tol: float = 1e-9) -> Subcontroller:
    """Recover the subcontroller from transformed LMI variables.

    Uses the factorization ``V = I``, ``U = S - Y X`` (``S = I`` under a
    common storage), inverts the parameter warp per mode, strips the
    measurement feedthrough of the transformed plant, and undoes the
    exponential weighting.
    """
    nt, nu, ny = info["nt"], info["nu"], info["ny"]
    X = values["X"]
    Y = values["Y"]
    S = values.get("S", np.eye(nt))
    U = S - Y @ X
    sv = np.linalg.svd(U, compute_uv=False)
    if sv[-1] < singular_tol * max(1.0, sv[0]):
        raise ReconstructionError("S - Y X is numerically singular")
    Ui = np.linalg.inv(U)

    modes = []
    for r in range(1, H.graph.num_modes + 1):
        P = H.mode(r)
        Ak = values[f"Ak_{r}"]
        Bk = values[f"Bk_{r}"]
        Ck = values[f"Ck_{r}"]
        D1 = values[f"Dk1_{r}"]
        if info["structure_zero"][r - 1]:
            D2 = np.zeros((nu - 1, ny))
        else:
            D2 = values[f"Dk2_{r}"]
        Dk = np.vstack([D1, D2])
        left = blockmat([
            [np.eye(nt), -Y @ P.B2],
            [np.zeros((nu, nt)), np.eye(nu)],
        ])
        mid = blockmat([
            [Ak - Y @ P.A @ X, Bk],
            [Ck, Dk],
        ])
        right = blockmat([
            [Ui, np.zeros((nt, ny))],
            [-P.C2 @ X @ Ui, np.eye(ny)],
        ])
        K0 = left @ mid @ right
        A0, B0 = K0[:nt, :nt], K0[:nt, nt:]
        C0, D0 = K0[nt:, :nt], K0[nt:, nt:]
        # strip the transformed-plant measurement feedthrough, then unweight
        D22H = P.D22
        A_c = rho * (A0 - B0 @ D22H @ C0)
        B_c = rho * B0
        C_c = (np.eye(nu) - D0 @ D22H) @ C0
        D_c = D0
        if info["structure_zero"][r - 1]:
            D_c[1:, :] = 0.0
        modes.append(SubcontrollerMode(A_c, B_c, C_c[:1, :], D_c[:1, :],
                                       C_c[1:, :], D_c[1:, :]))
    return Subcontroller(tuple(modes))


def bisect_synthesis(plant: SwitchedPlant, sector: SectorSpec,
                     lam: FilterCoefficients | None = None,
                     common_storage: bool = False, rho_tol: float = 1e-4,
                     rho_hi: float = 1.0, max_iter: int = 40,
                     reg: RegulatorSolution | None = None,
                     config: lmi.SolverConfig | None = None,
                     cross_certify: bool = True) -> SynthesisResult | None:
    """Synthesize the controller with the smallest certifiable rate.

    Bisects the synthesis LMI down to its feasibility infimum, then
    reconstructs slightly above it (solutions at the exact boundary are
    ill conditioned and reconstruct into useless controllers) and
    certifies the deployed loop through the analysis module.  The
    reported rate is that certificate's; it can undercut the synthesis
    infimum because the analysis step carries no dilation slack.
    Returns ``None`` when no controller exists even at rate 1.
    """
    lam = lam or FilterCoefficients.identity(0)
    reg = reg or solve_regulator(plant)
    best = None

    def attempt(rho):
        nonlocal best
        res = synth_feasible_at_rate(plant, reg, sector, rho, lam,
                                     common_storage, config)
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
    rho_star = best[0]

    last_error = None
    for backoff in (2 * rho_tol, 1e-3, 5e-3, 2e-2):
        rho_rec = min(rho_hi, rho_star + backoff)
        res = best[1] if rho_rec == best[0] else synth_feasible_at_rate(
            plant, reg, sector, rho_rec, lam, common_storage, config)
        if not res.feasible:
            continue
        try:
            sub = reconstruct(res.solution.values, res.H, rho_rec, res.info)
        except ReconstructionError as e:
            values = dict(res.solution.values)
            nt = res.info["nt"]
            values["S"] = values.get("S", np.eye(nt)) + 1e-8 * np.eye(nt)
            try:
                sub = reconstruct(values, res.H, rho_rec, res.info)
            except ReconstructionError as e2:
                last_error = e2
                continue
        ok, report = verify_closed_loop_regulation(plant, reg, sub)
        if not ok:
            last_error = SolverFailureError(
                f"regulation residual {report['residual']:.2e}")
            continue
        controller, closed = assemble_controller(plant, reg, sub)
        if not cross_certify:
            return SynthesisResult(sub, controller, closed, rho_rec, lam,
                                   res.solution.margin, reg, common_storage,
                                   None, rho_star)
        cert = bisect_rate(closed, sector, lam.order, lam=lam,
                           common_storage=common_storage, rho_tol=rho_tol,
                           rho_hi=rho_hi, config=config)
        if cert is not None and cert.rho <= rho_star + CROSS_CERT_SLACK:
            return SynthesisResult(sub, controller, closed, cert.rho, lam,
                                   res.solution.margin, reg, common_storage,
                                   cert, rho_star)
        last_error = SolverFailureError(
            "reconstructed controller does not re-certify near the synthesis "
            f"infimum (got {'nothing' if cert is None else f'{cert.rho:.5f}'}, "
            f"infimum {rho_star:.5f})")
    raise last_error or SolverFailureError("controller reconstruction failed")
