"""Open-loop regulator equations and the internal-model interconnection.

The regulator unknowns ``(Pi_r, Gamma_r)`` pin down the steady-state
subspace on which the oracle input settles at the optimizer:

    for every edge (r, r'):   A_r Pi_r + B2_r Gamma_r = Pi_r'
    for every mode r:         C1_r Pi_r + D12_r Gamma_r = -I

The second equation lives on the oracle-path output ``z`` (the channel
the gradient sees); with it, the per-mode internal model

    omega+ = omega + u1~,  u = -Gamma_r omega + u2~,  y~ = Phi_r omega + y

with ``Phi_r = C2_r Pi_r + D22_r Gamma_r`` makes every closed loop
``plant * model * subcontroller`` satisfy the closed-loop regulation
identities with witness ``Theta_r = [-Pi_r; I; 0]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModelError, RegulatorInfeasibleError
from .model import (
    ModeRealization,
    PlantMode,
    SwitchedPlant,
    SwitchedSystem,
    blockmat,
    star_controller,
)

__all__ = [
    "RegulatorSolution",
    "solve_regulator",
    "build_internal_model",
    "connect_plant_model",
    "assemble_controller",
    "verify_closed_loop_regulation",
]

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class RegulatorSolution:
    """Per-mode regulator matrices and the attained residual."""

    Pi: tuple       # (n, 1) arrays
    Gamma: tuple    # (n_u, 1) arrays
    Phi: tuple      # (n_y, 1) arrays
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "Pi", tuple(np.asarray(P, dtype=float) for P in self.Pi))
        object.__setattr__(self, "Gamma", tuple(np.asarray(G, dtype=float) for G in self.Gamma))
        object.__setattr__(self, "Phi", tuple(np.asarray(F, dtype=float) for F in self.Phi))


def solve_regulator(plant: SwitchedPlant, tol: float = RESIDUAL_TOL) -> RegulatorSolution:
    """Least-squares solve of the switched regulator equations.

    All edge and mode equations are stacked into one linear system in the
    entries of ``(Pi_r, Gamma_r)``; the minimum-norm solution is taken.
    Raises :class:`RegulatorInfeasibleError` when the residual exceeds
    ``tol * (1 + norm(data))``.
    """
    if plant.d != 1 or plant.modes[0].n_z != 1:
        raise InvalidModelError("regulator algebra runs at oracle width d = 1")
    N = plant.graph.num_modes
    n, nu = plant.n, plant.n_u
    per = n + nu                      # unknowns per mode: vec(Pi_r), vec(Gamma_r)
    rows = []
    rhs = []

    def pi_cols(r):
        return slice((r - 1) * per, (r - 1) * per + n)

    def gamma_cols(r):
        return slice((r - 1) * per + n, r * per)

    for (r, rp) in plant.graph.sorted_edges():
        P = plant.mode(r)
        block = np.zeros((n, N * per))
        block[:, pi_cols(r)] += P.A
        block[:, gamma_cols(r)] += P.B2
        block[:, pi_cols(rp)] -= np.eye(n)
        rows.append(block)
        rhs.append(np.zeros(n))
    for r in range(1, N + 1):
        P = plant.mode(r)
        block = np.zeros((1, N * per))
        block[:, pi_cols(r)] = P.C1
        block[:, gamma_cols(r)] = P.D12
        rows.append(block)
        rhs.append(np.array([-1.0]))

    M = np.vstack(rows)
    b = np.concatenate(rhs)
    x, *_ = np.linalg.lstsq(M, b, rcond=None)
    residual = float(np.linalg.norm(M @ x - b))
    scale = 1.0 + float(np.linalg.norm(M)) + float(np.linalg.norm(b))
    if residual > tol * scale:
        raise RegulatorInfeasibleError(
            f"regulator residual {residual:.3e} exceeds tolerance "
            f"{tol * scale:.3e}; the network violates the solvability assumption")

    Pi, Gamma, Phi = [], [], []
    for r in range(1, N + 1):
        P = plant.mode(r)
        Pi_r = x[pi_cols(r)].reshape(n, 1)
        Gamma_r = x[gamma_cols(r)].reshape(nu, 1)
        Pi.append(Pi_r)
        Gamma.append(Gamma_r)
        Phi.append(P.C2 @ Pi_r + P.D22 @ Gamma_r)
    return RegulatorSolution(tuple(Pi), tuple(Gamma), tuple(Phi), residual)


def build_internal_model(plant: SwitchedPlant, sol: RegulatorSolution):
    """Per-mode internal model ``Q_r: (y, u1~, u2~) -> (u, y~)``.

    State ``omega`` integrates the first auxiliary input; the second is
    added directly to the control.  Realization per mode::

        [[ I,       0, I, 0 ],
         [ -Gamma,  0, 0, I ],
         [ Phi,     I, 0, 0 ]]
    """
    ny, nu = plant.n_y, plant.n_u
    out = []
    for r in range(1, plant.graph.num_modes + 1):
        Gamma = sol.Gamma[r - 1]
        Phi = sol.Phi[r - 1]
        A = np.eye(1)
        B = blockmat([[np.zeros((1, ny)), np.ones((1, 1)), np.zeros((1, nu))]])
        C = blockmat([[-Gamma], [Phi]])
        D = blockmat([
            [np.zeros((nu, ny)), np.zeros((nu, 1)), np.eye(nu)],
            [np.eye(ny), np.zeros((ny, 1)), np.zeros((ny, nu))],
        ])
        out.append(ModeRealization(A, B, C, D))
    return out


def connect_plant_model(plant: SwitchedPlant, sol: RegulatorSolution) -> SwitchedPlant:
    """Interconnection ``G_r = P_r * Q_r`` with state ``[x; omega]``.

    Channels: inputs ``(w | u1~, u2~)``, outputs ``(z | y~)``.  This is
    the exact star product of the network with the internal model (the
    wiring-oracle tests check it signal by signal).
    """
    out = []
    for r in range(1, plant.graph.num_modes + 1):
        P = plant.mode(r)
        Gamma = sol.Gamma[r - 1]
        Phi = sol.Phi[r - 1]
        n, nu, ny, d = P.n, P.n_u, P.n_y, P.n_z
        A = blockmat([
            [P.A, -P.B2 @ Gamma],
            [np.zeros((1, n)), np.eye(1)],
        ])
        B1 = blockmat([[P.B1], [np.zeros((1, d))]])
        B2 = blockmat([
            [np.zeros((n, 1)), P.B2],
            [np.ones((1, 1)), np.zeros((1, nu))],
        ])
        C1 = blockmat([[P.C1, -P.D12 @ Gamma]])
        C2 = blockmat([[P.C2, Phi - P.D22 @ Gamma]])
        D11 = P.D11
        D12 = blockmat([[np.zeros((d, 1)), P.D12]])
        D21 = P.D21
        D22 = blockmat([[np.zeros((ny, 1)), P.D22]])
        out.append(PlantMode(A, B1, B2, C1, C2, D11, D12, D21, D22))
    return SwitchedPlant(tuple(out), plant.graph)


def assemble_controller(plant: SwitchedPlant, sol: RegulatorSolution,
                        sub) -> tuple:
    """Form ``K_r = Q_r * R_r`` and the closed loop ``P_r * K_r``.

    ``sub`` is a :class:`switchopt.synthesis.Subcontroller`.  Returns
    ``(controller, closed_loop)`` as switched systems; the closed loop
    runs over the gradient channel ``w -> z`` with state
    ``[x; omega; xi~]``.
    """
    modes = []
    for r in range(1, plant.graph.num_modes + 1):
        Gamma = sol.Gamma[r - 1]
        Phi = sol.Phi[r - 1]
        R = sub.modes[r - 1]
        nc = R.A.shape[0]
        AK = blockmat([
            [np.eye(1) + R.D1 @ Phi, R.C1],
            [R.B @ Phi, R.A],
        ])
        BK = blockmat([[R.D1], [R.B]])
        CK = blockmat([[-Gamma + R.D2 @ Phi, R.C2]])
        DK = R.D2
        modes.append(ModeRealization(AK, BK, CK, DK))
    controller = SwitchedSystem(tuple(modes), plant.graph)
    closed = star_controller(plant, controller)
    return controller, closed


def regulation_witness_for(sol: RegulatorSolution, order: int):
    """The closed-loop witness ``Theta_r = [-Pi_r; I; 0]`` per mode."""
    thetas = []
    for Pi in sol.Pi:
        thetas.append(blockmat([[-Pi], [np.ones((1, 1))], [np.zeros((order, 1))]]))
    return thetas


def verify_closed_loop_regulation(plant: SwitchedPlant, sol: RegulatorSolution,
                                  sub, tol: float = RESIDUAL_TOL):
    """Check the structural witness on the assembled closed loop.

    Builds ``P * Q * R``, then verifies ``A~_r Theta_r = Theta_r'`` on
    every edge, ``C~_r Theta_r = I`` on every mode, and ``D~_r = 0``.
    Returns ``(ok, report)``.
    """
    _, closed = assemble_controller(plant, sol, sub)
    order = sub.modes[0].A.shape[0]
    thetas = regulation_witness_for(sol, order)
    worst = 0.0
    for (r, rp) in plant.graph.sorted_edges():
        m = closed.mode(r)
        worst = max(worst, float(np.max(np.abs(m.A @ thetas[r - 1] - thetas[rp - 1]))))
    for r in range(1, plant.graph.num_modes + 1):
        m = closed.mode(r)
        worst = max(worst, float(np.max(np.abs(m.C @ thetas[r - 1] - np.eye(1)))))
        worst = max(worst, float(np.max(np.abs(m.D))) if m.D.size else 0.0)
    ok = worst <= tol * (1.0 + max(np.max(np.abs(th)) for th in thetas))
    return ok, {"residual": worst, "thetas": thetas}
