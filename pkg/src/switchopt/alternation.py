"""Alternating controller / multiplier refinement.

Synthesis runs at a fixed FIR multiplier; analysis refines the
multiplier for the synthesized loop.  Neither phase is guaranteed to
improve by itself at bisection resolution, so the incumbent
``(controller, multiplier, rate)`` is only replaced when a phase
certifies a rate at least as good — the reported trace is therefore
non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .analysis import bisect_rate
from .errors import SolverFailureError
from .model import SwitchedPlant
from .regulation import RegulatorSolution, solve_regulator
from .synthesis import SynthesisResult, bisect_synthesis
from .transforms import FilterCoefficients, SectorSpec

__all__ = ["AlternationRecord", "AlternationTrace", "run_alternation"]


@dataclass(frozen=True)
class AlternationRecord:
    iteration: int
    phase: str              # "synthesis" | "analysis"
    rho: float              # rate achieved by the phase itself
    incumbent_rho: float    # best certified rate so far
    lam: FilterCoefficients
    controller_order: int


@dataclass
class AlternationTrace:
    records: list = field(default_factory=list)

    def incumbents(self):
        return [rec.incumbent_rho for rec in self.records]

    def to_json_lines(self) -> str:
        import json

        lines = []
        for rec in self.records:
            lines.append(json.dumps({
                "iteration": rec.iteration,
                "phase": rec.phase,
                "rho": rec.rho,
                "incumbent_rho": rec.incumbent_rho,
                "lambda": list(rec.lam.lam),
                "controller_order": rec.controller_order,
            }))
        return "\n".join(lines)


def run_alternation(plant: SwitchedPlant, sector: SectorSpec, nu_max: int,
                    iter_max: int = 3, common_storage: bool = False,
                    rho_tol: float = 1e-4, improve_tol: float = 1e-4,
                    reg: RegulatorSolution | None = None,
                    config: lmi.SolverConfig | None = None):
    """Alternate synthesis and multiplier search, keeping the best pair.

    Starts from the static identity multiplier (so the first controller
    has the minimal order), then lets the analysis phase search
    order-``nu_max`` coefficients for the incumbent loop.  Returns
    ``(result, trace)`` or ``(None, trace)`` when even the first
    synthesis diverges at rate 1.
    """
    reg = reg or solve_regulator(plant)
    lam = FilterCoefficients.identity(0)
    incumbent: SynthesisResult | None = None
    incumbent_rho = np.inf
    trace = AlternationTrace()

    for it in range(1, iter_max + 1):
        rho_start = incumbent_rho
        result = bisect_synthesis(plant, sector, lam, common_storage,
                                  rho_tol=rho_tol, reg=reg, config=config)
        if result is None:
            if incumbent is None:
                return None, trace
            break
        if result.rho <= incumbent_rho:
            incumbent, incumbent_rho = result, result.rho
        trace.records.append(AlternationRecord(
            it, "synthesis", result.rho, incumbent_rho, lam,
            result.subcontroller.order))

        cert = bisect_rate(incumbent.closed_loop, sector, nu_max, lam=None,
                           common_storage=common_storage, rho_tol=rho_tol,
                           config=config)
        if cert is not None:
            if cert.rho <= incumbent_rho:
                incumbent_rho = cert.rho
                incumbent = SynthesisResult(
                    incumbent.subcontroller, incumbent.controller,
                    incumbent.closed_loop, cert.rho, cert.lam,
                    incumbent.margin, incumbent.regulator,
                    incumbent.common_storage, cert)
            lam = cert.lam
            trace.records.append(AlternationRecord(
                it, "analysis", cert.rho, incumbent_rho, cert.lam,
                incumbent.subcontroller.order))
        if rho_start - incumbent_rho < improve_tol:
            break

    return incumbent, trace
