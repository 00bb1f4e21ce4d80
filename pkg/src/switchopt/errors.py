"""Exception types shared across the package."""


class SwitchoptError(Exception):
    """Base class for all package-specific errors."""


class InvalidModelError(SwitchoptError):
    """A system, plant, or graph violates a structural requirement."""


class WellPosednessError(SwitchoptError):
    """An interconnection has a singular algebraic loop."""


class RegulationError(SwitchoptError):
    """No regulation witness exists for the given closed loop."""


class RegulatorInfeasibleError(SwitchoptError):
    """The open-loop regulator equations have no solution."""


class ReconstructionError(SwitchoptError):
    """Controller recovery failed (near-singular factorization)."""


class SolverFailureError(SwitchoptError):
    """The conic backend failed to return a usable answer."""
