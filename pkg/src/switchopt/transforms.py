"""Exponential weighting, sector loop transformation, and FIR multipliers.

The multiplier is a causal FIR filter with coefficients
``(lambda_0, ..., lambda_numax)``; tail coefficients must be nonpositive
and a rate-weighted sum must stay strictly positive for the filter to be
admissible at a given decay rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModelError
from .model import ModeRealization, SwitchedSystem, blockmat, series

__all__ = [
    "SectorSpec",
    "FilterCoefficients",
    "check_admissible",
    "zf_realization",
    "zf_structure",
    "filter_realization",
    "rho_weight_and_loop",
    "loop_signal_map",
    "loop_signal_unmap",
    "exp_weight_signals",
    "filtered_loop",
]

ADMISSIBLE_MARGIN = 1e-9


@dataclass(frozen=True)
class SectorSpec:
    """Strong convexity / Lipschitz bounds ``0 < m < L`` of the oracle."""

    m: float
    L: float

    def __post_init__(self):
        if not (0.0 < self.m < self.L < np.inf):
            raise InvalidModelError(f"need 0 < m < L, got m={self.m}, L={self.L}")


@dataclass(frozen=True)
class FilterCoefficients:
    """FIR multiplier coefficients ``lambda_0..lambda_numax``."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        if lam.size < 1 or not np.all(np.isfinite(lam)):
            raise InvalidModelError("need at least lambda_0, all finite")
        if lam.size > 1 and np.any(lam[1:] > 0.0):
            raise InvalidModelError("tail coefficients must be nonpositive")
        object.__setattr__(self, "lam", lam)

    @classmethod
    def identity(cls, order: int = 0) -> "FilterCoefficients":
        lam = np.zeros(order + 1)
        lam[0] = 1.0
        return cls(lam)

    @property
    def order(self) -> int:
        return self.lam.size - 1

    def __iter__(self):
        return iter(self.lam)


def check_admissible(lam: FilterCoefficients, rho: float,
                     margin: float = ADMISSIBLE_MARGIN) -> bool:
    """Admissibility of the multiplier at rate ``rho``.

    Requires nonpositive tail coefficients and
    ``sum_nu rho^-nu lambda_nu >= margin``.
    """
    if not (0.0 < rho <= 1.0):
        raise InvalidModelError("rho must lie in (0, 1]")
    coeffs = lam.lam
    if coeffs.size > 1 and np.any(coeffs[1:] > 0.0):
        return False
    weights = rho ** (-np.arange(coeffs.size, dtype=float))
    return float(weights @ coeffs) >= margin


def zf_structure(order: int, d: int = 1):
    """Fixed filter blocks ``(A_f, B_f)`` for a given order and channel width.

    ``A_f`` is the down-shift register (each tap delays once), ``B_f``
    feeds the input into the first tap.  Both are independent of the
    coefficients; the output blocks are affine in them.
    """
    if order < 0:
        raise InvalidModelError("order must be nonnegative")
    shift = np.zeros((order, order))
    for i in range(1, order):
        shift[i, i - 1] = 1.0
    e1 = np.zeros((order, 1))
    if order:
        e1[0, 0] = 1.0
    return np.kron(shift, np.eye(d)), np.kron(e1, np.eye(d))


def zf_realization(lam: FilterCoefficients, d: int = 1):
    """State-space ``(A_f, B_f, C_f, D_f)`` of the FIR multiplier."""
    order = lam.order
    A_f, B_f = zf_structure(order, d)
    C_f = np.kron(lam.lam[1:].reshape(1, -1), np.eye(d)) if order else np.zeros((d, 0))
    D_f = lam.lam[0] * np.eye(d)
    return A_f, B_f, C_f, D_f


def filter_realization(lam: FilterCoefficients, d: int = 1) -> ModeRealization:
    A_f, B_f, C_f, D_f = zf_realization(lam, d)
    return ModeRealization(A_f, B_f, C_f, D_f)


def rho_weight_and_loop(sys: SwitchedSystem, sector: SectorSpec,
                        rho: float) -> SwitchedSystem:
    """Exponentially weight a closed algorithm loop and sector-transform it.

    Input modes are ``(A, B, C)`` with zero feedthrough (gradient loops
    must be explicit).  Output modes map the transformed uncertainty
    input to its output:

        A_hat = rho^-1 (A + B m C),  B_hat = rho^-1 B,
        C_hat = (L - m) C,           D_hat = -I.
    """
    if not (0.0 < rho <= 1.0):
        raise InvalidModelError("rho must lie in (0, 1]")
    out = []
    for r, m in enumerate(sys.modes, start=1):
        if m.D.size and np.any(m.D != 0.0):
            raise InvalidModelError(f"mode {r} has nonzero feedthrough")
        d = m.n_out
        if m.n_in != d:
            raise InvalidModelError("loop width mismatch (w and z must agree)")
        A_hat = (m.A + sector.m * (m.B @ m.C)) / rho
        B_hat = m.B / rho
        C_hat = (sector.L - sector.m) * m.C
        D_hat = -np.eye(d)
        out.append(ModeRealization(A_hat, B_hat, C_hat, D_hat))
    return SwitchedSystem(tuple(out), sys.graph)


def loop_signal_map(w: np.ndarray, z: np.ndarray, sector: SectorSpec):
    """Sector transform of gradient-loop signals: ``(w, z) -> (p, q)``.

    ``p = L z - w`` vanishes on the upper sector edge, ``q = w - m z``
    on the lower one.
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    return sector.L * z - w, w - sector.m * z


def loop_signal_unmap(p: np.ndarray, q: np.ndarray, sector: SectorSpec):
    """Inverse of :func:`loop_signal_map`."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    z = (p + q) / (sector.L - sector.m)
    return q + sector.m * z, z


def exp_weight_signals(seq: np.ndarray, rho: float) -> np.ndarray:
    """Multiply element ``k`` of a sequence by ``rho^-k``."""
    seq = np.asarray(seq, dtype=float)
    if not (0.0 < rho <= 1.0):
        raise InvalidModelError("rho must lie in (0, 1]")
    weights = rho ** (-np.arange(seq.shape[0], dtype=float))
    return seq * weights.reshape((-1,) + (1,) * (seq.ndim - 1))


def filtered_loop(sys_hat: SwitchedSystem, lam: FilterCoefficients) -> SwitchedSystem:
    """Cascade the FIR multiplier after the transformed loop.

    State ordering is ``[filter; plant]``.  Because the transformed loop
    has feedthrough ``-I``, the A and B blocks of the cascade do not
    depend on the coefficients; only the output blocks do.
    """
    d = sys_hat.n_out
    filt = filter_realization(lam, d)
    out = tuple(series(m, filt) for m in sys_hat.modes)
    return SwitchedSystem(out, sys_hat.graph)
