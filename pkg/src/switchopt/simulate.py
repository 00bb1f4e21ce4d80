"""Test functions, deployment over switching paths, and baselines.

The test objective is a random strongly convex quadratic plus a scaled
symmetric log-sum-exp term; its Hessian is sandwiched between the
quadratic part and the quadratic part plus the log-sum-exp budget, so
membership in the sector class holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidModelError
from .model import ModeRealization, SwitchedSystem, ring_graph
from .transforms import SectorSpec

__all__ = [
    "TestFunction",
    "SimulationTrace",
    "make_function",
    "minimize_oracle",
    "deploy",
    "empirical_rate",
    "baseline_gd",
    "baseline_tm",
    "random_path",
]

DIST_FLOOR = 1e-13


@dataclass(frozen=True)
class TestFunction:
    """Quadratic plus log-sum-exp objective inside the sector class."""

    Lambda: np.ndarray
    b: np.ndarray
    L_prime: float
    sector: SectorSpec
    seed: int

    @property
    def d(self) -> int:
        return self.b.size

    @property
    def lse_weight(self) -> float:
        return self.sector.L - self.L_prime

    def value(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float).reshape(self.d)
        quad = 0.5 * z @ self.Lambda @ z + self.b @ z
        lse = logsumexp(np.concatenate([z, -z]))
        return float(quad + self.lse_weight * lse)

    def grad(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(self.d)
        stacked = np.concatenate([z, -z])
        w = np.exp(stacked - logsumexp(stacked))
        soft = w[: self.d] - w[self.d :]
        return self.Lambda @ z + self.b + self.lse_weight * soft

    def hessian(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(self.d)
        stacked = np.concatenate([z, -z])
        w = np.exp(stacked - logsumexp(stacked))
        soft = w[: self.d] - w[self.d :]
        diag = w[: self.d] + w[self.d :]
        H_lse = np.diag(diag) - np.outer(soft, soft)
        return self.Lambda + self.lse_weight * H_lse


def make_function(sector: SectorSpec, L_prime: float, d: int,
                  seed: int = 0) -> TestFunction:
    """Draw a random objective with Hessian spectrum inside ``[m, L]``.

    The quadratic part gets eigenvalues uniform in ``[m, L']`` so the
    log-sum-exp term (curvature in ``[0, L - L']``) cannot push the
    total curvature past ``L``.
    """
    if not (sector.m < L_prime <= sector.L):
        raise InvalidModelError("need m < L' <= L")
    rng = np.random.default_rng(seed)
    eigs = rng.uniform(sector.m, L_prime, size=d)
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    Lam = Q @ np.diag(eigs) @ Q.T
    Lam = 0.5 * (Lam + Lam.T)
    b = rng.normal(size=d)
    return TestFunction(Lam, b, float(L_prime), sector, seed)


def minimize_oracle(f: TestFunction, tol: float = 1e-12,
                    max_iter: int = 200) -> np.ndarray:
    """Damped Newton solve of ``grad f = 0`` (independent of any deployment)."""
    z = np.zeros(f.d)
    for _ in range(max_iter):
        g = f.grad(z)
        if np.linalg.norm(g) <= tol:
            return z
        step = np.linalg.solve(f.hessian(z), g)
        t, val = 1.0, f.value(z)
        while t > 1e-8 and f.value(z - t * step) > val - 1e-4 * t * (g @ step):
            t *= 0.5
        z = z - t * step
    g = f.grad(z)
    if np.linalg.norm(g) > 1e3 * tol:
        raise RuntimeError(f"Newton failed to converge, |grad| = {np.linalg.norm(g):.2e}")
    return z


@dataclass(frozen=True)
class SimulationTrace:
    states: np.ndarray     # (T+1, n)
    iterates: np.ndarray   # (T, d)
    gradients: np.ndarray  # (T, d)
    path: np.ndarray       # (T,)
    distances: np.ndarray  # (T,)
    z_star: np.ndarray


def deploy(closed: SwitchedSystem, f: TestFunction, path, zeta0=None,
           T: int | None = None, z_star=None) -> SimulationTrace:
    """Run the algorithm loop ``w_k = grad f(z_k)`` along a mode path.

    Requires zero feedthrough on the gradient channel (an algebraic loop
    through the oracle would need an implicit solve per step).
    """
    path = np.asarray(path, dtype=int)
    T = len(path) if T is None else min(T, len(path))
    d = f.d
    n = closed.n
    if closed.n_out != d or closed.n_in != d:
        raise InvalidModelError(
            f"loop width {closed.n_out} does not match objective dimension {d}")
    if any(np.any(m.D != 0.0) for m in closed.modes if m.D.size):
        raise InvalidModelError("gradient loop must have zero feedthrough")
    zeta = np.zeros(n) if zeta0 is None else np.asarray(zeta0, dtype=float).reshape(n)
    z_star = minimize_oracle(f) if z_star is None else np.asarray(z_star, dtype=float)
    states = np.zeros((T + 1, n))
    iterates = np.zeros((T, d))
    gradients = np.zeros((T, d))
    dists = np.zeros(T)
    states[0] = zeta
    for k in range(T):
        mode = closed.mode(int(path[k]))
        z = mode.C @ zeta
        w = f.grad(z)
        iterates[k] = z
        gradients[k] = w
        dists[k] = np.linalg.norm(z - z_star)
        zeta = mode.A @ zeta + mode.B @ w
        states[k + 1] = zeta
        if not np.all(np.isfinite(zeta)):
            # hard divergence: freeze the remaining record at infinity
            states[k + 1 :] = np.inf
            iterates[k + 1 :] = np.inf
            dists[k + 1 :] = np.inf
            break
    return SimulationTrace(states, iterates, gradients, path[:T], dists, z_star)


def empirical_rate(trace: SimulationTrace, burn_in: float = 0.3) -> float:
    """Least-squares decay rate of ``|z_k - z*|`` after a burn-in window.

    Distances at the floating-point floor are excluded; returns NaN when
    fewer than two usable samples remain, +inf on divergence.
    """
    dists = trace.distances
    if not np.all(np.isfinite(dists)):
        return np.inf
    T = len(dists)
    k0 = int(burn_in * T)
    ks, ys = [], []
    for k in range(k0, T):
        if dists[k] > DIST_FLOOR:
            ks.append(k)
            ys.append(np.log(dists[k]))
    if len(ks) < 2:
        return np.nan
    ks = np.asarray(ks, dtype=float)
    ys = np.asarray(ys)
    slope = np.polyfit(ks, ys, 1)[0]
    return float(np.exp(slope))


def baseline_gd(sector: SectorSpec) -> SwitchedSystem:
    """Gradient descent with the optimally tuned step ``2 / (m + L)``."""
    alpha = 2.0 / (sector.m + sector.L)
    mode = ModeRealization([[1.0]], [[-alpha]], [[1.0]], [[0.0]])
    return SwitchedSystem((mode,), ring_graph(1))


def baseline_tm(sector: SectorSpec) -> SwitchedSystem:
    """Triple momentum tuned for the sector, as a one-mode controller."""
    rho = 1.0 - np.sqrt(sector.m / sector.L)
    L = sector.L
    beta = rho**2 / (2.0 - rho)
    A = np.array([[1.0, 1.0 + beta], [0.0, beta]])
    B = np.array([[-(1.0 + rho) / L], [(1.0 + rho) / L]])
    C = np.array([[1.0, rho**2 / ((1.0 + rho) * (2.0 - rho))]])
    D = np.zeros((1, 1))
    return SwitchedSystem((ModeRealization(A, B, C, D),), ring_graph(1))


def random_path(graph, T: int, seed: int = 0, start: int | None = None) -> np.ndarray:
    """Uniform random admissible walk of length ``T`` (deterministic per seed)."""
    rng = np.random.default_rng(seed)
    succ = {r: graph.out_neighbors(r) for r in range(1, graph.num_modes + 1)}
    starts = [r for r in succ if succ[r]]
    if start is None:
        r = int(rng.choice(starts))
    else:
        r = int(start)
    path = np.zeros(T, dtype=int)
    for k in range(T):
        path[k] = r
        nxt = succ[r]
        if not nxt:
            raise InvalidModelError(f"walk stalled at vertex {r}")
        r = int(nxt[rng.integers(len(nxt))])
    return path
