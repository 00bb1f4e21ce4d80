"""State-space modes, switching graphs, and interconnection algebra.

Everything here is a plain immutable container over dense numpy arrays.
Mode indices are 1-based to match the usual convention for switched
systems (and the JSON file format); Python lists of modes are indexed
with ``modes[r - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidModelError, WellPosednessError

__all__ = [
    "ModeRealization",
    "SwitchingGraph",
    "SwitchedSystem",
    "PlantMode",
    "SwitchedPlant",
    "blockmat",
    "build_delay_system",
    "bounded_rate_graph",
    "packet_drop_graph",
    "ring_graph",
    "complete_graph",
    "validate_graph",
    "series",
    "star_controller",
    "first_order_tf",
    "const_tf",
    "block_assemble",
    "as_plant_mode",
    "kron_lift",
    "simulate_switched",
    "simulate_plant_mode",
]


def _as_matrix(M, rows=None, cols=None) -> np.ndarray:
    """Coerce to a 2-D float array, checking finiteness and optional shape."""
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.size and not np.all(np.isfinite(A)):
        raise InvalidModelError("matrix contains non-finite entries")
    if rows is not None and A.shape[0] != rows:
        raise InvalidModelError(f"expected {rows} rows, got {A.shape[0]}")
    if cols is not None and A.shape[1] != cols:
        raise InvalidModelError(f"expected {cols} cols, got {A.shape[1]}")
    return A


def blockmat(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Assemble a block matrix, tolerating zero-sized blocks.

    ``np.block`` chokes on empty blocks, which occur routinely here
    (static modes have zero states), so allocation is done by hand.
    """
    rows = [[np.atleast_2d(np.asarray(b, dtype=float)) for b in row] for row in rows]
    row_h = [row[0].shape[0] for row in rows]
    col_w = [b.shape[1] for b in rows[0]]
    for i, row in enumerate(rows):
        if len(row) != len(col_w):
            raise InvalidModelError("ragged block structure")
        for j, b in enumerate(row):
            if b.shape[0] != row_h[i] or b.shape[1] != col_w[j]:
                raise InvalidModelError(
                    f"block ({i},{j}) has shape {b.shape}, expected "
                    f"({row_h[i]},{col_w[j]})"
                )
    out = np.zeros((sum(row_h), sum(col_w)))
    r0 = 0
    for i, row in enumerate(rows):
        c0 = 0
        for j, b in enumerate(row):
            out[r0 : r0 + row_h[i], c0 : c0 + col_w[j]] = b
            c0 += col_w[j]
        r0 += row_h[i]
    return out


# ---------------------------------------------------------------------------
# core containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeRealization:
    """One state-space quadruple ``x+ = A x + B u, y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A)
        if A.shape[0] != A.shape[1]:
            raise InvalidModelError("A must be square")
        n = A.shape[0]
        B = _as_matrix(self.B, rows=n)
        C = _as_matrix(self.C, cols=n)
        D = _as_matrix(self.D, rows=C.shape[0], cols=B.shape[1])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]

    def step(self, x: np.ndarray, u: np.ndarray):
        x = np.asarray(x, dtype=float).reshape(self.n)
        u = np.asarray(u, dtype=float).reshape(self.n_in)
        return self.A @ x + self.B @ u, self.C @ x + self.D @ u

    def impulse(self, length: int, channel: int = 0) -> np.ndarray:
        """Impulse response samples ``y_0..y_{length-1}`` for one input channel."""
        x = np.zeros(self.n)
        out = np.zeros((length, self.n_out))
        for k in range(length):
            u = np.zeros(self.n_in)
            if k == 0:
                u[channel] = 1.0
            x, out[k] = self.step(x, u)
        return out

    def simulate(self, u_seq: np.ndarray, x0=None) -> np.ndarray:
        """Drive the mode with an input sequence, returning the output sequence."""
        u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
        if u_seq.shape[1] != self.n_in:
            u_seq = u_seq.reshape(-1, self.n_in)
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float).reshape(self.n)
        ys = np.zeros((u_seq.shape[0], self.n_out))
        for k, u in enumerate(u_seq):
            ys[k] = self.C @ x + self.D @ u
            x = self.A @ x + self.B @ u
        return ys


@dataclass(frozen=True)
class SwitchingGraph:
    """Directed graph of admissible mode transitions (vertices 1..N)."""

    num_modes: int
    edges: frozenset
    labels: tuple | None = None

    def __post_init__(self):
        if self.num_modes < 1:
            raise InvalidModelError("graph needs at least one vertex")
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if not (1 <= a <= self.num_modes and 1 <= b <= self.num_modes):
                raise InvalidModelError(f"edge ({a},{b}) leaves 1..{self.num_modes}")
        object.__setattr__(self, "edges", edges)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != self.num_modes:
                raise InvalidModelError("one label per vertex required")
            object.__setattr__(self, "labels", labels)

    def out_neighbors(self, r: int) -> list:
        return sorted(b for a, b in self.edges if a == r)

    def sorted_edges(self) -> list:
        return sorted(self.edges)

    @property
    def is_valid(self) -> bool:
        ok, _ = validate_graph(self)
        return ok


def validate_graph(g: SwitchingGraph):
    """Check that every vertex can reach a vertex lying on a cycle.

    Returns ``(ok, offenders)`` where ``offenders`` lists the vertices
    from which no cycle is reachable.  Under this condition every vertex
    has at least one outgoing edge, so infinite admissible paths exist
    from everywhere.
    """
    verts = range(1, g.num_modes + 1)
    succ = {v: set() for v in verts}
    for a, b in g.edges:
        succ[a].add(b)

    # Tarjan-free: a vertex lies on a cycle iff it can reach itself in >= 1 step.
    def reaches(start: int, targets: set) -> bool:
        seen, stack = set(), [start]
        while stack:
            v = stack.pop()
            for w in succ[v]:
                if w in targets:
                    return True
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    on_cycle = {v for v in verts if reaches(v, {v})}
    offenders = [v for v in verts if v not in on_cycle and not reaches(v, on_cycle)]
    return (len(offenders) == 0, offenders)


@dataclass(frozen=True)
class SwitchedSystem:
    """A family of mode realizations sharing one switching graph."""

    modes: tuple
    graph: SwitchingGraph

    def __post_init__(self):
        modes = tuple(self.modes)
        if len(modes) != self.graph.num_modes:
            raise InvalidModelError("modes and graph vertex count differ")
        dims = {(m.n, m.n_in, m.n_out) for m in modes}
        if len(dims) != 1:
            raise InvalidModelError("all modes must share (n, n_u, n_y)")
        object.__setattr__(self, "modes", modes)

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def n_in(self) -> int:
        return self.modes[0].n_in

    @property
    def n_out(self) -> int:
        return self.modes[0].n_out

    def mode(self, r: int) -> ModeRealization:
        return self.modes[r - 1]


@dataclass(frozen=True)
class PlantMode:
    """One mode of a two-port network ``(w, u) -> (z, y)``."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A)
        if A.shape[0] != A.shape[1]:
            raise InvalidModelError("A must be square")
        n = A.shape[0]
        B1 = _as_matrix(self.B1, rows=n)
        B2 = _as_matrix(self.B2, rows=n)
        C1 = _as_matrix(self.C1, cols=n)
        C2 = _as_matrix(self.C2, cols=n)
        d, ny = C1.shape[0], C2.shape[0]
        nw, nu = B1.shape[1], B2.shape[1]
        D11 = _as_matrix(self.D11, rows=d, cols=nw)
        D12 = _as_matrix(self.D12, rows=d, cols=nu)
        D21 = _as_matrix(self.D21, rows=ny, cols=nw)
        D22 = _as_matrix(self.D22, rows=ny, cols=nu)
        for name, val in [("A", A), ("B1", B1), ("B2", B2), ("C1", C1), ("C2", C2),
                          ("D11", D11), ("D12", D12), ("D21", D21), ("D22", D22)]:
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B1.shape[1]

    @property
    def n_u(self) -> int:
        return self.B2.shape[1]

    @property
    def n_z(self) -> int:
        return self.C1.shape[0]

    @property
    def n_y(self) -> int:
        return self.C2.shape[0]

    def as_realization(self) -> ModeRealization:
        """Flatten the channel partition into a single (A, B, C, D)."""
        return ModeRealization(
            self.A,
            blockmat([[self.B1, self.B2]]),
            blockmat([[self.C1], [self.C2]]),
            blockmat([[self.D11, self.D12], [self.D21, self.D22]]),
        )


@dataclass(frozen=True)
class SwitchedPlant:
    """Per-mode partitioned network model plus its switching graph."""

    modes: tuple
    graph: SwitchingGraph

    def __post_init__(self):
        modes = tuple(self.modes)
        if len(modes) != self.graph.num_modes:
            raise InvalidModelError("modes and graph vertex count differ")
        dims = {(m.n, m.n_w, m.n_u, m.n_z, m.n_y) for m in modes}
        if len(dims) != 1:
            raise InvalidModelError("all plant modes must share channel dims")
        object.__setattr__(self, "modes", modes)

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def d(self) -> int:
        # oracle channel width: w and z must agree for a gradient loop
        return self.modes[0].n_w

    @property
    def n_u(self) -> int:
        return self.modes[0].n_u

    @property
    def n_y(self) -> int:
        return self.modes[0].n_y

    def mode(self, r: int) -> PlantMode:
        return self.modes[r - 1]


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_delay_system(h_max: int) -> SwitchedSystem:
    """Switched realization of a time-varying delay in ``0..h_max``.

    Mode ``r`` realizes a delay of ``r - 1`` samples through a length
    ``h_max`` shift register; mode 1 is the direct feedthrough.  The
    returned graph is a placeholder (all self-loops); attach one of the
    delay graphs below for an actual switching model.
    """
    if h_max < 0:
        raise InvalidModelError("h_max must be nonnegative")
    if h_max == 0:
        modes = [ModeRealization(np.zeros((0, 0)), np.zeros((0, 1)),
                                 np.zeros((1, 0)), np.ones((1, 1)))]
        return SwitchedSystem(tuple(modes), ring_graph(1))
    A = np.zeros((h_max, h_max))
    for i in range(1, h_max):
        A[i, i - 1] = 1.0
    B = np.zeros((h_max, 1))
    B[0, 0] = 1.0
    modes = []
    for r in range(1, h_max + 2):
        C = np.zeros((1, h_max))
        if r == 1:
            D = np.ones((1, 1))
        else:
            D = np.zeros((1, 1))
            C[0, r - 2] = 1.0
        modes.append(ModeRealization(A, B, C, D))
    graph = SwitchingGraph(h_max + 1, frozenset((r, r) for r in range(1, h_max + 2)),
                           labels=tuple(range(h_max + 1)))
    return SwitchedSystem(tuple(modes), graph)


def bounded_rate_graph(delay_values: Sequence[int], max_step: int) -> SwitchingGraph:
    """Graph for a delay changing by at most ``max_step`` per tick."""
    delays = [int(v) for v in delay_values]
    if not delays:
        raise InvalidModelError("delay_values must be nonempty")
    if any(b <= a for a, b in zip(delays, delays[1:])):
        raise InvalidModelError("delay_values must be strictly increasing")
    if max_step < 1:
        raise InvalidModelError("max_step must be positive")
    n = len(delays)
    edges = {(i + 1, j + 1) for i in range(n) for j in range(n)
             if abs(delays[j] - delays[i]) <= max_step}
    return SwitchingGraph(n, frozenset(edges), labels=tuple(delays))


def packet_drop_graph(h_max: int, loop_at_zero: bool = False) -> SwitchingGraph:
    """Sawtooth delay graph: +1 on a drop, snap to 0 on success.

    Vertex ``r`` carries delay ``r - 1``.  There is no self-loop at
    delay 0 unless ``loop_at_zero`` is set.
    """
    if h_max < 1:
        raise InvalidModelError("h_max must be >= 1")
    edges = set()
    for d in range(h_max):
        edges.add((d + 1, d + 2))          # delay d -> d + 1
    for d in range(1, h_max + 1):
        edges.add((d + 1, 1))              # delay d -> 0
    if loop_at_zero:
        edges.add((1, 1))
    return SwitchingGraph(h_max + 1, frozenset(edges), labels=tuple(range(h_max + 1)))


def ring_graph(n: int) -> SwitchingGraph:
    """Cycle 1 -> 2 -> ... -> n -> 1 with a self-loop at every vertex."""
    if n < 1:
        raise InvalidModelError("n must be positive")
    edges = {(r, r) for r in range(1, n + 1)}
    edges |= {(r, r % n + 1) for r in range(1, n + 1)}
    return SwitchingGraph(n, frozenset(edges))


def complete_graph(n: int) -> SwitchingGraph:
    """All ordered pairs: arbitrary switching."""
    if n < 1:
        raise InvalidModelError("n must be positive")
    return SwitchingGraph(n, frozenset((a, b) for a in range(1, n + 1)
                                       for b in range(1, n + 1)))


# ---------------------------------------------------------------------------
# interconnections
# ---------------------------------------------------------------------------


def series(first: ModeRealization, second: ModeRealization) -> ModeRealization:
    """Cascade ``u -> first -> second -> y`` with state ``[x2; x1]``."""
    if first.n_out != second.n_in:
        raise InvalidModelError(
            f"series: output width {first.n_out} != input width {second.n_in}")
    A = blockmat([
        [second.A, second.B @ first.C],
        [np.zeros((first.n, second.n)), first.A],
    ])
    B = blockmat([[second.B @ first.D], [first.B]])
    C = blockmat([[second.C, second.D @ first.C]])
    D = second.D @ first.D
    return ModeRealization(A, B, C, D)


def star_controller(plant: SwitchedPlant, controller: SwitchedSystem) -> SwitchedSystem:
    """Close the ``(u, y)`` channels of a plant with a controller.

    Returns the switched closed loop over ``w -> z`` with state
    ``[x_plant; x_controller]``.  Raises if the algebraic loop
    ``(I - D_K D22)`` is singular in some mode.
    """
    if controller.n_in != plant.n_y or controller.n_out != plant.n_u:
        raise InvalidModelError("controller widths do not match plant (y, u)")
    if plant.graph.edges != controller.graph.edges:
        raise InvalidModelError("plant and controller must share one graph")
    closed = []
    for r in range(1, plant.graph.num_modes + 1):
        P = plant.mode(r)
        K = controller.mode(r)
        loop = np.eye(plant.n_u) - K.D @ P.D22
        if abs(np.linalg.det(loop)) < 1e-12:
            raise WellPosednessError(f"ill-posed algebraic loop in mode {r}")
        S = np.linalg.inv(loop)
        # u = S (DK C2 x + CK xi + DK D21 w)
        u_x = S @ K.D @ P.C2
        u_xi = S @ K.C
        u_w = S @ K.D @ P.D21
        A = blockmat([
            [P.A + P.B2 @ u_x, P.B2 @ u_xi],
            [K.B @ (P.C2 + P.D22 @ u_x), K.A + K.B @ P.D22 @ u_xi],
        ])
        B = blockmat([
            [P.B1 + P.B2 @ u_w],
            [K.B @ (P.D21 + P.D22 @ u_w)],
        ])
        C = blockmat([[P.C1 + P.D12 @ u_x, P.D12 @ u_xi]])
        D = P.D11 + P.D12 @ u_w
        closed.append(ModeRealization(A, B, C, D))
    return SwitchedSystem(tuple(closed), plant.graph)


def first_order_tf(gain: float, pole: float) -> ModeRealization:
    """SISO realization of ``gain / (z - pole)``."""
    return ModeRealization(np.array([[pole]]), np.array([[1.0]]),
                           np.array([[gain]]), np.array([[0.0]]))


def const_tf(gain: float) -> ModeRealization:
    """Stateless SISO gain."""
    return ModeRealization(np.zeros((0, 0)), np.zeros((0, 1)),
                           np.zeros((1, 0)), np.array([[float(gain)]]))


def block_assemble(entries: Sequence[Sequence[ModeRealization]]) -> ModeRealization:
    """Stack a grid of SISO realizations into one MIMO realization.

    Entry ``(i, j)`` is the map from input ``j`` to output ``i``.  States
    are concatenated in row-major grid order.
    """
    p = len(entries)
    q = len(entries[0])
    for row in entries:
        if len(row) != q:
            raise InvalidModelError("ragged grid")
        for e in row:
            if e.n_in != 1 or e.n_out != 1:
                raise InvalidModelError("grid entries must be SISO")
    blocks = [e for row in entries for e in row]
    n_tot = sum(e.n for e in blocks)
    A = np.zeros((n_tot, n_tot))
    B = np.zeros((n_tot, q))
    C = np.zeros((p, n_tot))
    D = np.zeros((p, q))
    ofs = 0
    for i in range(p):
        for j in range(q):
            e = entries[i][j]
            sl = slice(ofs, ofs + e.n)
            A[sl, sl] = e.A
            B[sl, j : j + 1] = e.B
            C[i : i + 1, sl] = e.C
            D[i, j] = e.D[0, 0]
            ofs += e.n
    return ModeRealization(A, B, C, D)


def as_plant_mode(sys: ModeRealization, n_w: int, n_z: int) -> PlantMode:
    """Split a flat realization into the two-port ``(w, u) -> (z, y)`` form."""
    if n_w > sys.n_in or n_z > sys.n_out:
        raise InvalidModelError("channel widths exceed system dimensions")
    return PlantMode(
        sys.A,
        sys.B[:, :n_w], sys.B[:, n_w:],
        sys.C[:n_z, :], sys.C[n_z:, :],
        sys.D[:n_z, :n_w], sys.D[:n_z, n_w:],
        sys.D[n_z:, :n_w], sys.D[n_z:, n_w:],
    )


def _kron(M: np.ndarray, d: int) -> np.ndarray:
    return np.kron(M, np.eye(d))


def kron_lift(obj, d: int):
    """Replace every block by ``block (x) I_d`` (per-coordinate lifting)."""
    if d < 1:
        raise InvalidModelError("d must be positive")
    if d == 1:
        return obj
    if isinstance(obj, ModeRealization):
        return ModeRealization(_kron(obj.A, d), _kron(obj.B, d),
                               _kron(obj.C, d), _kron(obj.D, d))
    if isinstance(obj, PlantMode):
        return PlantMode(*[_kron(getattr(obj, f), d) for f in
                           ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22")])
    if isinstance(obj, SwitchedSystem):
        return SwitchedSystem(tuple(kron_lift(m, d) for m in obj.modes), obj.graph)
    if isinstance(obj, SwitchedPlant):
        return SwitchedPlant(tuple(kron_lift(m, d) for m in obj.modes), obj.graph)
    raise TypeError(f"cannot kron-lift {type(obj).__name__}")


# ---------------------------------------------------------------------------
# open-loop simulation helpers (oracles for the tests, plumbing elsewhere)
# ---------------------------------------------------------------------------


def simulate_switched(sys: SwitchedSystem, path: Sequence[int],
                      u_seq: np.ndarray, x0=None) -> np.ndarray:
    """Run a switched system along a mode path, returning outputs."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(len(path), sys.n_in)
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(sys.n)
    ys = np.zeros((len(path), sys.n_out))
    for k, (r, u) in enumerate(zip(path, u_seq)):
        m = sys.mode(int(r))
        ys[k] = m.C @ x + m.D @ u
        x = m.A @ x + m.B @ u
    return ys


def simulate_plant_mode(plant: SwitchedPlant, path: Sequence[int],
                        w_seq: np.ndarray, u_seq: np.ndarray, x0=None):
    """Run a two-port plant open loop, returning ``(z_seq, y_seq)``."""
    T = len(path)
    w_seq = np.asarray(w_seq, dtype=float).reshape(T, plant.d)
    u_seq = np.asarray(u_seq, dtype=float).reshape(T, plant.n_u)
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float).reshape(plant.n)
    zs = np.zeros((T, plant.modes[0].n_z))
    ys = np.zeros((T, plant.n_y))
    for k in range(T):
        P = plant.mode(int(path[k]))
        zs[k] = P.C1 @ x + P.D11 @ w_seq[k] + P.D12 @ u_seq[k]
        ys[k] = P.C2 @ x + P.D21 @ w_seq[k] + P.D22 @ u_seq[k]
        x = P.A @ x + P.B1 @ w_seq[k] + P.B2 @ u_seq[k]
    return zs, ys
