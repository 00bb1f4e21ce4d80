"""Benchmark networks: the trivial loop, delay channels, and the
four-mode inhomogeneous ring.

These are the models exercised by the demo scripts, the CLI bundle, and
the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from .model import (
    ModeRealization,
    PlantMode,
    SwitchedPlant,
    SwitchingGraph,
    as_plant_mode,
    block_assemble,
    bounded_rate_graph,
    build_delay_system,
    complete_graph,
    const_tf,
    first_order_tf,
    packet_drop_graph,
    ring_graph,
)

__all__ = [
    "trivial_network",
    "delay_network",
    "ring_network",
    "scenario_graph",
    "bundled_models",
]


def trivial_network() -> SwitchedPlant:
    """Memoryless network: the oracle sees the control directly."""
    mode = PlantMode(
        np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((0, 1)),
        np.zeros((1, 0)), np.zeros((1, 0)),
        [[0.0]], [[1.0]], [[1.0]], [[0.0]],
    )
    return SwitchedPlant((mode,), ring_graph(1))


def delay_network(h_max: int, graph: SwitchingGraph | None = None) -> SwitchedPlant:
    """Network with a switched delay of ``0..h_max`` before the oracle.

    Mode ``r`` delays the control by ``r - 1`` samples on its way to the
    gradient oracle; the gradient itself returns undelayed.  The default
    graph is the packet-drop (sawtooth) logic.
    """
    delay = build_delay_system(h_max)
    if graph is None:
        graph = packet_drop_graph(h_max) if h_max >= 1 else ring_graph(1)
    if graph.num_modes != h_max + 1:
        raise ValueError("graph must have one vertex per delay value")
    modes = []
    for m in delay.modes:
        n = m.n
        modes.append(PlantMode(
            m.A, np.zeros((n, 1)), m.B,
            m.C, np.zeros((1, n)),
            [[0.0]], m.D, [[1.0]], [[0.0]],
        ))
    return SwitchedPlant(tuple(modes), graph)


def _ring_entries():
    # per mode: (u -> z lag pole, w -> y (gain, pole), u -> y static gain)
    return [
        (0.2, (-1.0, 0.0), 0.0),
        (0.9, (-0.5, 0.2), 3.0),
        (-0.5, (-0.5, 0.3), 0.0),
        (-0.2, (-1.0, 1.2), 3.0),
    ]


def ring_network(d: int = 1) -> SwitchedPlant:
    """Four-mode inhomogeneous network on the ring switching graph.

    Mode 4 carries an unstable gradient-return channel, and the
    regulator data differ between modes; per coordinate the channels are
    first-order lags and static gains.
    """
    modes = []
    for pole_uz, (gain_wy, pole_wy), d22 in _ring_entries():
        grid = [
            [const_tf(0.0), first_order_tf(1.0, pole_uz)],
            [first_order_tf(gain_wy, pole_wy), const_tf(d22)],
        ]
        modes.append(as_plant_mode(block_assemble(grid), n_w=1, n_z=1))
    plant = SwitchedPlant(tuple(modes), ring_graph(4))
    if d != 1:
        from .model import kron_lift

        plant = kron_lift(plant, d)
    return plant


def scenario_graph(scenario: int, h_max: int = 3) -> SwitchingGraph:
    """Delay-switching scenarios: rate-1, rate-2, snap-to-zero, arbitrary."""
    delays = list(range(h_max + 1))
    if scenario == 1:
        return bounded_rate_graph(delays, 1)
    if scenario == 2:
        return bounded_rate_graph(delays, 2)
    if scenario == 3:
        return packet_drop_graph(h_max)
    if scenario == 4:
        g = complete_graph(h_max + 1)
        return SwitchingGraph(g.num_modes, g.edges, labels=tuple(delays))
    raise ValueError("scenario must be 1..4")


def bundled_models() -> dict:
    """Name -> plant mapping for the models shipped as data files."""
    out = {"trivial": trivial_network(), "ring": ring_network()}
    for h in range(0, 7):
        out[f"delay{h}_snap"] = delay_network(h)
    for s, tag in [(1, "rate1"), (2, "rate2"), (3, "snap"), (4, "arbitrary")]:
        out[f"delay3_{tag}"] = delay_network(3, graph=scenario_graph(s, 3))
    return out
