"""Certification and synthesis of optimization algorithms over switched
networks: state-space models, multiplier-based rate analysis, regulator
equations, output-feedback synthesis, and deployment simulation.
"""

from .analysis import (
    RateCertificate,
    RegulationWitness,
    bisect_rate,
    feasible_at_rate,
    find_regulation_witness,
    threshold_search,
)
from .alternation import AlternationTrace, run_alternation
from .benchmarks import delay_network, ring_network, scenario_graph, trivial_network
from .errors import (
    InvalidModelError,
    ReconstructionError,
    RegulationError,
    RegulatorInfeasibleError,
    SolverFailureError,
    SwitchoptError,
    WellPosednessError,
)
from .model import (
    ModeRealization,
    PlantMode,
    SwitchedPlant,
    SwitchedSystem,
    SwitchingGraph,
    as_plant_mode,
    block_assemble,
    bounded_rate_graph,
    build_delay_system,
    complete_graph,
    const_tf,
    first_order_tf,
    kron_lift,
    packet_drop_graph,
    ring_graph,
    series,
    star_controller,
    validate_graph,
)
from .regulation import (
    RegulatorSolution,
    assemble_controller,
    build_internal_model,
    connect_plant_model,
    solve_regulator,
    verify_closed_loop_regulation,
)
from .simulate import (
    SimulationTrace,
    TestFunction,
    baseline_gd,
    baseline_tm,
    deploy,
    empirical_rate,
    make_function,
    minimize_oracle,
    random_path,
)
from .synthesis import (
    Subcontroller,
    SynthesisResult,
    bisect_synthesis,
    delta_plant,
    reconstruct,
    synth_cascade,
    synth_feasible_at_rate,
)
from .transforms import (
    FilterCoefficients,
    SectorSpec,
    check_admissible,
    exp_weight_signals,
    filtered_loop,
    loop_signal_map,
    loop_signal_unmap,
    rho_weight_and_loop,
    zf_realization,
)

__version__ = "0.1.0"
