"""Decentralized safety for coupled networked systems.

Second-order control barrier chains whose cross terms couple neighbor
controls, a negotiation protocol that turns capability deficits into
neighbor control regions, and a minimally invasive safety filter, packaged
with a networked SIS epidemic instance and a scenario CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .barrier import (
    BarrierSpec,
    Psi2Decomposition,
    QuadraticForm,
    decompose_psi2,
    max_capability,
    psi0,
    psi1,
)
from .collab import (
    CollabLedger,
    CollabMessage,
    ProtocolOutcome,
    collaborate,
    collaborative_safety,
    coordinate,
    partition,
)
from .config import ScenarioConfig, load_config, normalize_config, parse_config
from .dynamics import (
    LieTable,
    NeighborhoodState,
    NetworkedSystem,
    SisModel,
    SisParams,
    neighborhood,
    rk4_step,
)
from .errors import (
    CcbfError,
    ConfigError,
    DegenerateWeightsError,
    DimensionError,
    EmptyRegionError,
    GeometryConvergenceError,
    NumericsError,
    ProtocolStallError,
    ProtocolStateError,
    TerminallyInfeasibleError,
    UnsupportedModelError,
)
from .geometry import (
    ControlRegion,
    Halfspace,
    closest_point,
    is_empty,
    project_point,
    weakly_non_interfering,
)
from .graph import NetworkGraph, NeighborSets, in_neighbors, neighbor_sets, out_neighbors
from .graph import validate as validate_graph
from .simulate import (
    ScenarioResult,
    run_scenario,
    run_uncontrolled,
    safety_filter,
    write_messages_csv,
    write_result_csv,
)

__all__ = [
    "CcbfError",
    "ConfigError",
    "DegenerateWeightsError",
    "DimensionError",
    "EmptyRegionError",
    "GeometryConvergenceError",
    "NumericsError",
    "ProtocolStallError",
    "ProtocolStateError",
    "TerminallyInfeasibleError",
    "UnsupportedModelError",
    "NetworkGraph",
    "NeighborSets",
    "in_neighbors",
    "out_neighbors",
    "neighbor_sets",
    "validate_graph",
    "NeighborhoodState",
    "LieTable",
    "SisParams",
    "SisModel",
    "NetworkedSystem",
    "neighborhood",
    "rk4_step",
    "BarrierSpec",
    "QuadraticForm",
    "Psi2Decomposition",
    "psi0",
    "psi1",
    "decompose_psi2",
    "max_capability",
    "Halfspace",
    "ControlRegion",
    "closest_point",
    "project_point",
    "is_empty",
    "weakly_non_interfering",
    "CollabMessage",
    "CollabLedger",
    "ProtocolOutcome",
    "partition",
    "coordinate",
    "collaborate",
    "collaborative_safety",
    "ScenarioResult",
    "safety_filter",
    "run_scenario",
    "run_uncontrolled",
    "write_result_csv",
    "write_messages_csv",
    "ScenarioConfig",
    "parse_config",
    "normalize_config",
    "load_config",
    "__version__",
]
