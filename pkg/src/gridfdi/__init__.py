"""Unbalanced distribution grid workbench: load flow, WLS state estimation,
bad-data detection and constraint-based false data injection design."""

from gridfdi.grid import (
    Branch,
    Grid,
    GridError,
    Load,
    Node,
    Shunt,
    bundled_grid,
    load_grid,
    merge_switches,
    parse_grid,
    serialize_grid,
    zero_injection_nodes,
)
from gridfdi.powerflow import (
    MeasurementSet,
    Network,
    PhasorState,
    Reading,
    SteadyState,
    add_noise,
    branch_flow,
    measure_all,
    node_injection,
    solve_loadflow,
)
from gridfdi.estimation import detect_bad_data, estimate, jacobian
from gridfdi.attack import (
    SV,
    changeable_state_variables,
    build_constraints,
    dc_attack_baseline,
    design_attack_a1,
    design_attack_a2,
    find_all_attack_areas,
    find_attack_areas,
)
from gridfdi.assessment import assess, compare_sets

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Grid",
    "GridError",
    "Load",
    "MeasurementSet",
    "Network",
    "Node",
    "PhasorState",
    "Reading",
    "SV",
    "Shunt",
    "SteadyState",
    "add_noise",
    "assess",
    "branch_flow",
    "build_constraints",
    "bundled_grid",
    "changeable_state_variables",
    "compare_sets",
    "dc_attack_baseline",
    "design_attack_a1",
    "design_attack_a2",
    "detect_bad_data",
    "estimate",
    "find_all_attack_areas",
    "find_attack_areas",
    "jacobian",
    "load_grid",
    "measure_all",
    "merge_switches",
    "node_injection",
    "parse_grid",
    "serialize_grid",
    "solve_loadflow",
    "zero_injection_nodes",
]
