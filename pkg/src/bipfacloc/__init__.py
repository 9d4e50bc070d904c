"""Distributed O(1)-approximate metric facility location on a complete
bipartite CONGEST network, with exact sequential reference solvers."""

from .instance import (
    Instance,
    InvalidInstance,
    RadiusProfile,
    Solution,
    Violation,
    charge,
    compute_radii,
    compute_radius,
    facility_distance,
    generate_instance,
    load_instance,
    rbar,
    save_instance,
    solution_cost,
    validate_metric,
)
from .exact import brute_force_opt, mettu_plaxton, verify_mp_sparseness
from .facloc import build_overlay, locate_facilities, verify_solution
from .rulingset import OverlayGraph, compute_2ruling_set, greedy_mis, verify_ruling
from .mdd import disseminate

__version__ = "0.1.0"
