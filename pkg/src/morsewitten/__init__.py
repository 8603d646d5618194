"""Morse homology of closed manifolds given as level sets in R^N.

Critical points of a Morse function are found by multistart Newton, the
isolated negative-gradient flow lines between them are counted with signs,
and the resulting Morse-Witten complex yields homology and cohomology over
Z and Z2.  Continuation maps compare the complexes of two functions.
"""

from .complex import (
    MorseComplex,
    assemble_complex,
    coboundary_complex,
    cohomology,
    homology,
    homology_basis,
    induced_map_on_homology,
    morse_inequalities_check,
    poincare_duality_check,
    smith_normal_form,
)
from .continuation import (
    build_admissible_homotopy,
    build_product_system,
    compute_psi,
    continuation,
    kappa_lower_bound,
    morse_complex,
    verify_continuation,
)
from .critical import assign_orientations, find_critical_points
from .errors import MorseError
from .flow import integrate_trajectory, linearized_flow_at_critical, local_stable_graph
from .geometry import ManifoldSpec, product_with_circle
from .moduli import (
    OrbitCatalog,
    check_morse_smale,
    characteristic_sign,
    find_connecting_orbits,
    pair_broken_orbits,
    trace_connecting_moduli,
)
from .scenarios import builtin
from .symbolics import parse_expression

__all__ = [
    "ManifoldSpec",
    "MorseComplex",
    "MorseError",
    "OrbitCatalog",
    "assemble_complex",
    "assign_orientations",
    "build_admissible_homotopy",
    "build_product_system",
    "builtin",
    "characteristic_sign",
    "check_morse_smale",
    "coboundary_complex",
    "cohomology",
    "compute_psi",
    "continuation",
    "find_connecting_orbits",
    "find_critical_points",
    "homology",
    "homology_basis",
    "induced_map_on_homology",
    "integrate_trajectory",
    "kappa_lower_bound",
    "linearized_flow_at_critical",
    "local_stable_graph",
    "morse_complex",
    "morse_inequalities_check",
    "pair_broken_orbits",
    "parse_expression",
    "poincare_duality_check",
    "product_with_circle",
    "smith_normal_form",
    "trace_connecting_moduli",
    "verify_continuation",
]
