"""Numerical lab for path-dependent PDEs."""
from .comparison import (
    ComparisonReport,
    DoublingConfig,
    LedgerEntry,
    compare_smooth,
    compare_viscosity_1st,
    compare_viscosity_2nd,
    doubling_functional,
    modulus,
    modulus_probe,
)
from .errors import *  # noqa: F401,F403
from .frozen_max import (
    MaximizationResult,
    brute_force_sup,
    brute_force_sup_pair,
    first_order_conditions,
    left_frozen_maximize,
    left_frozen_maximize_pair,
    verify_rmax,
)
from .functional import (
    PathFunctional,
    builtin,
    builtin_names,
    check_lsc_star,
    check_usc_star,
    classical_lift,
    d_t,
    d_x,
    d_xx,
    derivatives,
    numeric_derivatives,
)
from .jets import (
    FirstOrderJet,
    IshiiCertificate,
    Jet,
    closure_jet_search,
    exact_jet,
    jet_lift,
    subjet_test,
    superjet_test,
    touch_check,
    verify_ishii,
)
from .paths import (
    DomainClass,
    PathStub,
    SpatialGrid,
    TimeGrid,
    classify,
    concat,
    count_continuations,
    distance_first_order,
    distance_parabolic,
    enumerate_continuations,
    flat_extend,
    lattice_stubs,
    random_stubs,
    vertical_bump,
)
from .solver import (
    LatticeSolution,
    LatticeSolver,
    LiftSpec,
    MonteCarloOracle,
    classical_oracle_1d,
    mc_feynman_kac,
    read_solution,
    solution_as_functional,
    solve_lattice,
    solve_lifted,
)
from .viscosity import (
    Generator,
    builtin_generator,
    check_monotonicity,
    is_subsolution,
    is_supersolution,
    strictness_perturb,
)

__version__ = "0.1.0"
