"""Spatial logistic birth-death model: simulation, estimation, verification."""

__version__ = "0.1.0"

from .kernels import (
    InvalidKernelError,
    Kernel,
    ModelParams,
    NoFiniteTheta,
    check_theta_condition,
    domination_theta,
    exponential_kernel,
    gaussian_kernel,
    tabulated_kernel,
    tophat_kernel,
    zero_kernel,
)
from .configspace import (
    Configuration,
    SiteLattice,
    SubsetSpace,
    TruncatedFunction,
    coefficient_norm,
    correlation_norm,
    correlation_of_density,
    density_of_correlation,
    energy_minus,
    energy_plus,
    energy_total,
    lp_integral,
    moebius_inverse,
    pairing,
    torus_distance,
    zeta_transform,
)
from .operators import (
    OvcyannikovSchedule,
    TruncatedOperator,
    build_coefficient_generator,
    build_correlation_generator,
    build_forward_generator,
    build_observable_generator,
    dual_pairing_residual,
    duality_battery,
    existence_time,
    local_density_consistency,
    picard_iterate,
    propagator,
    semigroup_apply,
    stochasticity_battery,
    verify_bounds,
)
from .simulator import SimConfig, SimState, Snapshot, make_stream, run
from .estimators import cluster_index, dobrushin_moment, estimate_k1, estimate_k2_radial
from .hierarchy import (
    HierarchySolver,
    HierarchyState,
    RadialGrid,
    hierarchy_rhs,
    integrate_hierarchy,
)
from .kinetic import (
    DensityField,
    front_speed,
    integrate_kinetic,
    kinetic_rhs,
    linear_spreading_speed,
    logistic_solution,
)
