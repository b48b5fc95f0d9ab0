"""Attractive lattice gases in quenched random environment.

Simulation of bounded-occupancy particle systems driven by a space-time
Poisson construction, estimation of the homogenized flux from equilibrium
runs, entropy solutions of the limiting conservation law, and a harness that
confronts the two across scales.
"""

from .engine import (
    Configuration,
    CoupledEnsemble,
    EventStream,
    apply_update,
    build_runtime,
    count_current,
    evolve,
    evolve_coupled,
    kstep_target,
    stream_for,
    traffic_direct_rate,
    traffic_path_law,
)
from .flux import FluxTable, build_flux_table, estimate_flux_point, interpolate_flux, microscopic_flux
from .kernels import BACKEND
from .models import (
    EnvironmentField,
    IidLaw,
    JumpKernel,
    MarkovLaw,
    ModelSpec,
    PhaseLaw,
    RateFunction,
    StructureError,
    lipschitz_bound,
    sample_environment,
    validate_kernel,
    validate_rate,
)
from .pde import (
    GridFunction,
    MassMeasure,
    StepProfile,
    approximate_by_steps,
    delta_distance,
    godunov_step,
    riemann_profile,
    riemann_value,
    solve_cauchy,
)

__all__ = [
    "BACKEND",
    "Configuration",
    "CoupledEnsemble",
    "EnvironmentField",
    "EventStream",
    "FluxTable",
    "GridFunction",
    "IidLaw",
    "JumpKernel",
    "MarkovLaw",
    "MassMeasure",
    "ModelSpec",
    "PhaseLaw",
    "RateFunction",
    "StepProfile",
    "StructureError",
    "apply_update",
    "approximate_by_steps",
    "build_flux_table",
    "build_runtime",
    "count_current",
    "delta_distance",
    "estimate_flux_point",
    "evolve",
    "evolve_coupled",
    "godunov_step",
    "interpolate_flux",
    "kstep_target",
    "lipschitz_bound",
    "microscopic_flux",
    "riemann_profile",
    "riemann_value",
    "sample_environment",
    "solve_cauchy",
    "stream_for",
    "traffic_direct_rate",
    "traffic_path_law",
    "validate_kernel",
    "validate_rate",
]
__version__ = "0.1.0"
