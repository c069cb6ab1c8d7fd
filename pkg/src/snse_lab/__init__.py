"""Spectral laboratory for the 2D stochastic Navier-Stokes equations.

Simulation of the noisy system, its zero-noise limit, the controlled
linearization, and the shifted fluctuation process on the periodic torus;
rate-functional evaluation by adjoint-based optimization; Monte Carlo probes
of deviation scaling and conditional exponential bounds; and empirical
iterated-logarithm studies.
"""

__version__ = "0.1.0"

from .spectral import (
    SpectralGrid,
    SpectralField,
    NormBundle,
    default_grid,
    leray_project,
    apply_stokes,
    advection_term,
    advection_form,
    curl,
    norm_bundle,
    zero_field,
    single_mode_field,
    taylor_green,
    random_solenoidal_field,
)
from .noise import (
    NoiseModel,
    SigmaParams,
    Control,
    wiener_increment,
    sigma_apply,
    verify_assumptions,
    control_energy,
    zero_control,
)
from .solvers import (
    SimConfig,
    Trajectory,
    step_deterministic,
    step_snse,
    solve_deterministic,
    solve_snse,
    solve_skeleton,
    solve_tilde_z,
    IntegrationError,
)
from .deviation import (
    ConstantsLedger,
    OptParams,
    RateResult,
    FWConfig,
    ASpec,
    epsilon_thresholds,
    energy_norm,
    energy_distance,
    rate_function,
    mc_probability,
    mdp_scaling_probe,
    fw_conditional_probe,
    dyadic_increment_stat,
    moment_bound_suite,
)
from .lil import (
    GeometricSchedule,
    LimitSetProbe,
    z_process,
    limit_set_distance,
    build_probe,
    strassen_cluster_study,
    classical_ratio_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
