"""Finite-volume / split-step sampling of the invariant measure of
stochastically forced viscous scalar conservation laws on the torus."""

from .analytic import (
    AnalyticCase,
    ResolutionError,
    gaussian_w2_commuting,
    lambda_n,
    lyapunov_covariance,
    stationary_energy,
    stationary_phi,
    w2_space,
    w2_time,
)
from .estimator import (
    EstimatorResult,
    ergodic_estimate,
    fit_loglog_slope,
    phi,
    running_phi_average,
    weak_error,
)
from .flux import (
    FluxModel,
    NumericalFlux,
    burgers,
    drift,
    drift_jacobian,
    engquist_osher,
    polynomial_flux,
    sign_vector,
)
from .grid import (
    GridSpec,
    GridVector,
    InvalidFunctionError,
    d1_minus,
    d1_plus,
    d2,
    inner,
    lp_norm,
    pconst_l2_distance,
    project,
    project_sinusoid,
    reconstruct,
)
from .linops import CyclicTridiag, SolverError, circulant_spectrum, multiply, solve_cyclic
from .noise import (
    DiscreteNoise,
    NoiseMode,
    NoiseModel,
    RngStream,
    default_noise,
    derive_seed,
    discretize,
    sample_increment,
)
from .stepper import (
    NewtonError,
    Observer,
    StepperConfig,
    TrajectoryState,
    implicit_stage,
    load_checkpoint,
    run_coupled_pair,
    run_coupled_refinement,
    run_trajectory,
    save_checkpoint,
    step,
)

__version__ = "0.1.0"
