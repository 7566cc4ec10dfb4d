"""Simulation and nonparametric estimation of the interaction force in McKean-Vlasov particle systems."""
from .contrast import WeightFunction, build_psi, estimate_alpha, make_weight
from .deconvolution import (DeconvolutionSettings, LineTransform, empirical_line_transform, estimate_interaction,
                            forward_line_transform, fts_diagnostic, inverse_line_transform, regularized_divide)
from .errors import (AssumptionError, ConfigError, ConvergenceError, ExtrapolationError, GridMismatchError,
                     InstabilityError, MvdError, NumericalError, RangeGuardError, SchemaError,
                     UnsupportedDerivativeError)
from .experiments import ExperimentConfig, ExperimentResult, fit_rate, load, persist, report, run_convergence_study
from .invariant import (DensityFlow, GridDensity, check_gaussian_sandwich, exact_log_derivative,
                        fokker_planck_evolve, residual, solve_invariant)
from .kernels import (EstimatorConfig, HighOrderKernel, derive_config, estimate_density,
                      estimate_density_derivative, log_density_derivative, make_kernel)
from .particles import (CoupledPaths, ParticleEnsemble, empirical_char_fn, moment_report, simulate_coupled,
                        simulate_system, wasserstein1)
from .potentials import (ConfinementPotential, InteractionPotential, PotentialModel, builtin_model,
                         confinement_eval, empirical_drift, interaction_eval, mean_field_drift,
                         validate_assumptions)

__version__ = "0.1.0"
