"""Non-parametric drift/diffusion estimation for 1-d stationary SDEs.

Simulates dX = A(X) dt + D(X) dW with strong Ito-Taylor schemes, collects
non-overlapping transition pairs, bins them into conditional-moment
estimates of A and D^2, quantifies the estimation error against known
models, and recovers polynomial coefficient forms by penalized regression.
"""

__version__ = "0.1.0"

from .binned import (BinGrid, BinnedEstimate, assign_bin, estimate,
                     estimate_centered, expansion_check, make_grid,
                     make_symmetric_grid, richardson_check,
                     truncated_expectation, truncated_moment_prediction)
from .errors import (BinsdeError, ConfigError, ConvergenceError,
                     DivergenceError, IOFormatError, NonNormalizableError,
                     StarvationError, ValidationError, ZeroMassBinError)
from .experiments import (Cell, MSEResult, REGIME_MDT_CONST,
                          REGIME_MDT_GROWING, make_cell, pooled_estimate,
                          run_m_doubling, run_mse, run_regime, run_sweep,
                          timing_rows)
from .integrals import (CANONICAL_MOMENTS, MomentEstimate, MultipleIntegrals,
                        StepNoise, analytic_moment, derive_multiple_integrals,
                        estimate_moment, integrals_from_values, moment_table,
                        n_ones, sample_step_noise)
from .integrate import (SCHEMES, FixedCount, FixedPerBin, SimulationConfig,
                        TransitionPairSet, generate_pairs, observations,
                        pairs_from_series, step, strong_error_sweep)
from .models import (Density, ITECoefficients, SDEModel, TabulatedDensity,
                     builtin_model, density_from_model, density_from_table,
                     fokker_planck_residual, ite_coefficients,
                     ou_conditional_mean_factor, ou_conditional_var,
                     ou_stationary_std, stationary_density, uniform_density)
from .regression import (FitReport, PolynomialFit, fit_field, fit_pipeline,
                         fit_polynomial, lambda_max)

__all__ = [name for name in dir() if not name.startswith("_")]
