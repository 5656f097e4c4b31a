"""Quantitative Gamma approximation on the second Wiener chaos.

Spectral forms, their cumulants and Gamma-difference variances, a bounded
Stein-equation solver, computable upper and lower distance estimates, and
rate experiments over the built-in kernel families.
"""

__version__ = "0.1.0"

from .bounds import (BoundReport, cumulant_distance, d1_sqrt_bound,
                     malliavin_stein_upper, target_cumulant_combos,
                     verify_komaki_identity)
from .chaos import (GammaTarget, KernelMatrix, SampleBatch, SpectralForm,
                    centered_gamma_density, char_function, cumulant_spectral,
                    cumulant_target, density_cf_inversion, jacobi_eigenvalues,
                    normal_stream, sample, spectral_from_kernel)
from .distance import (DistanceEstimate, TestFamily, build_test_family,
                       d2_lower_estimate, kummer_1f1_half,
                       tv_distance_two_eig, two_eig_density)
from .errors import (ConstructionError, CoverageError, DomainError,
                     NumericalError, TailMassError, ValidationError,
                     WglabError)
from .experiments import (ExperimentSpec, RateReport, SlopeFit,
                          ar2_variance_closed, example_form, gen_ar1,
                          gen_ar2, gen_holder_qf, gen_naive, gen_ustat,
                          run_experiment, ustat_kernel, write_csv,
                          write_gnuplot)
from .gamma_ops import (GammaConstantKey, GammaVarianceTable, gamma_constants,
                        gamma_pathwise, var_combined, var_gamma_diff_cumulant,
                        var_gamma_diff_trace)
from .grids import GridFunction, GridSpec
from .stein import (SteinSolution, apply_S, default_grid,
                    gamma_stein_classical, operator_matrix,
                    solve_functional_equation, solve_stein,
                    target_expectation)

__all__ = [
    "__version__",
    "BoundReport", "cumulant_distance", "d1_sqrt_bound",
    "malliavin_stein_upper", "target_cumulant_combos",
    "verify_komaki_identity",
    "GammaTarget", "KernelMatrix", "SampleBatch", "SpectralForm",
    "centered_gamma_density", "char_function", "cumulant_spectral",
    "cumulant_target", "density_cf_inversion", "jacobi_eigenvalues",
    "normal_stream", "sample", "spectral_from_kernel",
    "DistanceEstimate", "TestFamily", "build_test_family",
    "d2_lower_estimate", "kummer_1f1_half", "tv_distance_two_eig",
    "two_eig_density",
    "ConstructionError", "CoverageError", "DomainError", "NumericalError",
    "TailMassError", "ValidationError", "WglabError",
    "ExperimentSpec", "RateReport", "SlopeFit", "ar2_variance_closed",
    "example_form", "gen_ar1", "gen_ar2", "gen_holder_qf", "gen_naive",
    "gen_ustat", "run_experiment", "ustat_kernel", "write_csv",
    "write_gnuplot",
    "GammaConstantKey", "GammaVarianceTable", "gamma_constants",
    "gamma_pathwise", "var_combined", "var_gamma_diff_cumulant",
    "var_gamma_diff_trace",
    "GridFunction", "GridSpec",
    "SteinSolution", "apply_S", "default_grid", "gamma_stein_classical",
    "operator_matrix", "solve_functional_equation", "solve_stein",
    "target_expectation",
]
