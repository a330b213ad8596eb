"""Numerical laboratory for generalized dichotomies of nonautonomous random linear cocycles."""

from .admissibility import (SignalGrid, admissibility_constant, check_uniqueness, estimate_T_norm,
                            homogeneous_solution, series_operator, solve_admissibility)
from .cocycle import (ClassTable, DichotomyCertificate, FieldSpec, Nrds, ProjectionFamily,
                      RandomNorm, build_model, constant, constant_system, euclidean_norm, evolve,
                      random_entries_system, scalar_norm, spd_norm, verify_cocycle)
from .dichotomy import (derive_exponents, fit_certificate, fit_growth_bound, identify_splitting,
                        ladder_exponent, verify_dichotomy)
from .driver import Driver, OrbitPoint, make_driver, sample_orbits, shift
from .errors import LabError
from .grid import GridSpec, SampleGrid
from .growth import (GrowthRate, find_minimal_growth, lemma_grid, lemma_sum, make_rate, mu_prime,
                     phi)
from .munorm import (AdaptedNorm, MuNuCertificate, build_adapted_norm, extract_munu, munu_model,
                     verify_adapted_bounds, verify_munu)
from .robustness import (Perturbation, admissible_threshold, perturb, perturbed_growth_bound,
                         refit_perturbed, robust_solve, robustness_sweep)

__all__ = [
    "AdaptedNorm", "ClassTable", "DichotomyCertificate", "Driver", "FieldSpec", "GridSpec",
    "GrowthRate", "LabError", "MuNuCertificate", "Nrds", "OrbitPoint", "Perturbation",
    "ProjectionFamily", "RandomNorm", "SampleGrid", "SignalGrid", "admissibility_constant",
    "admissible_threshold", "build_adapted_norm", "build_model", "check_uniqueness", "constant",
    "constant_system", "derive_exponents", "estimate_T_norm", "euclidean_norm", "evolve",
    "extract_munu", "find_minimal_growth", "fit_certificate", "fit_growth_bound",
    "homogeneous_solution", "identify_splitting", "ladder_exponent", "lemma_grid", "lemma_sum",
    "make_driver", "make_rate", "mu_prime", "munu_model", "perturb", "perturbed_growth_bound",
    "phi", "random_entries_system", "refit_perturbed", "robust_solve", "robustness_sweep",
    "sample_orbits", "scalar_norm", "series_operator", "shift", "solve_admissibility", "spd_norm",
    "verify_adapted_bounds", "verify_cocycle", "verify_dichotomy", "verify_munu",
]
