"""Harmonic maps into R^j x (m-pod) targets and their quantitative stratification.

Modules
-------
targets     conical target complexes, distances, geodesics and Frechet means
fields      domain grids, map fields and the built-in analytic examples
solver      Dirichlet problem by red-black geodesic relaxation
frequency   energies, heights, orders, pinching, rescalings and tangent maps
homogeneity homogeneous competitors, homogeneity tests and degree bounds
strata      singular nodes, splitting, effective spanning and strata
flatness    discrete measures, mean flatness, Jones integrals, Reifenberg check
covering    good/bad ball covers, packing measures and Minkowski estimates
cli         batch experiment runner
"""
from .covering import (BallCover, CoveringAssertionError, initial_cover, iterate_refine,
                       minkowski_estimate, packing_measure, refine_cover)
from .fields import AnalyticMap, DomainGrid, MapField, example_map, total_energy
from .flatness import (DiscreteMeasure, jones_integral, mean_flatness,
                       pinching_flatness_ratio, reifenberg_hypothesis)
from .frequency import (frequency_profile, order, pinching, rescale, smoothed_order,
                        smoothed_order_value, tangent_map)
from .homogeneity import degree_bound, homogeneity_test, symmetrize
from .solver import solve_dirichlet
from .strata import (detect_singular, effective_span, quantitative_stratum,
                     splitting_data)
from .targets import (ConicalTarget, PointArray, TargetPoint, distance, frechet_mean,
                      make_target)

__version__ = "0.1.0"

__all__ = [
    "AnalyticMap", "BallCover", "ConicalTarget", "CoveringAssertionError", "DiscreteMeasure",
    "DomainGrid", "MapField", "PointArray", "TargetPoint", "degree_bound", "detect_singular",
    "distance", "effective_span", "example_map", "frechet_mean", "frequency_profile",
    "homogeneity_test", "initial_cover", "iterate_refine", "jones_integral", "make_target",
    "mean_flatness", "minkowski_estimate", "order", "packing_measure",
    "pinching", "pinching_flatness_ratio", "quantitative_stratum", "refine_cover",
    "reifenberg_hypothesis", "rescale", "smoothed_order", "smoothed_order_value",
    "solve_dirichlet", "splitting_data", "symmetrize", "tangent_map", "total_energy",
]
