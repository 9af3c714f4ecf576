"""racmap: intensity estimation for randomly acquired characteristics.

Shoe soles accumulate scratches and holes (RACs) whose locations behave
like a point process observed only on each shoe's contact surface, with
shoe-to-shoe variation in overall wear.  This package standardizes
prints onto a common grid, partitions the sole into pixels or expert
regions, and estimates the shared baseline intensity by three routes
(naive averaging, random-effects likelihoods, conditional ML), with
case-control sub-sampling for pixel-scale fits, confidence intervals,
and a simulation harness comparing the estimators.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, InvalidInputError, InvalidLayoutError,
                     InvalidStateError, OutOfDomainError, RacmapError,
                     SingularFitError)
from .estimators_pixel import (PixelFit, fit_cml_pixel, fit_conditional_logit,
                               fit_mixed_logit, fit_re_pixel, kernel_smooth,
                               naive_pixel, pointwise_ci, rescale_pixel_cml)
from .estimators_region import (RegionFit, fit_cml_region, fit_re_region,
                                naive_region, region_ci, rescale_cml,
                                var_naive)
from .partitioning import (Cell, Partition, RegionLayout, aggregate,
                           banded_partition, expert_partition,
                           pixel_partition)
from .shoe_data import (RawPrint, ShoeRecord, StandardShoe, StatsReport,
                        binarize_counts, descriptive_stats, load_shoes,
                        normalize, shoes_from_csv, shoes_from_json,
                        shoes_to_csv, shoes_to_json)
from .simulation import (ComparisonTable, Scenario, generate_logistic,
                         generate_region, run_scenario, scenario_registry)
from .splines import SplineSpec, basis_1d, eval_surface, quantile_knots
from .subsampling import (SubsampleMeta, adjusted_probability, offset_for,
                          subsample)

__all__ = [
    "__version__",
    "RacmapError", "InvalidInputError", "InvalidLayoutError",
    "InvalidStateError", "OutOfDomainError", "ConvergenceError",
    "SingularFitError",
    "RawPrint", "StandardShoe", "ShoeRecord", "StatsReport",
    "normalize", "binarize_counts", "descriptive_stats",
    "load_shoes", "shoes_from_csv", "shoes_to_csv", "shoes_from_json",
    "shoes_to_json",
    "Cell", "Partition", "RegionLayout", "pixel_partition",
    "expert_partition", "banded_partition", "aggregate",
    "SplineSpec", "basis_1d", "quantile_knots", "eval_surface",
    "PixelFit", "naive_pixel", "kernel_smooth", "fit_re_pixel",
    "fit_cml_pixel", "pointwise_ci", "rescale_pixel_cml",
    "fit_mixed_logit", "fit_conditional_logit",
    "RegionFit", "naive_region", "var_naive", "fit_re_region",
    "fit_cml_region", "rescale_cml", "region_ci",
    "SubsampleMeta", "subsample", "adjusted_probability", "offset_for",
    "Scenario", "ComparisonTable", "generate_logistic", "generate_region",
    "run_scenario", "scenario_registry",
]
