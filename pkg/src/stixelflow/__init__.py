"""stixelflow: spatiotemporal ensemble fitting at desk scale, plus the
execution, spot-market and cost machinery to study what running it costs."""

__version__ = "0.1.0"

from .domain import DomainBox, GeoPoint, Observation, validate_observation
from .grids import StixelConfig, StixelGridSet, build_grids, stixels_covering
from .ensemble import FittedEnsemble, fit_species, predict_grid, predict_point
from .synth import evaluate_predictions, generate_world, sample_observations
from .engine import estimate_core_hours, plan_tasks, run_pipeline
from .market import availability_intervals, bill_instance, gen_price_trace, simulate_cluster
from .costs import amdahl, compare_profiles, emr_fraction, profile_cost, spot_discount

__all__ = [
    "DomainBox", "GeoPoint", "Observation", "validate_observation",
    "StixelConfig", "StixelGridSet", "build_grids", "stixels_covering",
    "FittedEnsemble", "fit_species", "predict_grid", "predict_point",
    "evaluate_predictions", "generate_world", "sample_observations",
    "estimate_core_hours", "plan_tasks", "run_pipeline",
    "availability_intervals", "bill_instance", "gen_price_trace", "simulate_cluster",
    "amdahl", "compare_profiles", "emr_fraction", "profile_cost", "spot_discount",
]
