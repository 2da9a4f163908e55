"""Shapley value feature attribution with an energy-based conditional
density model, plus exact, permutation-sampling and kernel baselines."""

__version__ = "0.1.0"

from .energy import (EnergyModel, PartitionEstimate, conditional_log_density,
                     energy, estimate_partition, variance_gap)
from .errors import (CapacityError, ConfigError, DimensionMismatchError,
                     EmshapError, NumericOverflowError, TrainingDivergedError,
                     UsageError)
from .evaluation import (BoundExperimentReport, BoundToyConfig, SicCurve,
                         error_bound, generate_toy_data, hoeffding_coverage,
                         mad, sic_auc, toy_bound_experiment)
from .explainers import (EmshapExplainer, ExactShapleyExplainer,
                         KernelShapExplainer, SamplingShapExplainer)
from .masking import (Coalition, MaskSchedule, advance_schedule, apply_mask,
                      draw_mask, reassemble)
from .proposal import ProposalNetwork, sample_proposal, unroll
from .shapley import (AttributionResult, ContributionOracle, alpha,
                      build_sigma_star, contribution_emshap, emshap_attribute,
                      exact_shapley, kernel_shap, sampling_shap,
                      shapley_weight, sigma_star_inverse_check)
from .trainer import TrainConfig, TrainReport, adam_update, loss_step, train

__all__ = [
    "__version__",
    "AttributionResult", "BoundExperimentReport", "BoundToyConfig",
    "CapacityError", "Coalition", "ConfigError", "ContributionOracle",
    "DimensionMismatchError", "EmshapError", "EmshapExplainer", "EnergyModel",
    "ExactShapleyExplainer", "KernelShapExplainer", "MaskSchedule",
    "NumericOverflowError", "PartitionEstimate", "ProposalNetwork",
    "SamplingShapExplainer", "SicCurve", "TrainConfig", "TrainReport",
    "TrainingDivergedError", "UsageError", "advance_schedule", "alpha",
    "apply_mask", "adam_update", "build_sigma_star", "conditional_log_density",
    "contribution_emshap", "draw_mask", "emshap_attribute", "energy",
    "error_bound", "estimate_partition", "exact_shapley", "generate_toy_data",
    "hoeffding_coverage", "kernel_shap", "loss_step", "mad", "reassemble",
    "sample_proposal", "sampling_shap", "shapley_weight",
    "sic_auc", "sigma_star_inverse_check", "toy_bound_experiment", "train",
    "unroll", "variance_gap",
]
