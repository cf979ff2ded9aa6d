"""Neural estimation of dual upper bounds on memoryless channel capacity."""

__version__ = "0.1.0"

from .capacity import (DualBoundEstimate, ExperimentConfig, dual_bound,
                       golden_section_min, run_alternating)
from .channels import ChannelSpec, channel_cost, channel_sample
from .divergence import dv_estimate, train_statnet
from .ndt import NdtConfig, ndt_generate, renormalize

__all__ = [
    "ChannelSpec",
    "DualBoundEstimate",
    "ExperimentConfig",
    "NdtConfig",
    "channel_cost",
    "channel_sample",
    "dual_bound",
    "dv_estimate",
    "golden_section_min",
    "ndt_generate",
    "renormalize",
    "run_alternating",
    "train_statnet",
]
