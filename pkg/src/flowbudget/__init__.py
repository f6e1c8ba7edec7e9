"""flowbudget: semi-supervised optical-flow losses, uncertainty scoring, and
budget-constrained label selection, with a desk-scale coarse-to-fine solver.
"""

from ._kernels import BACKEND
from .core import (
    Budget,
    Dataset,
    FlowField,
    Image,
    LossConfig,
    OcclusionMask,
    Sample,
    level_dims,
    pixel_domain,
)
from .estimator import OptimizerConfig, optimize_flow
from .losses import LossBreakdown, SampleEstimate, dataset_loss, semi_supervised_sample_loss
from .uncertainty import Selection, score, select

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Budget",
    "Dataset",
    "FlowField",
    "Image",
    "LossBreakdown",
    "LossConfig",
    "OcclusionMask",
    "OptimizerConfig",
    "Sample",
    "SampleEstimate",
    "Selection",
    "dataset_loss",
    "level_dims",
    "optimize_flow",
    "pixel_domain",
    "score",
    "select",
    "semi_supervised_sample_loss",
    "__version__",
]
