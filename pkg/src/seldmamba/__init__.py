"""Sound event localization, detection, and distance estimation with
bidirectional selective state-space decoders, built on a self-contained
reverse-mode autodiff core."""

from .autodiff import Tensor, finite_diff_check
from .config import RunConfig, load_config
from .features import BranchFeatures, FeatureConfig, FoaClip, assemble_branch_inputs
from .metrics import MetricReport, seld_score
from .model import ModelConfig, SeldModel, build_model, count_params_macs
from .objective import LossWeights, pit_loss, stage_schedule
from .ssm import BMambaBlock, MambaLayer, SsmConfig, selective_scan

__version__ = "0.1.0"

__all__ = [
    "Tensor", "finite_diff_check", "RunConfig", "load_config",
    "BranchFeatures", "FeatureConfig", "FoaClip", "assemble_branch_inputs",
    "MetricReport", "seld_score", "ModelConfig", "SeldModel", "build_model",
    "count_params_macs", "LossWeights", "pit_loss", "stage_schedule",
    "BMambaBlock", "MambaLayer", "SsmConfig", "selective_scan", "__version__",
]
