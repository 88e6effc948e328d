"""Social recommendation with multi-order friend propagation and knowledge-transfer gates."""

from ptln.data import Config, Dataset, ModelParams, load_params, save_params
from ptln.evaluation import MetricsReport, evaluate
from ptln.ingestion import SplitSpec, SyntheticSpec, generate_synthetic, split
from ptln.training import fit, init_params

__all__ = [
    "Config",
    "Dataset",
    "MetricsReport",
    "ModelParams",
    "SplitSpec",
    "SyntheticSpec",
    "evaluate",
    "fit",
    "generate_synthetic",
    "init_params",
    "load_params",
    "save_params",
    "split",
]
