"""Pretraining a small decoder-only transformer on synthetic RKHS dynamics
and evaluating it against windowed regressors on cart-pole data."""

from .data import Dataset, Trajectory, load_dataset, save_dataset, total_variation
from .model import DESK, LARGE, SMALL, ModelConfig, TransformerModel, load_model, predict
from .rkhs import KernelConfig, SamplerConfig, rkhs_norm, sample_vector_field
from .trajgen import TrajGenConfig, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Trajectory", "load_dataset", "save_dataset", "total_variation",
    "DESK", "LARGE", "SMALL", "ModelConfig", "TransformerModel", "load_model", "predict",
    "KernelConfig", "SamplerConfig", "rkhs_norm", "sample_vector_field",
    "TrajGenConfig", "generate_dataset",
]
