"""disentda: a desk-scale training lab for dynamic task-oriented feature
disentanglement under unsupervised domain adaptation.

The package is built on its own float64 reverse-mode autodiff core
(`disentda.autodiff`) and exposes the model, losses, memory bank, data
generation, evaluation metrics and the experiment runner as plain Python
modules. See the README for the experiment CLI.
"""

from .autodiff import NesterovSGD, NumericError, Tensor
from .data import Dataset, DomainBatch, ShiftSpec, SynthSpec, load_idx, make_batches, synth_two_domain
from .evaluation import (
    OpenSetResult,
    RetrievalResult,
    classification_accuracy,
    cmc_rank_k,
    mean_average_precision,
    openset_accuracy,
)
from .losses import LossBreakdown, LossConfig
from .membank import MemoryBank
from .model import EncoderConfig, Network, build_network, disentangle
from .trainer import ExperimentConfig, load_config, run_experiment, train_step
from .util import ConfigError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Dataset",
    "DomainBatch",
    "EncoderConfig",
    "ExperimentConfig",
    "LossBreakdown",
    "LossConfig",
    "MemoryBank",
    "NesterovSGD",
    "Network",
    "NumericError",
    "OpenSetResult",
    "RetrievalResult",
    "ShiftSpec",
    "SynthSpec",
    "Tensor",
    "build_network",
    "classification_accuracy",
    "cmc_rank_k",
    "disentangle",
    "load_config",
    "load_idx",
    "make_batches",
    "mean_average_precision",
    "openset_accuracy",
    "run_experiment",
    "synth_two_domain",
    "train_step",
    "__version__",
]
