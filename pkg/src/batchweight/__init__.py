"""Batch-weighted adversarial domain transfer on synthetic mixture domains.

A desk-scale laboratory for unpaired domain transfer under mode-mass
imbalance: training reweights batches so matched modes can carry different
probability masses in the two domains, and every distributional claim is
checkable against closed-form oracles on the synthetic presets.
"""

from .domains import (
    CategoricalPair,
    DomainPair,
    GaussianMode,
    LabeledBatch,
    MixtureDomain,
    density_ratio_oracle,
    make_preset,
    midpoint_oracle,
    mixture_density,
    sample_batch,
)
from .config import ExperimentConfig, load_config, save_config
from .estimator import DomainTransfer
from .evaluation import EvalReport, evaluate_state
from .training import RunLog, TrainState, train
from .weighting import BatchWeights, ClipSchedule, batch_softmax

__version__ = "0.1.0"

__all__ = [
    "BatchWeights",
    "CategoricalPair",
    "ClipSchedule",
    "DomainPair",
    "DomainTransfer",
    "EvalReport",
    "ExperimentConfig",
    "GaussianMode",
    "LabeledBatch",
    "MixtureDomain",
    "RunLog",
    "TrainState",
    "batch_softmax",
    "density_ratio_oracle",
    "evaluate_state",
    "load_config",
    "make_preset",
    "midpoint_oracle",
    "mixture_density",
    "sample_batch",
    "save_config",
    "train",
]
