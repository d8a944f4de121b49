"""Convolutional Phase-1 parameter regression for the subarray pipeline.

Consumes observation datasets exported by the channel toolkit (manifest +
binary tensors), trains the fixed seven-conv regression network with the
composite relative-norm loss, and emits denormalized estimates in the
toolkit's external-estimates schema for end-to-end evaluation through its
`estimate --phase1 external` command.
"""

from .data import (
    ESTIMATE_KEYS,
    LABEL_FIELDS,
    InputNorm,
    Manifest,
    denormalize_outputs,
    estimates_doc,
    fit_input_norm,
    load_labels,
    load_manifest,
    load_samples,
    scene_split,
    write_estimates,
)
from .errors import DataError, DcnnError, PipelineError, UsageError
from .evaluation import EvalConfig, evaluate_end_to_end
from .inference import infer_sample, predict_normalized
from .network import CONV_FILTERS, NetworkSpec, build_network, forward_numpy
from .training import (
    TrainConfig,
    composite_loss,
    load_checkpoint,
    loss_groups,
    save_checkpoint,
    train,
)

__all__ = [
    "CONV_FILTERS",
    "DataError",
    "DcnnError",
    "ESTIMATE_KEYS",
    "EvalConfig",
    "InputNorm",
    "LABEL_FIELDS",
    "Manifest",
    "NetworkSpec",
    "PipelineError",
    "TrainConfig",
    "UsageError",
    "build_network",
    "composite_loss",
    "denormalize_outputs",
    "estimates_doc",
    "evaluate_end_to_end",
    "fit_input_norm",
    "forward_numpy",
    "infer_sample",
    "load_checkpoint",
    "load_labels",
    "load_manifest",
    "load_samples",
    "loss_groups",
    "predict_normalized",
    "save_checkpoint",
    "scene_split",
    "train",
    "write_estimates",
]

__version__ = "0.1.0"
