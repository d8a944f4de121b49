"""Network definition: convolutional regression from observation tensors.

The architecture is fixed: seven 3x3 convolutional layers with
16/32/64/128/62/32/16 filters, each zero-padded and batch-normalized with
ReLU activations, a 2x2 max-pool after each of the first four, then flatten
and one fully-connected output of width 6 * n_paths under a sigmoid, so
every output lives in (0, 1) and denormalizes through the dataset's
min-max ranges.

Counted as input, cv1..cv7, mp1..mp4, flatten, fc, output this is fifteen
layers; the enumeration is exposed via NetworkSpec.layer_names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import DataError

CONV_FILTERS = (16, 32, 64, 128, 62, 32, 16)
KERNEL = 3
POOL = 2
N_POOLED = 4          # pools sit behind cv1..cv4


@dataclass(frozen=True)
class NetworkSpec:
    """Input geometry and output width; the layer stack itself is fixed."""

    input_size: int                    # observations are (input_size)^2 x 3
    n_paths: int
    conv_filters: tuple = CONV_FILTERS

    def __post_init__(self):
        if self.input_size < 1:
            raise DataError(f"input_size must be >= 1, got {self.input_size}",
                            field="spec")
        if self.n_paths < 1:
            raise DataError(f"n_paths must be >= 1, got {self.n_paths}",
                            field="spec")
        if len(self.conv_filters) != len(CONV_FILTERS) or \
                any(int(f) < 1 for f in self.conv_filters):
            raise DataError(
                f"conv_filters must be {len(CONV_FILTERS)} positive counts, "
                f"got {self.conv_filters}", field="spec")

    @property
    def output_dim(self) -> int:
        return 6 * self.n_paths

    @property
    def pooled_size(self) -> int:
        """Spatial side after the four pools (ceil-mode covers remainders)."""
        s = self.input_size
        for _ in range(N_POOLED):
            s = math.ceil(s / POOL)
        return s

    @property
    def feature_dim(self) -> int:
        return self.conv_filters[-1] * self.pooled_size ** 2

    @property
    def layer_names(self) -> tuple:
        conv = tuple(f"cv{i + 1}" for i in range(len(self.conv_filters)))
        pool = tuple(f"mp{i + 1}" for i in range(N_POOLED))
        return ("input",) + conv + pool + ("flatten", "fc", "output")


def build_network(spec: NetworkSpec, seed: int | None = None) -> nn.Sequential:
    """Instantiate the stack; a given seed fixes the initial parameters."""
    if seed is not None:
        torch.manual_seed(seed)
    layers: list[nn.Module] = []
    channels = 3
    for i, filters in enumerate(spec.conv_filters):
        layers.append(nn.Conv2d(channels, int(filters), KERNEL, padding=1))
        layers.append(nn.BatchNorm2d(int(filters)))
        layers.append(nn.ReLU())
        if i < N_POOLED:
            layers.append(nn.MaxPool2d(POOL, ceil_mode=True))
        channels = int(filters)
    layers.append(nn.Flatten())
    layers.append(nn.Linear(spec.feature_dim, spec.output_dim))
    layers.append(nn.Sigmoid())
    return nn.Sequential(*layers)


def forward_numpy(model: nn.Sequential, inputs) -> "torch.Tensor":
    """Eval-mode forward pass of (N, R, R, 3) arrays (channel-last on disk)."""
    x = torch.as_tensor(inputs, dtype=torch.float32).permute(0, 3, 1, 2)
    model.eval()
    with torch.no_grad():
        return model(x.contiguous())
