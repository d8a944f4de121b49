import numpy as np
import pytest
import torch
from torch import nn

from dcnn_estimator import (
    CONV_FILTERS,
    DataError,
    NetworkSpec,
    build_network,
    forward_numpy,
)


def test_spec_layer_accounting():
    spec = NetworkSpec(input_size=16, n_paths=4)
    names = spec.layer_names
    assert len(names) == 15
    assert names[0] == "input"
    assert names[1:8] == tuple(f"cv{i}" for i in range(1, 8))
    assert names[8:12] == tuple(f"mp{i}" for i in range(1, 5))
    assert names[12:] == ("flatten", "fc", "output")
    assert spec.output_dim == 24


def test_spec_pooled_and_feature_dims():
    assert NetworkSpec(16, 1).pooled_size == 1
    assert NetworkSpec(16, 1).feature_dim == 16
    # ceil-mode chain: 20 -> 10 -> 5 -> 3 -> 2
    assert NetworkSpec(20, 1).pooled_size == 2
    assert NetworkSpec(20, 1).feature_dim == 64
    assert NetworkSpec(32, 2).pooled_size == 2
    assert NetworkSpec(32, 2).feature_dim == 64


@pytest.mark.parametrize("kwargs", [
    {"input_size": 0, "n_paths": 1},
    {"input_size": 16, "n_paths": 0},
    {"input_size": 16, "n_paths": 1, "conv_filters": (16, 32)},
    {"input_size": 16, "n_paths": 1,
     "conv_filters": (16, 32, 64, 128, 62, 32, 0)},
])
def test_spec_validation(kwargs):
    with pytest.raises(DataError):
        NetworkSpec(**kwargs)


def test_build_layer_sequence():
    spec = NetworkSpec(input_size=16, n_paths=1)
    model = build_network(spec, seed=0)
    mods = list(model)
    convs = [m for m in mods if isinstance(m, nn.Conv2d)]
    assert tuple(c.out_channels for c in convs) == CONV_FILTERS
    assert all(c.kernel_size == (3, 3) and c.padding == (1, 1) for c in convs)
    assert convs[0].in_channels == 3
    assert sum(isinstance(m, nn.BatchNorm2d) for m in mods) == 7
    assert sum(isinstance(m, nn.ReLU) for m in mods) == 7
    pools = [m for m in mods if isinstance(m, nn.MaxPool2d)]
    assert len(pools) == 4 and all(p.kernel_size == 2 for p in pools)
    # a pool follows each of the first four conv blocks and no later one
    conv_positions = [i for i, m in enumerate(mods) if isinstance(m, nn.Conv2d)]
    for i in conv_positions[:4]:
        assert isinstance(mods[i + 3], nn.MaxPool2d)
    for i in conv_positions[4:]:
        assert not isinstance(mods[i + 3], nn.MaxPool2d)
    fc = [m for m in mods if isinstance(m, nn.Linear)]
    assert len(fc) == 1
    assert fc[0].in_features == spec.feature_dim
    assert fc[0].out_features == 6
    assert isinstance(mods[-1], nn.Sigmoid)
    assert isinstance(mods[-3], nn.Flatten)


def test_build_deterministic():
    spec = NetworkSpec(input_size=16, n_paths=1)
    a = build_network(spec, seed=7).state_dict()
    b = build_network(spec, seed=7).state_dict()
    assert a.keys() == b.keys()
    for key in a:
        assert torch.equal(a[key], b[key])
    c = build_network(spec, seed=8).state_dict()
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_forward_zeros_in_open_unit_interval():
    spec = NetworkSpec(input_size=16, n_paths=2)
    model = build_network(spec, seed=3)
    out = forward_numpy(model, np.zeros((2, 16, 16, 3), dtype=np.float32))
    assert out.shape == (2, 12)
    vals = out.numpy()
    assert np.all(np.isfinite(vals))
    assert np.all((vals > 0.0) & (vals < 1.0))


def test_forward_non_multiple_input_size():
    spec = NetworkSpec(input_size=20, n_paths=1)
    model = build_network(spec, seed=0)
    out = forward_numpy(model, np.zeros((1, 20, 20, 3), dtype=np.float32))
    assert out.shape == (1, 6)
