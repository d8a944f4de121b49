"""Shared fixtures: a small exported dataset and a quick checkpoint.

The dataset comes from the channel toolkit CLI (`hspm dataset`), which the
whole package treats as an external executable; tests fail loudly if it is
not installed.
"""

import json
import shutil
import subprocess

import pytest

from dcnn_estimator import TrainConfig, train

SAMPLER = {
    "frequency": 3.0e9,
    "tx_offsets": [[0, 0], [2, 0], [0, 2], [2, 2]],
    "rx_offsets": [[0, 0], [2, 0], [0, 2], [2, 2]],
    "tx_na": [2, 2],
    "rx_na": [2, 2],
    "n_nlos": 0,
    "rx_box": [[-0.35, 0.35], [3.25, 3.30], [-0.22, 0.22]],
}


@pytest.fixture(scope="session")
def primary_cli() -> str:
    path = shutil.which("hspm")
    assert path, "channel toolkit CLI (hspm) must be installed for these tests"
    return path


def export_dataset(cli, out_dir, n_scenes, snr_db, seed) -> str:
    cfg = {
        "sampler": SAMPLER,
        "n_scenes": n_scenes,
        "codebook": {"n_codewords_tx": 4, "n_codewords_rx": 4,
                     "n_streams_tx": 4, "n_streams_rx": 4},
        "snr_db": snr_db,
    }
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    data_dir = out_dir / "data"
    proc = subprocess.run(
        [cli, "dataset", "--config", str(cfg_path), "--out", str(data_dir),
         "--seed", str(seed)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return str(data_dir)


@pytest.fixture(scope="session")
def mini_dataset(primary_cli, tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("mini_ds")
    return export_dataset(primary_cli, out, n_scenes=12,
                          snr_db=[10.0, 0.0], seed=11)


@pytest.fixture(scope="session")
def mini_ckpt(mini_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_ckpt")
    weights = out / "weights.pt"
    cfg = TrainConfig(data_dir=mini_dataset, epochs=3, seed=1, val_split=0.25)
    report = train(cfg, weights)
    return str(weights), report
