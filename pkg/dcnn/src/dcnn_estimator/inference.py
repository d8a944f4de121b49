"""Inference: network outputs -> denormalized external-estimates documents.

Predictions come out of the sigmoid head normalized to (0, 1); the dataset
manifest's min-max ranges map them back to amplitude/meters/radians, and the
result is written in the estimates schema the channel toolkit imports with
`estimate --phase1 external`.
"""

from __future__ import annotations

import numpy as np

from .data import (
    Manifest,
    denormalize_outputs,
    estimates_doc,
    load_manifest,
    load_samples,
    write_estimates,
)
from .errors import DataError, UsageError
from .network import forward_numpy
from .training import load_checkpoint


def check_compatible(manifest: Manifest, spec) -> None:
    if spec.input_size != manifest.input_size or spec.n_paths != manifest.n_paths:
        raise DataError(
            f"checkpoint expects {spec.input_size}x{spec.input_size} inputs "
            f"with {spec.n_paths} paths, dataset provides "
            f"{manifest.input_size}x{manifest.input_size} with "
            f"{manifest.n_paths}", field="weights")


def predict_normalized(model, norm, samples: np.ndarray,
                       batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward pass over (N, R, R, 3) raw samples."""
    outs = []
    for start in range(0, len(samples), batch_size):
        chunk = norm.apply(samples[start:start + batch_size])
        outs.append(forward_numpy(model, chunk).numpy())
    return np.concatenate(outs, axis=0)


def infer_sample(data_dir, weights_path, index: int, out_path) -> dict:
    """Denormalized estimates document for one dataset sample, written out."""
    manifest = load_manifest(data_dir)
    if not 0 <= index < manifest.num_samples:
        raise UsageError(
            f"sample index {index} outside [0, {manifest.num_samples})")
    model, spec, norm, _ = load_checkpoint(weights_path)
    check_compatible(manifest, spec)
    samples = load_samples(data_dir, manifest)
    normalized = predict_normalized(model, norm, samples[index:index + 1])
    phys = denormalize_outputs(manifest, normalized)
    doc = estimates_doc(phys[0])
    write_estimates(doc, out_path)
    return {
        "out": str(out_path),
        "index": index,
        "scene": manifest.records[index]["scene"],
        "snr_db": manifest.records[index]["snr_db"],
        "n_paths": manifest.n_paths,
        "estimates": doc,
    }
