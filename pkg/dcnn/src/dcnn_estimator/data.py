"""Reader for exported observation datasets.

The training data is a flat directory produced by the channel toolkit's
`dataset` command and is consumed here from its files alone:

  manifest.json   metadata: sample_shape [R, R, 3], label_dim = 6 * n_paths,
                  num_samples, per-field normalization ranges, the SNR list,
                  and one record per sample {index, scene, scene_index,
                  snr_db, noise_seed}
  samples.bin     float32 little-endian (num_samples, R, R, 3) channel-last
                  tensors (Re[Y], Im[Y], |Y|), concatenated in sample order
  labels.bin      float32 min-max-normalized rows, per path:
                  amp, dist, theta_t, phi_t, theta_r, phi_r
  scenes/*.json   one scene file per drawn scene (passed through to the
                  downstream estimator CLI, never parsed here)

Sample order is scene-major: sample k belongs to scene k // len(snr_db) at
SNR index k % len(snr_db), which the per-sample records also spell out.
Splits are made at scene granularity so no scene contributes observations
to both sides.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

LABEL_FIELDS = ("amp", "dist", "theta_t", "phi_t", "theta_r", "phi_r")
ESTIMATE_KEYS = ("amp", "dist_m", "theta_t_rad", "phi_t_rad",
                 "theta_r_rad", "phi_r_rad")


@dataclass(frozen=True)
class Manifest:
    """Validated view of manifest.json (fields used by this package)."""

    sample_shape: tuple[int, int, int]
    label_dim: int
    n_paths: int
    num_samples: int
    normalization: dict            # field -> (lo, hi)
    snr_db: tuple
    records: tuple                 # per-sample dicts, index order

    def __post_init__(self):
        r = self.sample_shape
        if len(r) != 3 or r[0] != r[1] or r[2] != 3 or r[0] < 1:
            raise DataError(f"sample_shape must be [R, R, 3], got {list(r)}",
                            field="sample_shape")
        if self.n_paths < 1:
            raise DataError(f"n_paths must be >= 1, got {self.n_paths}",
                            field="n_paths")
        if self.label_dim != 6 * self.n_paths:
            raise DataError(
                f"label_dim {self.label_dim} != 6 * n_paths ({self.n_paths})",
                field="label_dim")
        if not self.snr_db:
            raise DataError("snr_db must be non-empty", field="snr_db")
        if self.num_samples != len(self.records):
            raise DataError(
                f"num_samples {self.num_samples} != {len(self.records)} records",
                field="samples")
        if self.num_samples % len(self.snr_db) != 0:
            raise DataError(
                f"num_samples {self.num_samples} not a multiple of the "
                f"{len(self.snr_db)}-entry snr_db list", field="num_samples")
        for name in LABEL_FIELDS:
            if name not in self.normalization:
                raise DataError(f"normalization range for {name} missing",
                                field="normalization")
            lo, hi = self.normalization[name]
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise DataError(
                    f"normalization range for {name} needs finite hi > lo, "
                    f"got ({lo!r}, {hi!r})", field="normalization")
        for k, rec in enumerate(self.records):
            for key in ("index", "scene", "scene_index", "snr_db"):
                if key not in rec:
                    raise DataError(f"sample record {k} lacks {key!r}",
                                    field=f"samples[{k}]")
            if rec["index"] != k:
                raise DataError(
                    f"sample record {k} carries index {rec['index']}",
                    field=f"samples[{k}]")

    @property
    def n_scenes(self) -> int:
        return self.num_samples // len(self.snr_db)

    @property
    def input_size(self) -> int:
        return self.sample_shape[0]

    def snr_values(self) -> tuple:
        """Distinct SNR values in first-appearance order (list may repeat)."""
        seen = []
        for s in self.snr_db:
            if s not in seen:
                seen.append(s)
        return tuple(seen)


def load_manifest(dataset_dir: str | os.PathLike) -> Manifest:
    path = Path(dataset_dir) / "manifest.json"
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}", field="manifest") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest parse error at line {exc.lineno}: {exc.msg}",
                        field="manifest") from exc
    if doc.get("dtype") != "float32" or doc.get("endianness") != "little":
        raise DataError(
            f"expected little-endian float32 payload, manifest says "
            f"{doc.get('dtype')!r}/{doc.get('endianness')!r}", field="manifest")
    try:
        return Manifest(
            sample_shape=tuple(int(v) for v in doc["sample_shape"]),
            label_dim=int(doc["label_dim"]),
            n_paths=int(doc["n_paths"]),
            num_samples=int(doc["num_samples"]),
            normalization={k: (float(v[0]), float(v[1]))
                           for k, v in doc["normalization"].items()},
            snr_db=tuple(doc["snr_db"]),
            records=tuple(doc["samples"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"bad manifest: {exc}", field="manifest") from exc


def _read_array(dataset_dir, name: str, shape: tuple) -> np.ndarray:
    raw = (Path(dataset_dir) / name).read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise DataError(f"{name} is {len(raw)} bytes, expected {expected}",
                        field=name)
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def load_samples(dataset_dir, manifest: Manifest) -> np.ndarray:
    return _read_array(dataset_dir, "samples.bin",
                       (manifest.num_samples, *manifest.sample_shape))


def load_labels(dataset_dir, manifest: Manifest) -> np.ndarray:
    return _read_array(dataset_dir, "labels.bin",
                       (manifest.num_samples, manifest.label_dim))


def scene_split(manifest: Manifest, holdout_frac: float) -> tuple[np.ndarray,
                                                                  np.ndarray]:
    """Deterministic scene-level split: the last scenes are held out.

    Returns (train_idx, holdout_idx) over sample indices; every SNR replica
    of a scene lands on the same side.
    """
    if not 0.0 < holdout_frac < 1.0:
        raise UsageError(f"holdout fraction must be in (0, 1), got {holdout_frac}")
    n_hold = max(1, round(holdout_frac * manifest.n_scenes))
    if n_hold >= manifest.n_scenes:
        raise DataError(
            f"holding out {n_hold} of {manifest.n_scenes} scenes leaves no "
            f"training data", field="samples")
    cut = manifest.n_scenes - n_hold
    scene_idx = np.array([rec["scene_index"] for rec in manifest.records])
    train = np.flatnonzero(scene_idx < cut)
    hold = np.flatnonzero(scene_idx >= cut)
    return train, hold


@dataclass(frozen=True)
class InputNorm:
    """Per-channel min-max affine map fitted on the training split.

    Applied as-is at inference time; out-of-range values map outside [0, 1]
    rather than clipping (the network tolerates small excursions).
    """

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        for c, (lo, hi) in enumerate(zip(self.lo, self.hi)):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise DataError(
                    f"input channel {c} range needs finite hi > lo, got "
                    f"({lo!r}, {hi!r})", field="input_norm")

    def apply(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=np.float32)
        hi = np.asarray(self.hi, dtype=np.float32)
        return (np.asarray(x, dtype=np.float32) - lo) / (hi - lo)


def fit_input_norm(samples: np.ndarray, idx: np.ndarray) -> InputNorm:
    """Channel-wise min/max over the given sample subset."""
    sel = samples[idx].reshape(-1, samples.shape[-1])
    lo = sel.min(axis=0).astype(float)
    hi = sel.max(axis=0).astype(float)
    for c in range(len(lo)):
        if hi[c] <= lo[c]:                 # constant channel: widen symmetrically
            # pad must survive the float32 cast in apply(): 1e-6 relative is
            # ~8 ulp, so hi and lo stay distinct after rounding
            pad = max(1e-6, abs(lo[c]) * 1e-6)
            lo[c] -= pad
            hi[c] += pad
    return InputNorm(lo=tuple(lo), hi=tuple(hi))


def denormalize_outputs(manifest: Manifest, outputs: np.ndarray) -> np.ndarray:
    """Map normalized rows back to physical units, shape (N, n_paths, 6).

    Rows are clipped to [1e-7, 1 - 1e-7] first: the output activation is
    (0, 1) in exact arithmetic but float32 can round to the endpoints, and
    the downstream estimates schema keeps open bounds on elevation.
    """
    arr = np.asarray(outputs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != manifest.label_dim:
        raise DataError(
            f"output rows have dim {arr.shape[1]}, manifest says "
            f"{manifest.label_dim}", field="outputs")
    arr = np.clip(arr, 1e-7, 1.0 - 1e-7)
    out = arr.reshape(arr.shape[0], manifest.n_paths, 6).copy()
    for k, name in enumerate(LABEL_FIELDS):
        lo, hi = manifest.normalization[name]
        out[:, :, k] = lo + out[:, :, k] * (hi - lo)
    return out


def estimates_doc(row: np.ndarray) -> dict:
    """One denormalized (n_paths, 6) row as an external-estimates document."""
    paths = []
    for p in range(row.shape[0]):
        paths.append({key: float(row[p, k])
                      for k, key in enumerate(ESTIMATE_KEYS)})
    return {"paths": paths}


def write_estimates(doc: dict, path: str | os.PathLike) -> None:
    """Canonical serialization: sorted keys, two-space indent, newline.

    Matches the downstream toolkit's own writer so import -> re-export is
    byte-stable.
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
