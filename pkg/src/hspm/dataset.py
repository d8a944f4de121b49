"""Dataset export for the learned Phase-1 estimator.

Layout on disk (all little-endian, bit-reproducible for fixed seeds):
  out_dir/manifest.json            self-describing metadata + per-sample index
  out_dir/samples.bin              float32 tensors (R, R, 3), channel-last,
                                   concatenated in sample order
  out_dir/labels.bin               float32 min-max-normalized label vectors,
                                   per path: amp, dist, theta_t, phi_t,
                                   theta_r, phi_r
  out_dir/scenes/scene_%05d.json   one scene file per drawn scene

Sample order is scene-major: sample k = scene (k // len(snr)) at SNR index
(k % len(snr)). Labels repeat across the SNR axis. Distance and amplitude
normalization ranges come from the realized scene set; angle ranges are the
fixed representable intervals.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ValidationError
from .estimation import reference_truth
from .geometry import Scene
from .sceneio import load_scene, save_scene
from .scenegen import SamplerConfig, sample_scene
from .signal import normalize_minmax, random_codebook, stack_observations, tensorize
from .channel import synth_swm

MANIFEST_VERSION = 1
LABEL_FIELDS = ("amp", "dist", "theta_t", "phi_t", "theta_r", "phi_r")
_TX_CB_TAG = 9001
_RX_CB_TAG = 9002


@dataclass(frozen=True)
class CodebookConfig:
    n_codewords_tx: int
    n_codewords_rx: int
    n_streams_tx: int
    n_streams_rx: int

    def __post_init__(self):
        for name in ("n_codewords_tx", "n_codewords_rx",
                     "n_streams_tx", "n_streams_rx"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.rows_rx != self.rows_tx:
            raise InvalidArgumentError(
                f"observation must be square: C_rx*N_s_rx = {self.rows_rx} "
                f"!= C_tx*N_s_tx = {self.rows_tx}")

    @property
    def rows_tx(self) -> int:
        return self.n_codewords_tx * self.n_streams_tx

    @property
    def rows_rx(self) -> int:
        return self.n_codewords_rx * self.n_streams_rx


@dataclass(frozen=True)
class DatasetManifest:
    version: int
    dtype: str
    endianness: str
    sample_shape: tuple[int, int, int]
    label_dim: int
    n_paths: int
    num_samples: int
    normalization: dict            # field -> [lo, hi]
    snr_db: tuple
    seeds: dict
    codebook: dict
    samples: tuple                 # per-sample records

    def __post_init__(self):
        r = self.sample_shape
        if len(r) != 3 or r[0] != r[1] or r[2] != 3:
            raise InvalidArgumentError(f"sample_shape must be [R, R, 3], got {r}")
        if self.label_dim != 6 * self.n_paths:
            raise InvalidArgumentError(
                f"label_dim {self.label_dim} != 6 * n_paths {self.n_paths}")
        for name, (lo, hi) in self.normalization.items():
            if not hi > lo:
                raise InvalidArgumentError(
                    f"normalization range for {name} needs hi > lo, got ({lo}, {hi})")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "dtype": self.dtype,
            "endianness": self.endianness,
            "sample_shape": list(self.sample_shape),
            "label_dim": self.label_dim,
            "n_paths": self.n_paths,
            "num_samples": self.num_samples,
            "normalization": {k: [float(lo), float(hi)]
                              for k, (lo, hi) in self.normalization.items()},
            "snr_db": [None if s is None else float(s) for s in self.snr_db],
            "seeds": self.seeds,
            "codebook": self.codebook,
            "samples": list(self.samples),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        try:
            return cls(
                version=int(doc["version"]),
                dtype=doc["dtype"],
                endianness=doc["endianness"],
                sample_shape=tuple(doc["sample_shape"]),
                label_dim=int(doc["label_dim"]),
                n_paths=int(doc["n_paths"]),
                num_samples=int(doc["num_samples"]),
                normalization={k: (float(v[0]), float(v[1]))
                               for k, v in doc["normalization"].items()},
                snr_db=tuple(doc["snr_db"]),
                seeds=doc["seeds"],
                codebook=doc["codebook"],
                samples=tuple(doc["samples"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad manifest: {exc}", field="manifest") from exc


def _field_ranges(scenes: Sequence[Scene]) -> dict:
    amps, dists = [], []
    for sc in scenes:
        for p in sc.paths:
            amps.append(p.amp)
            dists.append(p.dist)

    def span(vals):
        lo, hi = min(vals), max(vals)
        if hi <= lo:                       # degenerate set: widen symmetrically
            pad = max(1e-12, abs(lo) * 1e-9)
            lo, hi = lo - pad, hi + pad
        return (float(lo), float(hi))

    return {
        "amp": span(amps),
        "dist": span(dists),
        "theta_t": (-math.pi, math.pi),
        "phi_t": (-math.pi / 2, math.pi / 2),
        "theta_r": (-math.pi, math.pi),
        "phi_r": (-math.pi / 2, math.pi / 2),
    }


def normalize_labels(scene: Scene, ranges: dict, sample: int) -> np.ndarray:
    """Flatten one scene's reference truth into a normalized label vector."""
    truth = reference_truth(scene)
    cols = {
        "amp": truth.amp, "dist": truth.dist,
        "theta_t": truth.theta_t, "phi_t": truth.phi_t,
        "theta_r": truth.theta_r, "phi_r": truth.phi_r,
    }
    out = np.empty(6 * scene.n_paths)
    for p in range(scene.n_paths):
        for k, name in enumerate(LABEL_FIELDS):
            lo, hi = ranges[name]
            try:
                out[6 * p + k] = normalize_minmax(
                    float(cols[name][p]), lo, hi, field=name)
            except ValidationError as exc:
                raise ValidationError(f"sample {sample}, path {p + 1}: {exc}",
                                      field=name) from exc
    return out


def export_dataset(source: SamplerConfig | Sequence[Scene],
                   cb_cfg: CodebookConfig,
                   snr_db: Sequence[float],
                   out_dir: str | os.PathLike,
                   seed: int,
                   n_scenes: int | None = None) -> DatasetManifest:
    """Draw/collect scenes, simulate observations, write the dataset files."""
    if not snr_db:
        raise InvalidArgumentError("snr_db must be non-empty")
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)

    if isinstance(source, SamplerConfig):
        if n_scenes is None or n_scenes < 1:
            raise InvalidArgumentError("n_scenes must be >= 1 when sampling")
        scenes = [sample_scene(source, [seed, i]) for i in range(n_scenes)]
    else:
        scenes = list(source)
        if not scenes:
            raise InvalidArgumentError("scene set must be non-empty")

    first = scenes[0]
    for i, sc in enumerate(scenes):
        if sc.n_paths != first.n_paths:
            raise InvalidArgumentError(
                f"scene {i} has {sc.n_paths} paths, expected {first.n_paths}")
        if sc.frequency != first.frequency:
            raise InvalidArgumentError(f"scene {i} frequency differs")
        if sc.tx.n_antennas != first.tx.n_antennas or \
                sc.rx.n_antennas != first.rx.n_antennas:
            raise InvalidArgumentError(f"scene {i} array size differs")

    tx_cb = random_codebook(first.tx, cb_cfg.n_codewords_tx,
                            cb_cfg.n_streams_tx, [seed, _TX_CB_TAG], side="tx")
    rx_cb = random_codebook(first.rx, cb_cfg.n_codewords_rx,
                            cb_cfg.n_streams_rx, [seed, _RX_CB_TAG], side="rx")

    scene_files = []
    loaded = []
    for i, sc in enumerate(scenes):
        rel = f"scenes/scene_{i:05d}.json"
        save_scene(sc, out / rel)
        loaded.append(load_scene(out / rel))   # labels match the file, not RAM
        scene_files.append(rel)
    ranges = _field_ranges(loaded)

    r_dim = cb_cfg.rows_rx
    snrs = tuple(snr_db)
    records = []
    n_total = len(loaded) * len(snrs)
    samples = np.empty((n_total, r_dim, r_dim, 3), dtype="<f4")
    labels = np.empty((n_total, 6 * first.n_paths), dtype="<f4")
    k = 0
    for i, sc in enumerate(loaded):
        h = synth_swm(sc)
        label = normalize_labels(sc, ranges, sample=k)
        for j, snr in enumerate(snrs):
            obs = stack_observations(h, tx_cb, rx_cb, snr_db=snr,
                                     seed=[seed, i, j], wavelength=sc.wavelength)
            t = tensorize(obs)
            if t.shape != (r_dim, r_dim, 3):
                raise InvalidArgumentError(
                    f"observation shape {t.shape} != ({r_dim}, {r_dim}, 3)")
            samples[k] = t.astype("<f4")
            labels[k] = label.astype("<f4")
            records.append({
                "index": k,
                "scene": scene_files[i],
                "scene_index": i,
                "snr_db": None if snr is None else float(snr),
                "noise_seed": [seed, i, j],
            })
            k += 1

    (out / "samples.bin").write_bytes(samples.tobytes())
    (out / "labels.bin").write_bytes(labels.tobytes())

    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        dtype="float32",
        endianness="little",
        sample_shape=(r_dim, r_dim, 3),
        label_dim=6 * first.n_paths,
        n_paths=first.n_paths,
        num_samples=n_total,
        normalization=ranges,
        snr_db=snrs,
        seeds={"dataset": seed,
               "tx_codebook": [seed, _TX_CB_TAG],
               "rx_codebook": [seed, _RX_CB_TAG]},
        codebook={"n_codewords_tx": cb_cfg.n_codewords_tx,
                  "n_codewords_rx": cb_cfg.n_codewords_rx,
                  "n_streams_tx": cb_cfg.n_streams_tx,
                  "n_streams_rx": cb_cfg.n_streams_rx},
        samples=tuple(records),
    )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# readers (consumers reconstruct everything from manifest.json alone)
# ---------------------------------------------------------------------------

def load_manifest(dataset_dir: str | os.PathLike) -> DatasetManifest:
    with open(Path(dataset_dir) / "manifest.json", encoding="utf-8") as fh:
        return DatasetManifest.from_dict(json.load(fh))


def load_samples(dataset_dir: str | os.PathLike,
                 manifest: DatasetManifest | None = None) -> np.ndarray:
    m = manifest or load_manifest(dataset_dir)
    raw = (Path(dataset_dir) / "samples.bin").read_bytes()
    shape = (m.num_samples, *m.sample_shape)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ValidationError(
            f"samples.bin is {len(raw)} bytes, expected {expected}", field="samples")
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def load_labels(dataset_dir: str | os.PathLike,
                manifest: DatasetManifest | None = None) -> np.ndarray:
    m = manifest or load_manifest(dataset_dir)
    raw = (Path(dataset_dir) / "labels.bin").read_bytes()
    expected = m.num_samples * m.label_dim * 4
    if len(raw) != expected:
        raise ValidationError(
            f"labels.bin is {len(raw)} bytes, expected {expected}", field="labels")
    return np.frombuffer(raw, dtype="<f4").reshape(m.num_samples, m.label_dim)


def denormalize_labels(manifest: DatasetManifest, labels: np.ndarray) -> np.ndarray:
    """Map normalized label rows back to physical units, shape (N, n_paths, 6)."""
    arr = np.asarray(labels, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != manifest.label_dim:
        raise InvalidArgumentError(
            f"label rows have dim {arr.shape[1]}, manifest says {manifest.label_dim}")
    out = arr.reshape(arr.shape[0], manifest.n_paths, 6).copy()
    for k, name in enumerate(LABEL_FIELDS):
        lo, hi = manifest.normalization[name]
        out[:, :, k] = lo + out[:, :, k] * (hi - lo)
    return out
