"""End-to-end evaluation through the channel toolkit's CLI.

For every evaluated sample the network's denormalized estimates are written
to a temporary file and handed to `<primary-cli> estimate --phase1 external`,
which runs the geometric extension and reconstruction and reports the NMSE
against ground truth; an OMP run (`--phase1 omp`) on the same scene and SNR
provides the classical baseline column. Per-SNR aggregation matches the
toolkit's own eval command: mean of linear squared norm ratios, then
10*log10. Exit code 3 from the toolkit counts as a numerical failure for
that sample; any other nonzero exit aborts with the sample context.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    denormalize_outputs,
    estimates_doc,
    load_labels,
    load_manifest,
    load_samples,
    scene_split,
    write_estimates,
)
from .errors import DataError, PipelineError, UsageError
from .inference import check_compatible, predict_normalized
from .training import load_checkpoint

EVAL_COLUMNS = ("estimator", "snr_db", "samples", "failures", "mean_nmse_db")


@dataclass(frozen=True)
class EvalConfig:
    data_dir: str
    primary_cli: str = "hspm"
    weights: str | None = None          # not needed when injecting labels
    split: str = "holdout"              # "holdout" or "all"
    val_split: float = 0.1
    truth: str = "swm"
    seed: int = 0
    dict_size: int = 64
    include_omp: bool = True
    inject_labels: bool = False
    max_samples: int | None = None

    def __post_init__(self):
        if self.split not in ("holdout", "all"):
            raise UsageError(f"split must be 'holdout' or 'all', got {self.split!r}")
        if self.truth not in ("swm", "hspm"):
            raise UsageError(f"truth must be 'swm' or 'hspm', got {self.truth!r}")
        if self.dict_size < 1:
            raise UsageError(f"dict_size must be >= 1, got {self.dict_size}")
        if self.max_samples is not None and self.max_samples < 1:
            raise UsageError(f"max_samples must be >= 1, got {self.max_samples}")
        if not self.inject_labels and not self.weights:
            raise UsageError("weights are required unless labels are injected")


def _resolve_cli(name: str) -> str:
    path = shutil.which(name)
    if path is None and Path(name).exists():
        path = str(Path(name).resolve())
    if path is None:
        raise UsageError(f"primary CLI {name!r} not found on PATH")
    return path


def evaluate_end_to_end(cfg: EvalConfig, out_csv) -> dict:
    """Aggregate NMSE-vs-SNR table over the selected samples; writes CSV."""
    cli = _resolve_cli(cfg.primary_cli)
    manifest = load_manifest(cfg.data_dir)
    root = Path(cfg.data_dir)

    if cfg.split == "holdout":
        _, idx = scene_split(manifest, cfg.val_split)
    else:
        idx = np.arange(manifest.num_samples)
    if cfg.max_samples is not None:
        idx = idx[:cfg.max_samples]

    if cfg.inject_labels:
        rows_norm = load_labels(cfg.data_dir, manifest)[idx]
        label = "labels"
    else:
        model, spec, norm, _ = load_checkpoint(cfg.weights)
        check_compatible(manifest, spec)
        samples = load_samples(cfg.data_dir, manifest)
        rows_norm = predict_normalized(model, norm, samples[idx])
        label = "dcnn"
    physical = denormalize_outputs(manifest, rows_norm)

    snr_order = manifest.snr_values()
    lin = {(label, s): [] for s in snr_order}
    failures = {(label, s): 0 for s in snr_order}
    if cfg.include_omp:
        lin.update({("omp", s): [] for s in snr_order})
        failures.update({("omp", s): 0 for s in snr_order})
    records = []

    with tempfile.TemporaryDirectory(prefix="dcnn_eval_") as tmp:
        est_path = Path(tmp) / "estimates.json"
        rep_path = Path(tmp) / "report.json"
        for j, k in enumerate(np.asarray(idx)):
            rec = manifest.records[int(k)]
            scene = root / rec["scene"]
            if not scene.exists():
                raise DataError(f"scene file missing: {scene}",
                                field=f"samples[{int(k)}]")
            snr = rec["snr_db"]
            context = f"sample {int(k)} (scene {rec['scene']}, snr {snr})"
            snr_args = [] if snr is None else ["--snr", repr(float(snr))]

            write_estimates(estimates_doc(physical[j]), est_path)
            proc = subprocess.run(
                [cli, "estimate", "--scene", str(scene), "--phase1", "external",
                 "--estimates", str(est_path), *snr_args,
                 "--truth", cfg.truth, "--out", str(rep_path)],
                capture_output=True, text=True)
            nmse = _consume(proc, context, label, snr, lin, failures, rep_path)
            records.append({"index": int(k), "estimator": label,
                            "snr_db": snr, "nmse_db": nmse})

            if cfg.include_omp:
                proc = subprocess.run(
                    [cli, "estimate", "--scene", str(scene), "--phase1", "omp",
                     *snr_args, "--seed", str(cfg.seed + int(k)),
                     "--dict-size", str(cfg.dict_size),
                     "--truth", cfg.truth, "--out", str(rep_path)],
                    capture_output=True, text=True)
                nmse = _consume(proc, context, "omp", snr, lin, failures, rep_path)
                records.append({"index": int(k), "estimator": "omp",
                                "snr_db": snr, "nmse_db": nmse})

    rows = []
    for estimator in ([label, "omp"] if cfg.include_omp else [label]):
        for s in snr_order:
            ok = lin[(estimator, s)]
            if ok:
                mean_lin = sum(ok) / len(ok)
                mean_db = -300.0 if mean_lin == 0 else 10.0 * math.log10(mean_lin)
            else:
                mean_db = None
            rows.append({"estimator": estimator,
                         "snr_db": None if s is None else float(s),
                         "samples": len(ok) + failures[(estimator, s)],
                         "failures": failures[(estimator, s)],
                         "mean_nmse_db": mean_db})

    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_COLUMNS)
        for row in rows:
            writer.writerow([row["estimator"],
                             "" if row["snr_db"] is None else repr(row["snr_db"]),
                             row["samples"], row["failures"],
                             "" if row["mean_nmse_db"] is None
                             else repr(row["mean_nmse_db"])])
    return {"out": str(out_csv), "rows": rows, "records": records,
            "estimates": physical, "estimator": label}


def _consume(proc, context: str, estimator: str, snr, lin, failures,
             rep_path) -> float | None:
    """Book one subprocess result; returns the sample NMSE (None on failure)."""
    if proc.returncode == 3:
        failures[(estimator, snr)] += 1
        return None
    if proc.returncode != 0:
        raise PipelineError(
            f"{context}: {estimator} estimate exited {proc.returncode}: "
            f"{proc.stderr.strip() or proc.stdout.strip()}")
    try:
        with open(rep_path, encoding="utf-8") as fh:
            nmse = float(json.load(fh)["nmse_db"])
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise PipelineError(f"{context}: unreadable report: {exc}") from exc
    lin[(estimator, snr)].append(10.0 ** (nmse / 10.0))
    return nmse
