"""Training loop: composite relative-norm loss, Adam, per-epoch loss CSV.

The loss is a weighted sum of three batch-level relative errors computed on
the normalized label blocks, grouped per path as gain {0}, distance {1},
angles {2..5} (mod 6):

    L = w_angle * ||E_a||/||T_a|| + w_dist * ||E_d||/||T_d||
        + w_gain * ||E_g||/||T_g||

with E = prediction - truth and Frobenius norms over the whole batch block.
Batch-level ratios keep the denominators away from zero: min-max labels hit
exactly 0.0 at the dataset minimum, so per-sample ratios are ill-defined on
boundary samples.

The CSV train_loss column is the epoch mean of batch losses (the usual
training-curve quantity); val_loss and its three components are eval-mode
end-of-epoch values on the held-out scenes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import (
    InputNorm,
    Manifest,
    fit_input_norm,
    load_labels,
    load_manifest,
    load_samples,
    scene_split,
)
from .errors import DataError, PipelineError, UsageError
from .network import NetworkSpec, build_network

CHECKPOINT_FORMAT = 1
HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_loss",
                   "val_angle", "val_dist", "val_gain")
LR_SCHEDULES = ("cosine", "constant")


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    loss_weights: tuple = (1.0, 1.0, 1.0)    # angle, dist, gain
    val_split: float = 0.1
    seed: int = 0
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise UsageError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise UsageError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if len(self.loss_weights) != 3 or any(not w > 0 for w in self.loss_weights):
            raise UsageError(
                f"loss_weights needs three positive values, got {self.loss_weights}")
        if not 0.0 < self.val_split < 1.0:
            raise UsageError(f"val_split must be in (0, 1), got {self.val_split}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise UsageError(
                f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")


def loss_groups(n_paths: int) -> tuple[list, list, list]:
    """Column indices of the angle/distance/gain blocks in a label row."""
    angles = [6 * p + k for p in range(n_paths) for k in (2, 3, 4, 5)]
    dist = [6 * p + 1 for p in range(n_paths)]
    gain = [6 * p for p in range(n_paths)]
    return angles, dist, gain


def composite_loss(pred: torch.Tensor, truth: torch.Tensor, n_paths: int,
                   weights=(1.0, 1.0, 1.0)):
    """Weighted total plus the (angle, dist, gain) component terms."""
    if pred.shape != truth.shape or pred.shape[-1] != 6 * n_paths:
        raise DataError(
            f"loss inputs need matching (batch, {6 * n_paths}) shapes, got "
            f"{tuple(pred.shape)} vs {tuple(truth.shape)}", field="loss")
    terms = []
    for idx in loss_groups(n_paths):
        err = pred[:, idx] - truth[:, idx]
        denom = torch.linalg.vector_norm(truth[:, idx]).clamp_min(1e-12)
        terms.append(torch.linalg.vector_norm(err) / denom)
    total = (weights[0] * terms[0] + weights[1] * terms[1]
             + weights[2] * terms[2])
    return total, tuple(terms)


def save_checkpoint(path, model, spec: NetworkSpec, norm: InputNorm,
                    cfg: TrainConfig, history: list) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "state_dict": model.state_dict(),
        "spec": {"input_size": spec.input_size, "n_paths": spec.n_paths,
                 "conv_filters": list(spec.conv_filters)},
        "input_norm": {"lo": list(norm.lo), "hi": list(norm.hi)},
        "config": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                   "lr": cfg.lr, "weight_decay": cfg.weight_decay,
                   "loss_weights": list(cfg.loss_weights),
                   "val_split": cfg.val_split, "seed": cfg.seed,
                   "lr_schedule": cfg.lr_schedule},
        "history": history,
    }, path)


def load_checkpoint(path) -> tuple:
    """(model in eval mode, spec, input norm, stored metadata)."""
    try:
        doc = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise DataError(f"weights file not found: {path}", field="weights") from exc
    except Exception as exc:
        raise DataError(f"unreadable weights file: {exc}", field="weights") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(
            f"weights file format {doc.get('format') if isinstance(doc, dict) else None!r} "
            f"unsupported (expected {CHECKPOINT_FORMAT})", field="weights")
    try:
        spec = NetworkSpec(input_size=int(doc["spec"]["input_size"]),
                           n_paths=int(doc["spec"]["n_paths"]),
                           conv_filters=tuple(doc["spec"]["conv_filters"]))
        norm = InputNorm(lo=tuple(doc["input_norm"]["lo"]),
                         hi=tuple(doc["input_norm"]["hi"]))
        model = build_network(spec)
        model.load_state_dict(doc["state_dict"])
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"bad checkpoint payload: {exc}", field="weights") from exc
    model.eval()
    return model, spec, norm, doc


def write_history_csv(history: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(row[c])
                                              for c in HISTORY_COLUMNS[1:]])


def train(cfg: TrainConfig, weights_out, loss_csv=None,
          log=None) -> dict:
    """Fit the network on an exported dataset; returns the training report.

    Deterministic for a fixed (dataset, config): seeding covers parameter
    init and batch shuffling, and deterministic kernels are enforced.
    """
    manifest = load_manifest(cfg.data_dir)
    samples = load_samples(cfg.data_dir, manifest)
    labels = load_labels(cfg.data_dir, manifest)
    train_idx, val_idx = scene_split(manifest, cfg.val_split)

    norm = fit_input_norm(samples, train_idx)
    spec = NetworkSpec(input_size=manifest.input_size, n_paths=manifest.n_paths)

    torch.use_deterministic_algorithms(True)
    model = build_network(spec, seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                           weight_decay=cfg.weight_decay)
    if cfg.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    else:
        sched = None

    x = torch.from_numpy(np.ascontiguousarray(norm.apply(samples)))
    x = x.permute(0, 3, 1, 2).contiguous()
    y = torch.from_numpy(np.array(labels, dtype=np.float32))  # frombuffer is read-only
    tr = torch.from_numpy(train_idx)
    shuffler = torch.Generator().manual_seed(cfg.seed)

    history = []
    for epoch in range(cfg.epochs):
        lr_now = opt.param_groups[0]["lr"]
        model.train()
        order = torch.randperm(len(tr), generator=shuffler)
        batch_losses = []
        for start in range(0, len(tr), cfg.batch_size):
            sel = tr[order[start:start + cfg.batch_size]]
            opt.zero_grad()
            loss, _ = composite_loss(model(x[sel]), y[sel], manifest.n_paths,
                                     cfg.loss_weights)
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
        if sched is not None:
            sched.step()

        model.eval()
        with torch.no_grad():
            val_total, parts = composite_loss(model(x[val_idx]), y[val_idx],
                                              manifest.n_paths, cfg.loss_weights)
        row = {"epoch": epoch, "lr": float(lr_now),
               "train_loss": float(np.mean(batch_losses)),
               "val_loss": float(val_total),
               "val_angle": float(parts[0]), "val_dist": float(parts[1]),
               "val_gain": float(parts[2])}
        history.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  train {row['train_loss']:.6f}  "
                f"val {row['val_loss']:.6f}")
        if not np.isfinite(row["train_loss"]) or not np.isfinite(row["val_loss"]):
            raise PipelineError(f"non-finite loss at epoch {epoch}")

    save_checkpoint(weights_out, model, spec, norm, cfg, history)
    csv_path = Path(loss_csv) if loss_csv else default_loss_csv(weights_out)
    write_history_csv(history, csv_path)
    return {
        "weights": str(weights_out),
        "loss_csv": str(csv_path),
        "epochs": cfg.epochs,
        "train_samples": int(len(train_idx)),
        "val_samples": int(len(val_idx)),
        "final_train_loss": history[-1]["train_loss"],
        "final_val_loss": history[-1]["val_loss"],
        "history": history,
    }


def default_loss_csv(weights_out) -> Path:
    p = Path(weights_out)
    return p.with_name(p.stem + ".losses.csv")
