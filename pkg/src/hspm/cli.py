"""Command-line surface.

Subcommands: synth, sweep, ffmetric, dataset, estimate, eval.  Exit codes:
0 success, 1 usage error, 2 validation error, 3 numerical/geometry failure.
All artifacts are deterministic in (inputs, seeds); stage timings in
estimate reports are written as 0.0 unless --timing is given, so repeated
runs stay byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .backend import backend_name
from .channel import farfield_metric, synth_hspm, synth_pwm, synth_swm
from .dataset import CodebookConfig, export_dataset
from .errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    NoSpecularPathError,
    NumericalFailureError,
    UsageError,
    ValidationError,
)
from .estimation import (
    nmse_db,
    omp_estimate,
    param_errors,
    phase1_grid,
    phase1_oracle,
    extend_reference,
    reconstruct_hspm,
    reference_truth,
)
from .geometry import Scene
from .sceneio import import_external_estimates, load_scene, save_channel
from .scenegen import sample_scene, sampler_from_dict
from .signal import random_codebook, stack_observations
from .sweeps import MODELS as SWEEP_MODELS
from .sweeps import AXES, SweepConfig, run_sweep

SYNTH = {"swm": synth_swm, "pwm": synth_pwm, "hspm": synth_hspm}
PHASE1_CHOICES = ("oracle", "grid", "omp", "external")
_TX_CB_TAG, _RX_CB_TAG = 9001, 9002


class _Parser(argparse.ArgumentParser):
    """argparse flavor that reports malformed invocations as exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _load_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"{what} file not found: {path}", field="$") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{what} parse error at line {exc.lineno}: {exc.msg}", field="$") from exc


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _build_codebooks(scene: Scene, seed, sizes=None):
    """Default beam sweep: N_s = subarray count, C = antennas per subarray."""
    sizes = sizes or {}
    ns_t = int(sizes.get("n_streams_tx") or scene.tx.n_subarrays)
    ns_r = int(sizes.get("n_streams_rx") or scene.rx.n_subarrays)
    c_t = int(sizes.get("n_codewords_tx") or max(1, scene.tx.n_antennas // ns_t))
    c_r = int(sizes.get("n_codewords_rx") or max(1, scene.rx.n_antennas // ns_r))
    key = [seed] if np.isscalar(seed) else list(seed)
    tx_cb = random_codebook(scene.tx, c_t, ns_t, key + [_TX_CB_TAG], side="tx")
    rx_cb = random_codebook(scene.rx, c_r, ns_r, key + [_RX_CB_TAG], side="rx")
    return tx_cb, rx_cb


def run_estimate(scene: Scene, phase1: str, *, estimates_path=None,
                 snr_db=None, seed: int = 0, truth: str = "swm",
                 timing: bool = False, grid_size: int = 90,
                 dict_size: int = 64, cb_sizes=None) -> dict:
    """One full Phase-1 -> Phase-2 -> reconstruction run against ground truth."""
    if phase1 not in PHASE1_CHOICES:
        raise InvalidArgumentError(f"phase1 must be one of {PHASE1_CHOICES}")
    if truth not in ("swm", "hspm"):
        raise InvalidArgumentError("truth must be 'swm' or 'hspm'")

    def clock():
        return time.perf_counter() * 1000.0 if timing else 0.0

    h_true = SYNTH[truth](scene)
    truth_params = reference_truth(scene)
    ms = {"phase1": 0.0, "phase2": 0.0, "reconstruction": 0.0}

    ref = None
    h_est = None
    t0 = clock()
    if phase1 == "oracle":
        ref = phase1_oracle(scene)
    elif phase1 == "external":
        if not estimates_path:
            raise UsageError("--estimates is required with --phase1 external")
        ref = import_external_estimates(estimates_path)
        if ref.n_paths != scene.n_paths:
            raise ValidationError(
                f"estimates carry {ref.n_paths} paths, scene has {scene.n_paths}",
                field="paths")
    else:
        tx_cb, rx_cb = _build_codebooks(scene, seed, cb_sizes)
        obs = stack_observations(synth_swm(scene), tx_cb, rx_cb, snr_db,
                                 [seed, 1], scene.wavelength)
        if phase1 == "grid":
            ref = phase1_grid(obs, tx_cb, rx_cb, grid_size, scene.n_paths)
        else:
            h_est = omp_estimate(obs, tx_cb, rx_cb, dict_size, scene.n_paths)
    ms["phase1"] = clock() - t0

    if ref is not None:
        t0 = clock()
        ext = extend_reference(ref, scene.tx, scene.rx)
        ms["phase2"] = clock() - t0
        t0 = clock()
        h_est = reconstruct_hspm(ext, ref.amp, scene.tx, scene.rx,
                                 scene.wavelength, scene.fingerprint())
        ms["reconstruction"] = clock() - t0

    if ref is not None:
        angle_db, dist_db, gain_db = param_errors(ref, truth_params)
    else:
        angle_db = dist_db = gain_db = None   # OMP estimates the channel only

    return {
        "scene_hash": scene.fingerprint(),
        "phase1": phase1,
        "truth_model": truth,
        "snr_db": None if snr_db is None or math.isinf(snr_db) else float(snr_db),
        "seed": int(seed),
        "n_paths": scene.n_paths,
        "nmse_db": nmse_db(h_est, h_true),
        "angle_err_db": angle_db,
        "dist_err_db": dist_db,
        "gain_err_db": gain_db,
        "runtime_ms": {**ms, "total": ms["phase1"] + ms["phase2"]
                       + ms["reconstruction"]},
    }


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> dict:
    scene = load_scene(args.scene)
    cm = SYNTH[args.model](scene)
    save_channel(cm, args.out)
    return {"out": str(args.out), "model": cm.model,
            "rows": cm.shape[0], "cols": cm.shape[1],
            "scene_hash": cm.scene_hash, "backend": backend_name()}


def _cmd_sweep(args) -> dict:
    cfg_doc = _load_json(args.config, "sweep config")
    if "template" not in cfg_doc or "points" not in cfg_doc:
        raise ValidationError("sweep config needs 'template' and 'points'",
                              field="$")
    cfg = SweepConfig(
        axis=args.axis,
        points=tuple(float(v) for v in cfg_doc["points"]),
        template=cfg_doc["template"],
        models=tuple(cfg_doc.get("models", SWEEP_MODELS)))
    summary = run_sweep(cfg, args.out)
    return {"out": str(args.out), "axis": summary["axis"],
            "unit": summary["unit"], "n_points": summary["n_points"]}


def _cmd_ffmetric(args) -> dict:
    scene = load_scene(args.scene)
    return {"scene_hash": scene.fingerprint(),
            "farfield_metric": farfield_metric(scene),
            "wavelength_m": scene.wavelength,
            "d11_m": scene.d11}


def _cmd_dataset(args) -> dict:
    cfg = _load_json(args.config, "dataset config")
    if "codebook" not in cfg:
        raise ValidationError("dataset config needs 'codebook'", field="codebook")
    try:
        cb = CodebookConfig(**{k: int(v) for k, v in cfg["codebook"].items()})
    except TypeError as exc:
        raise ValidationError(f"bad codebook config: {exc}", field="codebook") from exc
    snrs = cfg.get("snr_db")
    if not snrs:
        raise ValidationError("dataset config needs a non-empty 'snr_db' list",
                              field="snr_db")
    if "scenes" in cfg:
        base = Path(args.config).parent
        paths = [Path(p) if Path(p).is_absolute() else base / p
                 for p in cfg["scenes"]]
        manifest = export_dataset([load_scene(p) for p in paths], cb, snrs,
                                  args.out, args.seed)
    else:
        if "sampler" not in cfg or "n_scenes" not in cfg:
            raise ValidationError(
                "dataset config needs either 'scenes' or 'sampler' + 'n_scenes'",
                field="$")
        manifest = export_dataset(sampler_from_dict(cfg["sampler"]), cb, snrs,
                                  args.out, args.seed,
                                  n_scenes=int(cfg["n_scenes"]))
    return {"out": str(args.out), "num_samples": manifest.num_samples,
            "sample_shape": list(manifest.sample_shape),
            "label_dim": manifest.label_dim}


def _cmd_estimate(args) -> dict:
    scene = load_scene(args.scene)
    report = run_estimate(
        scene, args.phase1, estimates_path=args.estimates, snr_db=args.snr,
        seed=args.seed, truth=args.truth, timing=args.timing,
        grid_size=args.grid_size, dict_size=args.dict_size)
    _write_json(report, args.out)
    return report


def _cmd_eval(args) -> dict:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = _load_json(args.config, "eval config")
    if "sampler" not in cfg:
        raise ValidationError("eval config needs 'sampler'", field="sampler")
    sampler = sampler_from_dict(cfg["sampler"])
    estimators = list(cfg.get("estimators", ["oracle", "grid", "omp"]))
    for e in estimators:
        if e not in ("oracle", "grid", "omp"):
            raise ValidationError(f"unknown estimator {e!r}", field="estimators")
    snrs = list(cfg.get("snr_db", [None]))
    truth = cfg.get("truth", "swm")
    if truth not in SYNTH:
        raise ValidationError(f"unknown truth model {truth!r}", field="truth")
    grid_size = int(cfg.get("grid_size", 90))
    dict_size = int(cfg.get("dict_size", 64))
    perturb = cfg.get("oracle_perturb") or None
    cb_sizes = cfg.get("codebook") or None

    lin = {(e, j): [] for e in estimators for j in range(len(snrs))}
    failed = {(e, j): 0 for e in estimators for j in range(len(snrs))}
    numerical = (DegenerateGeometryError, NoSpecularPathError,
                 NumericalFailureError)
    for t in range(args.trials):
        scene = sample_scene(sampler, [args.seed, t])
        h_true = SYNTH[truth](scene).entries
        ref_norm = float(np.linalg.norm(h_true))
        tx_cb, rx_cb = _build_codebooks(scene, [args.seed, t], cb_sizes)
        for j, snr in enumerate(snrs):
            obs = None
            if any(e in ("grid", "omp") for e in estimators):
                obs = stack_observations(synth_swm(scene), tx_cb, rx_cb, snr,
                                         [args.seed, t, j], scene.wavelength)
            for e in estimators:
                try:
                    if e == "oracle":
                        ref = phase1_oracle(scene, perturb,
                                            seed=[args.seed, t, j, 7])
                    elif e == "grid":
                        ref = phase1_grid(obs, tx_cb, rx_cb, grid_size,
                                          scene.n_paths)
                    if e in ("oracle", "grid"):
                        ext = extend_reference(ref, scene.tx, scene.rx)
                        h_est = reconstruct_hspm(ext, ref.amp, scene.tx,
                                                 scene.rx, scene.wavelength).entries
                    else:
                        h_est = omp_estimate(obs, tx_cb, rx_cb, dict_size,
                                             scene.n_paths).entries
                except numerical:   # estimated params can be geometrically invalid
                    failed[(e, j)] += 1
                    continue
                lin[(e, j)].append(
                    (float(np.linalg.norm(h_est - h_true)) / ref_norm) ** 2)

    rows = []
    for e in estimators:
        for j, snr in enumerate(snrs):
            ok = lin[(e, j)]
            if ok:
                mean_lin = sum(ok) / len(ok)
                mean_db = -300.0 if mean_lin == 0 else 10.0 * math.log10(mean_lin)
            else:
                mean_db = None
            rows.append({"estimator": e,
                         "snr_db": None if snr is None else float(snr),
                         "trials": args.trials, "failures": failed[(e, j)],
                         "mean_nmse_db": mean_db})
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "snr_db", "trials", "failures",
                         "mean_nmse_db"])
        for row in rows:
            writer.writerow([row["estimator"],
                             "" if row["snr_db"] is None else repr(row["snr_db"]),
                             row["trials"], row["failures"],
                             "" if row["mean_nmse_db"] is None
                             else repr(row["mean_nmse_db"])])
    return {"out": str(args.out), "rows": len(rows), "trials": args.trials}


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="hspm",
                description="Subarray channel synthesis and two-phase estimation")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("synth", help="synthesize a channel matrix file")
    s.add_argument("--scene", required=True, help="scene JSON path")
    s.add_argument("--model", required=True, choices=sorted(SYNTH))
    s.add_argument("--out", required=True, help="output channel file")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("sweep", help="model-mismatch sweep to CSV")
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--config", required=True, help="JSON with template + points")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("ffmetric", help="far-field validity metric of a scene")
    s.add_argument("--scene", required=True)
    s.set_defaults(func=_cmd_ffmetric)

    s = sub.add_parser("dataset", help="export a training dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", required=True, type=int)
    s.set_defaults(func=_cmd_dataset)

    s = sub.add_parser("estimate", help="run one estimation pipeline")
    s.add_argument("--scene", required=True)
    s.add_argument("--phase1", choices=PHASE1_CHOICES, default="oracle")
    s.add_argument("--estimates", help="external estimates JSON (phase1=external)")
    s.add_argument("--snr", type=float, default=None,
                   help="observation SNR in dB (omit for noiseless)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output report JSON")
    s.add_argument("--truth", choices=("swm", "hspm"), default="swm")
    s.add_argument("--timing", action="store_true",
                   help="record wall-clock stage timings (breaks byte-identity)")
    s.add_argument("--grid-size", type=int, default=90)
    s.add_argument("--dict-size", type=int, default=64)
    s.set_defaults(func=_cmd_estimate)

    s = sub.add_parser("eval", help="Monte Carlo estimator comparison to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", required=True, type=int)
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("missing subcommand (see --help)")
        out = args.func(args)
        if out is not None:
            print(json.dumps(out, sort_keys=True))
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, InvalidArgumentError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateGeometryError, NoSpecularPathError,
            NumericalFailureError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
