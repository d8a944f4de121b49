"""Model-mismatch sweeps over distance, subarray spacing, and frequency.

Each sweep point rebuilds the scene from a JSON-shaped template dict and
compares PWM/HSPM against the exact SWM synthesis, emitting one CSV row
(axis value, mismatch in dB per model, far-field metric).

Axis semantics:
  distance   points in meters; replaces d11_m.
  spacing    points in multiples of lambda; the template's subarray_offsets
             are unit multipliers, scaled by round(2*v) half-wavelengths.
  frequency  points in Hz; offsets are rescaled by f/f0 so the physical
             aperture stays fixed (scaled offsets must stay integral).
"""

from __future__ import annotations

import copy
import csv
import os
from dataclasses import dataclass

from .channel import farfield_metric, model_mismatch_db, synth_hspm, synth_pwm, synth_swm
from .errors import InvalidArgumentError
from .geometry import Scene
from .sceneio import scene_from_dict

AXES = ("distance", "spacing", "frequency")
AXIS_UNITS = {"distance": "m", "spacing": "lambda", "frequency": "hz"}
MODELS = ("pwm", "hspm")


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    points: tuple[float, ...]
    template: dict
    models: tuple[str, ...] = MODELS

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvalidArgumentError(f"axis must be one of {AXES}, got {self.axis!r}")
        if len(self.points) < 2:
            raise InvalidArgumentError("need at least 2 sweep points")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise InvalidArgumentError("sweep points must be strictly increasing")
        if any(p <= 0 for p in self.points):
            raise InvalidArgumentError("sweep points must be positive")
        if not self.models or any(m not in MODELS for m in self.models):
            raise InvalidArgumentError(f"models must be a non-empty subset of {MODELS}")
        if not isinstance(self.template, dict):
            raise InvalidArgumentError("template must be a scene dict")


def _scale_offsets(doc: dict, factor: float, exact: bool) -> None:
    for side in ("tx", "rx"):
        scaled = []
        for mx, mz in doc[side]["subarray_offsets"]:
            sx, sz = mx * factor, mz * factor
            if exact and (abs(sx - round(sx)) > 1e-6 or abs(sz - round(sz)) > 1e-6):
                raise InvalidArgumentError(
                    f"{side} offset ({mx}, {mz}) scaled by {factor!r} is not integral")
            scaled.append([int(round(sx)), int(round(sz))])
        doc[side]["subarray_offsets"] = scaled


def scene_for_point(cfg: SweepConfig, value: float) -> Scene:
    doc = copy.deepcopy(cfg.template)
    if cfg.axis == "distance":
        doc["d11_m"] = float(value)
    elif cfg.axis == "spacing":
        half_waves = 2.0 * value
        if abs(half_waves - round(half_waves)) > 1e-9:
            raise InvalidArgumentError(
                f"spacing {value!r} lambda is not a whole number of half-wavelengths")
        _scale_offsets(doc, round(half_waves), exact=True)
    else:
        f0 = float(doc["frequency_hz"])
        _scale_offsets(doc, value / f0, exact=True)
        doc["frequency_hz"] = float(value)
    return scene_from_dict(doc)


def run_sweep(cfg: SweepConfig, out_csv: str | os.PathLike) -> dict:
    """Evaluate every sweep point, write the CSV, return a row summary."""
    header = [f"axis_value_{AXIS_UNITS[cfg.axis]}",
              "mismatch_pwm_db", "mismatch_hspm_db", "farfield_metric"]
    rows = []
    for i, value in enumerate(cfg.points):
        try:
            scene = scene_for_point(cfg, value)
            exact = synth_swm(scene)
            row = {header[0]: float(value), "farfield_metric": farfield_metric(scene)}
            row["mismatch_pwm_db"] = (
                model_mismatch_db(synth_pwm(scene), exact)
                if "pwm" in cfg.models else None)
            row["mismatch_hspm_db"] = (
                model_mismatch_db(synth_hspm(scene), exact)
                if "hspm" in cfg.models else None)
        except Exception as exc:
            raise type(exc)(
                f"sweep row {i} (axis value {value!r}): {exc}") from exc
        rows.append(row)

    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if row[k] is None else repr(float(row[k]))
                             for k in header])
    return {"axis": cfg.axis, "unit": AXIS_UNITS[cfg.axis],
            "n_points": len(rows), "rows": rows}
