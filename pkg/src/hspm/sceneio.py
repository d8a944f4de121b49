"""Scene/estimate/channel file formats.

Scene JSON carries only independent quantities (frequency, layouts, LoS
geometry, NLoS angles + reflection coefficients); distances and amplitudes
of NLoS paths are derived at load time from the reflector geometry, so a
save/load round trip is exact and the scene hash is stable.

Channel files are a single JSON header line {rows, cols, model, scene_hash}
followed by row-major little-endian float64 (re, im) pairs.
"""

from __future__ import annotations

import json
import math
import os
from typing import Any

import numpy as np

from .channel import ChannelMatrix
from .errors import InvalidArgumentError, ValidationError
from .estimation import ReferenceParamsEstimate
from .geometry import (
    C_LIGHT,
    ArrayLayout,
    GainModel,
    PathParams,
    Scene,
    arr_angles,
    free_space_amp,
    reflector_from_reference_params,
    u_dep,
    wrap_azimuth,
)

ANGLE_CONSISTENCY_TOL = 1e-6    # radians


# ---------------------------------------------------------------------------
# scene schema
# ---------------------------------------------------------------------------

def _require(d: dict, key: str, kind, where: str):
    if key not in d:
        raise ValidationError("missing required field", field=f"{where}{key}")
    v = d[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ValidationError(f"expected a number, got {type(v).__name__}",
                                  field=f"{where}{key}")
        return float(v)
    if kind is int:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValidationError(f"expected an integer, got {type(v).__name__}",
                                  field=f"{where}{key}")
        return v
    if kind is list and not isinstance(v, list):
        raise ValidationError(f"expected a list, got {type(v).__name__}",
                              field=f"{where}{key}")
    if kind is dict and not isinstance(v, dict):
        raise ValidationError(f"expected an object, got {type(v).__name__}",
                              field=f"{where}{key}")
    return v


def _layout_from_dict(d: dict, spacing: float, where: str) -> ArrayLayout:
    offs = _require(d, "subarray_offsets", list, where)
    na_x = _require(d, "na_x", int, where)
    na_z = _require(d, "na_z", int, where)
    try:
        subs = tuple((int(o[0]), int(o[1])) for o in offs)
    except (TypeError, IndexError, ValueError) as exc:
        raise ValidationError(f"offsets must be [m_x, m_z] integer pairs: {exc}",
                              field=f"{where}subarray_offsets") from exc
    try:
        return ArrayLayout(subarrays=subs, na_x=na_x, na_z=na_z, d=spacing)
    except InvalidArgumentError as exc:
        raise ValidationError(str(exc), field=f"{where}subarray_offsets") from exc


def scene_from_dict(data: dict) -> Scene:
    """Validate and build a Scene; derives NLoS distances and all amplitudes."""
    if not isinstance(data, dict):
        raise ValidationError("scene document must be a JSON object", field="$")
    freq = _require(data, "frequency_hz", float, "")
    if freq <= 0:
        raise ValidationError("must be > 0", field="frequency_hz")
    lam = C_LIGHT / freq
    spacing = lam / 2.0
    if "d_m" in data:
        d_m = _require(data, "d_m", float, "")
        if abs(d_m - spacing) > 1e-9 * lam:
            raise ValidationError(
                f"antenna spacing must equal lambda/2 = {spacing!r}, got {d_m!r}",
                field="d")
    tx = _layout_from_dict(_require(data, "tx", dict, ""), spacing, "tx.")
    rx = _layout_from_dict(_require(data, "rx", dict, ""), spacing, "rx.")
    d11 = _require(data, "d11_m", float, "")
    if d11 <= 0:
        raise ValidationError("must be > 0", field="d11_m")

    los = _require(data, "los", dict, "")
    th_t = _require(los, "theta_t", float, "los.")
    ph_t = _require(los, "phi_t", float, "los.")
    th_r = _require(los, "theta_r", float, "los.")
    ph_r = _require(los, "phi_r", float, "los.")
    if abs(wrap_azimuth(th_r + th_t)) > ANGLE_CONSISTENCY_TOL:
        raise ValidationError(
            "LoS arrival azimuth must mirror departure (theta_r = -theta_t)",
            field="los.theta_r")
    if abs(ph_r + ph_t) > ANGLE_CONSISTENCY_TOL:
        raise ValidationError(
            "LoS arrival elevation must mirror departure (phi_r = -phi_t)",
            field="los.phi_r")

    gm = data.get("gain_model", {})
    if not isinstance(gm, dict):
        raise ValidationError("expected an object", field="gain_model")
    k_abs = float(gm.get("k_abs", 0.0))
    if k_abs < 0:
        raise ValidationError("must be >= 0", field="gain_model.k_abs")

    paths = []
    try:
        paths.append(PathParams(
            index=1, amp=free_space_amp(d11, lam, 1.0, k_abs), dist=d11,
            theta_t=th_t, phi_t=ph_t, theta_r=th_r, phi_r=ph_r))
    except InvalidArgumentError as exc:
        raise ValidationError(str(exc), field="los") from exc

    refl = []
    nlos = data.get("nlos", [])
    if not isinstance(nlos, list):
        raise ValidationError("expected a list", field="nlos")
    for i, entry in enumerate(nlos):
        where = f"nlos[{i}]."
        if not isinstance(entry, dict):
            raise ValidationError("expected an object", field=f"nlos[{i}]")
        p_th_t = _require(entry, "theta_t", float, where)
        p_ph_t = _require(entry, "phi_t", float, where)
        p_th_r = _require(entry, "theta_r", float, where)
        p_ph_r = _require(entry, "phi_r", float, where)
        gamma = _require(entry, "refl_coeff", float, where)
        if not (0.0 < gamma <= 1.0):
            raise ValidationError("must lie in (0, 1]", field=f"{where}refl_coeff")
        try:
            s_ref, _, d_ref = reflector_from_reference_params(
                d11, th_t, ph_t, th_r, p_th_t, p_ph_t, p_th_r)
        except Exception as exc:
            raise ValidationError(f"path admits no reflector: {exc}",
                                  field=f"nlos[{i}]") from exc
        r1 = d11 * u_dep(th_t, ph_t)
        seg = s_ref - r1
        seg_len = float(np.linalg.norm(seg))
        th_r_implied, ph_r_implied = arr_angles(seg / seg_len)
        if abs(wrap_azimuth(th_r_implied - p_th_r)) > ANGLE_CONSISTENCY_TOL:
            raise ValidationError(
                f"arrival azimuth inconsistent with reflector geometry "
                f"(implied {th_r_implied!r})", field=f"{where}theta_r")
        if abs(ph_r_implied - p_ph_r) > ANGLE_CONSISTENCY_TOL:
            raise ValidationError(
                f"arrival elevation inconsistent with reflector geometry "
                f"(implied {ph_r_implied!r})", field=f"{where}phi_r")
        dist = d_ref + seg_len
        try:
            paths.append(PathParams(
                index=i + 2, amp=free_space_amp(dist, lam, gamma, k_abs),
                dist=dist, theta_t=p_th_t, phi_t=p_ph_t,
                theta_r=p_th_r, phi_r=p_ph_r))
        except InvalidArgumentError as exc:
            raise ValidationError(str(exc), field=f"nlos[{i}]") from exc
        refl.append(gamma)

    try:
        return Scene(frequency=freq, tx=tx, rx=rx, paths=tuple(paths),
                     gain_model=GainModel(k_abs=k_abs, refl=tuple(refl)))
    except (InvalidArgumentError, ValidationError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc), field="$") from exc


def load_scene(path: str | os.PathLike) -> Scene:
    """Parse and validate a scene JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"scene file not found: {path}", field="$") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            field="$") from exc
    return scene_from_dict(data)


def save_scene(scene: Scene, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# channel matrix files
# ---------------------------------------------------------------------------

def save_channel(cm: ChannelMatrix, path: str | os.PathLike) -> None:
    header = {
        "rows": int(cm.entries.shape[0]),
        "cols": int(cm.entries.shape[1]),
        "model": cm.model,
        "scene_hash": cm.scene_hash,
    }
    interleaved = np.empty(cm.entries.shape + (2,), dtype="<f8")
    interleaved[..., 0] = cm.entries.real
    interleaved[..., 1] = cm.entries.imag
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(interleaved.tobytes())


def load_channel(path: str | os.PathLike) -> ChannelMatrix:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
        rows, cols = int(header["rows"]), int(header["cols"])
        model, scene_hash = header["model"], header["scene_hash"]
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ValidationError(f"bad channel file header: {exc}", field="header") from exc
    expected = rows * cols * 2 * 8
    if len(payload) != expected:
        raise ValidationError(
            f"payload is {len(payload)} bytes, expected {expected}", field="payload")
    flat = np.frombuffer(payload, dtype="<f8").reshape(rows, cols, 2)
    return ChannelMatrix(flat[..., 0] + 1j * flat[..., 1], model, scene_hash)


# ---------------------------------------------------------------------------
# external Phase-1 estimates
# ---------------------------------------------------------------------------

def export_reference_estimate(est: ReferenceParamsEstimate,
                              path: str | os.PathLike) -> None:
    doc = {
        "paths": [
            {
                "amp": float(est.amp[i]),
                "dist_m": float(est.dist[i]),
                "theta_t_rad": float(est.theta_t[i]),
                "phi_t_rad": float(est.phi_t[i]),
                "theta_r_rad": float(est.theta_r[i]),
                "phi_r_rad": float(est.phi_r[i]),
            }
            for i in range(est.n_paths)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# field -> (lo, hi, hi_inclusive); lo is always exclusive
_ESTIMATE_RANGES: dict[str, tuple[float, float, bool]] = {
    "amp": (0.0, 1.0, True),
    "dist_m": (0.0, math.inf, False),
    "theta_t_rad": (-math.pi, math.pi, True),
    "phi_t_rad": (-math.pi / 2, math.pi / 2, False),
    "theta_r_rad": (-math.pi, math.pi, True),
    "phi_r_rad": (-math.pi / 2, math.pi / 2, False),
}


def import_external_estimates(path: str | os.PathLike) -> ReferenceParamsEstimate:
    """Load denormalized Phase-1 estimates (radians/meters) with validation."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"estimates file not found: {path}", field="$") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"parse error at line {exc.lineno}: {exc.msg}", field="$") from exc
    if not isinstance(doc, dict):
        raise ValidationError("estimates document must be a JSON object", field="$")
    entries = _require(doc, "paths", list, "")
    if len(entries) < 1:
        raise ValidationError("needs at least one path", field="paths")
    cols: dict[str, list[float]] = {k: [] for k in _ESTIMATE_RANGES}
    for i, entry in enumerate(entries):
        where = f"paths[{i}]."
        if not isinstance(entry, dict):
            raise ValidationError("expected an object", field=f"paths[{i}]")
        for key, (lo, hi, hi_inc) in _ESTIMATE_RANGES.items():
            v = _require(entry, key, float, where)
            in_range = (lo < v <= hi) if hi_inc else (lo < v < hi)
            if not in_range or not math.isfinite(v):
                bracket = "]" if hi_inc else ")"
                raise ValidationError(
                    f"value {v!r} outside ({lo!r}, {hi!r}{bracket}",
                    field=f"{where}{key}")
            cols[key].append(v)
    try:
        return ReferenceParamsEstimate(
            amp=np.array(cols["amp"]), dist=np.array(cols["dist_m"]),
            theta_t=np.array(cols["theta_t_rad"]), phi_t=np.array(cols["phi_t_rad"]),
            theta_r=np.array(cols["theta_r_rad"]), phi_r=np.array(cols["phi_r_rad"]),
            provenance="external")
    except InvalidArgumentError as exc:
        raise ValidationError(str(exc), field="paths") from exc
