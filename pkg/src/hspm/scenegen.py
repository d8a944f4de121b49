"""Random scene sampling for Monte Carlo runs and dataset export.

Rx reference positions are drawn uniformly in a configurable box (y > 0 so
the departure frame stays valid); reflection points are drawn by departure
direction and relative range, with arrival angles derived from the actual
geometry so every sampled scene is self-consistent by construction.
Degenerate draws (grazing reflector, near-parallel paths, plane cutting an
array) are rejected and redrawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError, ValidationError
from .geometry import (
    C_LIGHT,
    ArrayLayout,
    GainModel,
    PathParams,
    Scene,
    arr_angles,
    dep_angles,
    free_space_amp,
    u_dep,
    wrap_azimuth,
)

MAX_DRAWS = 2000


def _axis_extent_m(layout: ArrayLayout) -> float:
    """Upper bound on the distance of any antenna from the array reference."""
    mx = max(m for m, _ in layout.subarrays)
    mz = max(m for _, m in layout.subarrays)
    return layout.d * math.hypot(mx + layout.na_x - 1, mz + layout.na_z - 1)


@dataclass(frozen=True)
class SamplerConfig:
    frequency: float
    tx_offsets: tuple[tuple[int, int], ...]
    rx_offsets: tuple[tuple[int, int], ...]
    tx_na: tuple[int, int] = (2, 2)
    rx_na: tuple[int, int] = (2, 2)
    n_nlos: int = 2
    rx_box: tuple[tuple[float, float], ...] = ((-3.0, 3.0), (5.0, 30.0), (-2.0, 2.0))
    scatter_rel_dist: tuple[float, float] = (0.3, 1.5)
    scatter_az_range: tuple[float, float] = (-1.3, 1.3)
    scatter_el_range: tuple[float, float] = (-0.6, 0.6)
    refl_range: tuple[float, float] = (0.4, 0.9)
    k_abs: float = 0.0
    min_azimuth_sep: float = 0.05
    min_sin_sum: float = 0.05
    min_normal_z: float = 1e-3
    margin_factor: float = 1.5

    def __post_init__(self):
        if self.frequency <= 0:
            raise InvalidArgumentError("frequency must be > 0")
        if self.n_nlos < 0:
            raise InvalidArgumentError("n_nlos must be >= 0")
        if len(self.rx_box) != 3 or any(hi <= lo for lo, hi in self.rx_box):
            raise InvalidArgumentError("rx_box needs three (lo, hi) ranges with hi > lo")
        if self.rx_box[1][0] <= 0:
            raise InvalidArgumentError("rx_box y range must be positive (broadside)")
        lo, hi = self.scatter_rel_dist
        if not (0 < lo < hi):
            raise InvalidArgumentError("scatter_rel_dist must satisfy 0 < lo < hi")
        glo, ghi = self.refl_range
        if not (0 < glo <= ghi <= 1):
            raise InvalidArgumentError("refl_range must lie in (0, 1]")

    def layouts(self) -> tuple[ArrayLayout, ArrayLayout]:
        d = C_LIGHT / self.frequency / 2.0
        tx = ArrayLayout(tuple(self.tx_offsets), self.tx_na[0], self.tx_na[1], d)
        rx = ArrayLayout(tuple(self.rx_offsets), self.rx_na[0], self.rx_na[1], d)
        return tx, rx


def sampler_from_dict(doc: dict) -> SamplerConfig:
    """Build a SamplerConfig from a JSON-shaped dict (CLI config plumbing)."""
    if not isinstance(doc, dict):
        raise ValidationError("sampler config must be an object", field="sampler")
    kwargs = dict(doc)
    try:
        for key in ("tx_offsets", "rx_offsets"):
            kwargs[key] = tuple((int(a), int(b)) for a, b in kwargs[key])
        for key in ("tx_na", "rx_na"):
            if key in kwargs:
                kwargs[key] = (int(kwargs[key][0]), int(kwargs[key][1]))
        for key in ("scatter_rel_dist", "scatter_az_range",
                    "scatter_el_range", "refl_range"):
            if key in kwargs:
                kwargs[key] = (float(kwargs[key][0]), float(kwargs[key][1]))
        if "rx_box" in kwargs:
            kwargs["rx_box"] = tuple(
                (float(lo), float(hi)) for lo, hi in kwargs["rx_box"])
        return SamplerConfig(**kwargs)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise ValidationError(str(exc), field="sampler") from exc
        raise ValidationError(f"bad sampler config: {exc}", field="sampler") from exc


def _plane_clearance(s: np.ndarray, n: np.ndarray, point: np.ndarray) -> float:
    """Signed distance of `point` from the plane through s with normal n."""
    return float(np.dot(n, point - s) / np.linalg.norm(n))


def sample_scene(cfg: SamplerConfig, seed: int) -> Scene:
    """Draw one non-degenerate scene; deterministic in (cfg, seed)."""
    rng = np.random.default_rng([seed] if np.isscalar(seed) else seed)
    lam = C_LIGHT / cfg.frequency
    tx, rx = cfg.layouts()
    ext_t = _axis_extent_m(tx) * cfg.margin_factor
    ext_r = _axis_extent_m(rx) * cfg.margin_factor

    (xlo, xhi), (ylo, yhi), (zlo, zhi) = cfg.rx_box
    for _ in range(MAX_DRAWS):
        r1 = np.array([rng.uniform(xlo, xhi), rng.uniform(ylo, yhi),
                       rng.uniform(zlo, zhi)])
        d11 = float(np.linalg.norm(r1))
        if d11 < 10 * max(ext_t, ext_r, lam):
            continue
        th_t1, ph_t1 = dep_angles(r1)
        if abs(ph_t1) > math.pi / 2 - 0.05:
            continue
        break
    else:
        raise DegenerateGeometryError("could not sample a valid Rx position")
    th_r1, ph_r1 = wrap_azimuth(-th_t1), -ph_t1

    paths = [PathParams(index=1, amp=free_space_amp(d11, lam, 1.0, cfg.k_abs),
                        dist=d11, theta_t=th_t1, phi_t=ph_t1,
                        theta_r=th_r1, phi_r=ph_r1)]
    refl = []
    used_dep_az = [th_t1]
    used_arr_az = [th_r1]
    for p in range(cfg.n_nlos):
        for _ in range(MAX_DRAWS):
            th_tp = rng.uniform(*cfg.scatter_az_range)
            ph_tp = rng.uniform(*cfg.scatter_el_range)
            ds = d11 * rng.uniform(*cfg.scatter_rel_dist)
            s = ds * u_dep(th_tp, ph_tp)
            seg = s - r1
            seg_len = float(np.linalg.norm(seg))
            if seg_len < 10 * max(ext_r, lam):
                continue
            th_rp, ph_rp = arr_angles(seg / seg_len)
            if abs(ph_rp) > math.pi / 2 - 0.05:
                continue
            # triangulation degeneracy guards (reference-path recovery)
            if abs(wrap_azimuth(th_rp - th_r1)) < cfg.min_azimuth_sep:
                continue
            if abs(math.sin(th_rp + th_tp)) < cfg.min_sin_sum:
                continue
            if any(abs(wrap_azimuth(th_tp - a)) < cfg.min_azimuth_sep
                   for a in used_dep_az):
                continue
            if any(abs(wrap_azimuth(th_rp - a)) < cfg.min_azimuth_sep
                   for a in used_arr_az):
                continue
            # reflector through S whose normal bisects S->T and S->R1
            n = -s / ds - seg / seg_len
            n_len = float(np.linalg.norm(n))
            if n_len < 1e-9 or abs(n[2]) / n_len < cfg.min_normal_z:
                continue
            c_t = _plane_clearance(s, n, np.zeros(3))
            c_r = _plane_clearance(s, n, r1)
            if c_t * c_r <= 0 or abs(c_t) <= ext_t or abs(c_r) <= ext_r:
                continue
            gamma = rng.uniform(*cfg.refl_range)
            dist = ds + seg_len
            paths.append(PathParams(
                index=p + 2, amp=free_space_amp(dist, lam, gamma, cfg.k_abs),
                dist=dist, theta_t=th_tp, phi_t=ph_tp,
                theta_r=th_rp, phi_r=ph_rp))
            refl.append(gamma)
            used_dep_az.append(th_tp)
            used_arr_az.append(th_rp)
            break
        else:
            raise DegenerateGeometryError(
                f"could not sample a valid reflection point for path {p + 2}")

    return Scene(frequency=cfg.frequency, tx=tx, rx=rx, paths=tuple(paths),
                 gain_model=GainModel(k_abs=cfg.k_abs, refl=tuple(refl)))
