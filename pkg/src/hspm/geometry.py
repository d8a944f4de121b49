"""Array layouts, antenna coordinates, and 3-D specular-reflection geometry.

Coordinate frame (used everywhere): the Tx reference antenna sits at the
origin, y points toward the Rx azimuth reference, z is up.  An antenna with
integer offsets (m_x + n_x, m_z + n_z) sits at ((m_x+n_x)*d, 0, -(m_z+n_z)*d):
x grows along the row, z decreases downward.

Departure directions use u(theta, phi) = (sin t cos p, cos t cos p, sin p).
Arrival directions are expressed in the y-mirrored frame, so for a unit
vector v pointing from the receiver toward the source,
theta_r = atan2(v_x, -v_y) and phi_r = asin(v_z).  With this convention the
line-of-sight satisfies theta_r = -theta_t and phi_r = -phi_t exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    NoSpecularPathError,
    ValidationError,
)

C_LIGHT = 299_792_458.0

# Denominator tolerance for double-precision geometry at meter scale.
DEGENERACY_TOL = 1e-12
# Planes nearly parallel to the z-axis cannot be normalized to C = 1.
PLANE_C_TOL = 1e-6


# ---------------------------------------------------------------------------
# angle helpers
# ---------------------------------------------------------------------------

def wrap_azimuth(a):
    """Wrap azimuth(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.isscalar(a) or np.ndim(a) == 0:
        return float(w)
    return w


def u_dep(theta, phi):
    """Unit departure vector for azimuth theta, elevation phi."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    return np.stack(np.broadcast_arrays(st * cp, ct * cp, sp), axis=-1)


def dep_angles(v):
    """(azimuth, elevation) of a direction v seen from the transmitter."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.arctan2(v[..., 0], v[..., 1])
    phi = np.arcsin(np.clip(v[..., 2] / r, -1.0, 1.0))
    return theta, phi


def arr_angles(v):
    """(azimuth, elevation) in the receiver's mirrored frame.

    v points from the receiver toward the source of the incoming ray.
    """
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.arctan2(v[..., 0], -v[..., 1])
    phi = np.arcsin(np.clip(v[..., 2] / r, -1.0, 1.0))
    return theta, phi


def _check_azimuth(value: float, name: str):
    if not (-math.pi < value <= math.pi):
        raise InvalidArgumentError(f"{name} must lie in (-pi, pi], got {value!r}")


def _check_elevation(value: float, name: str):
    if not (-math.pi / 2 < value < math.pi / 2):
        raise InvalidArgumentError(f"{name} must lie in (-pi/2, pi/2), got {value!r}")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrayLayout:
    """Planar array of K subarrays, each an Na_x-by-Na_z antenna grid.

    subarrays holds integer (m_x, m_z) offsets in units of d; the first
    subarray is pinned at (0, 0) and carries the reference antenna.
    """

    subarrays: tuple[tuple[int, int], ...]
    na_x: int
    na_z: int
    d: float

    def __post_init__(self):
        subs = tuple((int(mx), int(mz)) for mx, mz in self.subarrays)
        object.__setattr__(self, "subarrays", subs)
        if len(subs) < 1:
            raise InvalidArgumentError("layout needs at least one subarray")
        if subs[0] != (0, 0):
            raise InvalidArgumentError(
                f"first subarray offset must be (0, 0), got {subs[0]}")
        if any(mx < 0 or mz < 0 for mx, mz in subs):
            raise InvalidArgumentError("subarray offsets must be non-negative")
        if len(set(subs)) != len(subs):
            raise InvalidArgumentError("subarray offsets must be pairwise distinct")
        if self.na_x < 1 or self.na_z < 1:
            raise InvalidArgumentError("na_x and na_z must be >= 1")
        if not (self.d > 0):
            raise InvalidArgumentError(f"antenna spacing d must be > 0, got {self.d!r}")

    @property
    def n_subarrays(self) -> int:
        return len(self.subarrays)

    @property
    def subarray_size(self) -> int:
        return self.na_x * self.na_z

    @property
    def n_antennas(self) -> int:
        return self.n_subarrays * self.subarray_size

    def offsets(self) -> np.ndarray:
        return np.asarray(self.subarrays, dtype=float)

    def integer_positions(self) -> np.ndarray:
        """(N, 2) integer (x, z) offsets in units of d, canonical order.

        Canonical antenna order is subarray-major: index
        k*(na_x*na_z) + n_x*na_z + n_z.
        """
        nx = np.arange(self.na_x)
        nz = np.arange(self.na_z)
        gx, gz = np.meshgrid(nx, nz, indexing="ij")
        local = np.stack([gx.ravel(), gz.ravel()], axis=1)  # (na, 2)
        offs = np.asarray(self.subarrays, dtype=int)  # (K, 2)
        out = offs[:, None, :] + local[None, :, :]
        return out.reshape(-1, 2)

    def positions(self) -> np.ndarray:
        """(N, 3) antenna coordinates in the local frame, canonical order."""
        ip = self.integer_positions().astype(float)
        pts = np.zeros((ip.shape[0], 3))
        pts[:, 0] = ip[:, 0] * self.d
        pts[:, 2] = -ip[:, 1] * self.d
        return pts

    def to_dict(self) -> dict:
        return {
            "subarray_offsets": [list(s) for s in self.subarrays],
            "na_x": self.na_x,
            "na_z": self.na_z,
        }


@dataclass(frozen=True)
class PathParams:
    """Reference-pair parameters of one propagation path (index 1 = LoS)."""

    index: int
    amp: float
    dist: float
    theta_t: float
    phi_t: float
    theta_r: float
    phi_r: float

    def __post_init__(self):
        if self.index < 1:
            raise InvalidArgumentError(f"path index must be >= 1, got {self.index}")
        if not (0.0 < self.amp <= 1.0):
            raise InvalidArgumentError(f"amp must lie in (0, 1], got {self.amp!r}")
        if not (self.dist > 0):
            raise InvalidArgumentError(f"dist must be > 0, got {self.dist!r}")
        _check_azimuth(self.theta_t, "theta_t")
        _check_azimuth(self.theta_r, "theta_r")
        _check_elevation(self.phi_t, "phi_t")
        _check_elevation(self.phi_r, "phi_r")


@dataclass(frozen=True)
class GainModel:
    """Parametric amplitude model: free-space reference gain scaled by a
    per-path reflection coefficient and optional molecular absorption."""

    k_abs: float = 0.0
    refl: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "refl", tuple(float(g) for g in self.refl))
        if self.k_abs < 0:
            raise InvalidArgumentError(f"k_abs must be >= 0, got {self.k_abs!r}")
        for i, g in enumerate(self.refl):
            if not (0.0 < g <= 1.0):
                raise InvalidArgumentError(
                    f"reflection coefficient {i} must lie in (0, 1], got {g!r}")


def free_space_amp(dist: float, lam: float, refl: float = 1.0,
                   k_abs: float = 0.0) -> float:
    """|alpha| = lam/(4 pi D) * refl * exp(-k_abs D / 2)."""
    return lam / (4.0 * math.pi * dist) * refl * math.exp(-k_abs * dist / 2.0)


@dataclass(frozen=True)
class Scene:
    """Frequency, array layouts, and per-path reference parameters.

    The single source of truth for every synthesis and estimation entry
    point.  paths[0] is the LoS path.
    """

    frequency: float
    tx: ArrayLayout
    rx: ArrayLayout
    paths: tuple[PathParams, ...]
    gain_model: GainModel = field(default_factory=GainModel)

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not (self.frequency > 0):
            raise InvalidArgumentError("frequency must be > 0")
        if len(self.paths) < 1:
            raise InvalidArgumentError("scene needs at least one path")
        for want, p in enumerate(self.paths, start=1):
            if p.index != want:
                raise InvalidArgumentError(
                    f"path indices must be 1..N_p in order, got {p.index} at slot {want}")
        lam = self.wavelength
        for side, layout in (("tx", self.tx), ("rx", self.rx)):
            if abs(layout.d - lam / 2.0) > 1e-9 * lam:
                raise ValidationError(
                    f"antenna spacing must equal lambda/2 = {lam / 2.0!r}, "
                    f"got {layout.d!r}", field=f"{side}.d")

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.frequency

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def los(self) -> PathParams:
        return self.paths[0]

    @property
    def d11(self) -> float:
        return self.paths[0].dist

    def rx_ref_position(self) -> np.ndarray:
        p = self.los
        return p.dist * u_dep(p.theta_t, p.phi_t)

    def to_dict(self) -> dict:
        """Canonical JSON-ready dict (derived quantities omitted)."""
        d = {
            "frequency_hz": self.frequency,
            "tx": self.tx.to_dict(),
            "rx": self.rx.to_dict(),
            "d11_m": self.d11,
            "los": {
                "theta_t": self.los.theta_t,
                "phi_t": self.los.phi_t,
                "theta_r": self.los.theta_r,
                "phi_r": self.los.phi_r,
            },
            "nlos": [
                {
                    "theta_t": p.theta_t,
                    "phi_t": p.phi_t,
                    "theta_r": p.theta_r,
                    "phi_r": p.phi_r,
                    "refl_coeff": self.gain_model.refl[i],
                }
                for i, p in enumerate(self.paths[1:])
            ],
            "gain_model": {"k_abs": self.gain_model.k_abs},
        }
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ReflectorPlane:
    """Plane a*x + b*y + c*z + d0 = 0 normalized to c = 1."""

    a: float
    b: float
    c: float
    d0: float

    def __post_init__(self):
        if self.c != 1.0:
            raise InvalidArgumentError(f"plane must be normalized to c = 1, got {self.c!r}")
        if not np.isfinite([self.a, self.b, self.d0]).all():
            raise InvalidArgumentError("plane coefficients must be finite")

    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, pts) -> np.ndarray | float:
        pts = np.asarray(pts, dtype=float)
        n = self.normal()
        val = (pts @ n + self.d0) / np.linalg.norm(n)
        return val

    def mirror(self, pts) -> np.ndarray:
        """Reflect point(s) across the plane."""
        pts = np.asarray(pts, dtype=float)
        n = self.normal()
        nhat = n / np.linalg.norm(n)
        s = self.signed_distance(pts)
        return pts - 2.0 * np.multiply.outer(s, nhat).reshape(pts.shape)


def plane_from_point_normal(point, normal) -> ReflectorPlane:
    """Normalize (normal, point) to the c = 1 representation."""
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if nn < DEGENERACY_TOL:
        raise DegenerateGeometryError("zero plane normal", denominator="|n|")
    if abs(n[2]) < PLANE_C_TOL * nn:
        raise DegenerateGeometryError(
            "plane nearly parallel to the z-axis cannot be normalized to c = 1",
            denominator="n_z")
    a, b = n[0] / n[2], n[1] / n[2]
    d0 = -(a * point[0] + b * point[1] + point[2])
    return ReflectorPlane(a=float(a), b=float(b), c=1.0, d0=float(d0))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def antenna_position(layout: ArrayLayout, k: int, n_x: int, n_z: int) -> np.ndarray:
    """Coordinates of antenna (k, n_x, n_z) in the array's local frame.

    k, n_x, n_z are 0-based; the reference antenna (0, 0, 0) sits at the
    origin.
    """
    if not (0 <= k < layout.n_subarrays):
        raise InvalidArgumentError(f"subarray index {k} out of range")
    if not (0 <= n_x < layout.na_x) or not (0 <= n_z < layout.na_z):
        raise InvalidArgumentError(f"antenna index ({n_x}, {n_z}) out of range")
    mx, mz = layout.subarrays[k]
    return np.array([(mx + n_x) * layout.d, 0.0, -(mz + n_z) * layout.d])


def rx_antenna_position(scene: Scene, k_r: int, n_x: int, n_z: int) -> np.ndarray:
    """Rx antenna coordinates in the Tx frame: reference position + local offset."""
    return scene.rx_ref_position() + antenna_position(scene.rx, k_r, n_x, n_z)


def rx_positions(scene: Scene) -> np.ndarray:
    """(N_r, 3) Rx antenna coordinates in the Tx frame, canonical order."""
    return scene.rx_ref_position()[None, :] + scene.rx.positions()


def reflector_from_reference_params(
    d11: float, theta_t1: float, phi_t1: float, theta_r1: float,
    theta_tp: float, phi_tp: float, theta_rp: float,
) -> tuple[np.ndarray, ReflectorPlane, float]:
    """Recover (reflection point, reflector plane, Tx->point distance) for an
    NLoS path from reference-pair parameters.

    Uses the projected law of sines in the azimuth plane for the distance and
    the exact incident/reflected bisector for the plane normal.
    """
    den_angle = math.sin(theta_rp + theta_tp)
    if abs(den_angle) < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "path departure/arrival azimuths admit no reflector",
            denominator="sin(theta_r + theta_t)")
    cpt = math.cos(phi_tp)
    if abs(cpt) < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "vertical departure admits no azimuth-plane projection",
            denominator="cos(phi_t)")
    d11_xy = d11 * math.cos(phi_t1)
    d_xy = d11_xy * math.sin(theta_rp - theta_r1) / den_angle
    d_ref = d_xy / cpt
    if d_ref <= DEGENERACY_TOL:
        raise DegenerateGeometryError(
            f"recovered reflector distance is non-positive ({d_ref:.3e} m)",
            denominator="d_ref")
    s_ref = d_ref * u_dep(theta_tp, phi_tp)
    t1 = np.zeros(3)
    r1 = d11 * u_dep(theta_t1, phi_t1)
    vt = t1 - s_ref
    vr = r1 - s_ref
    lt, lr = np.linalg.norm(vt), np.linalg.norm(vr)
    if lt < DEGENERACY_TOL or lr < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "reflection point coincides with an endpoint", denominator="|S-T| or |S-R|")
    n = vt / lt + vr / lr
    if np.linalg.norm(n) < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "grazing geometry: incident and reflected rays are anti-parallel",
            denominator="|bisector|")
    plane = plane_from_point_normal(s_ref, n)
    return s_ref, plane, float(d_ref)


def reflector_from_reference_path(
    scene: Scene, p: int,
) -> tuple[np.ndarray, ReflectorPlane, float]:
    """Reflection point, plane, and Tx->point distance for scene path p (1-based, p > 1)."""
    if not (2 <= p <= scene.n_paths):
        raise InvalidArgumentError(
            f"p must be an NLoS path index in [2, {scene.n_paths}], got {p}")
    los = scene.los
    pp = scene.paths[p - 1]
    return reflector_from_reference_params(
        los.dist, los.theta_t, los.phi_t, los.theta_r,
        pp.theta_t, pp.phi_t, pp.theta_r)


def mirror_reflection_point(plane: ReflectorPlane, t, r) -> np.ndarray:
    """Closed-form specular reflection point of the path t -> plane -> r.

    Reflects r across the plane and intersects the segment t -> r' with the
    plane; the result satisfies the specular law exactly and minimizes
    |t - S| + |S - r|.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    s_t = float(plane.signed_distance(t))
    s_r = float(plane.signed_distance(r))
    if s_t == 0.0 or s_r == 0.0 or (s_t > 0) != (s_r > 0):
        raise NoSpecularPathError(
            f"endpoints must lie strictly on the same side of the plane "
            f"(signed distances {s_t:.3e}, {s_r:.3e})")
    r_mirror = r - 2.0 * s_r * plane.normal() / np.linalg.norm(plane.normal())
    tau = s_t / (s_t + s_r)
    return t + tau * (r_mirror - t)


def specular_residual(plane: ReflectorPlane, t, s, r) -> float:
    """|angle of incidence - angle of reflection| at s, against the plane normal."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    if abs(float(plane.signed_distance(s))) > 1e-6:
        raise InvalidArgumentError(
            f"s is {float(plane.signed_distance(s)):.3e} m off the plane (tolerance 1e-6)")
    nhat = plane.normal() / np.linalg.norm(plane.normal())
    side = float(plane.signed_distance(t))
    if side < 0:
        nhat = -nhat
    vi = t - s
    vo = r - s
    li, lo = np.linalg.norm(vi), np.linalg.norm(vo)
    if li < DEGENERACY_TOL or lo < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "ray endpoint coincides with the reflection point",
            denominator="|t-s| or |r-s|")
    ai = math.acos(min(1.0, max(-1.0, float(vi @ nhat) / li)))
    ar = math.acos(min(1.0, max(-1.0, float(vo @ nhat) / lo)))
    return abs(ai - ar)
