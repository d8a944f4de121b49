"""Channel synthesis (spherical, planar, hybrid) and planar-approximation
error analysis.

Sign conventions: a path with reference distance D contributes the phasor
exp(-j*2*pi*D/lambda); array-response entries carry exp(+j*kappa*psi) with
kappa = 2*pi*d/lambda and psi = (m_x+n_x)*sin(theta)*cos(phi)
- (m_z+n_z)*sin(phi), so that moving an antenna toward the far end shortens
the path and advances the phase.  Both sides use the same formula; arrival
angles are already expressed in the receiver's mirrored frame (see geometry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import InvalidArgumentError, NoSpecularPathError
from .geometry import ArrayLayout, ReflectorPlane, Scene, reflector_from_reference_path, rx_positions

DB_FLOOR = -300.0

_MODELS = ("swm", "pwm", "hspm")


@dataclass(frozen=True)
class ChannelMatrix:
    """Dense complex N_r x N_t channel tagged with its model kind."""

    entries: np.ndarray
    model: str
    scene_hash: str = ""

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2:
            raise InvalidArgumentError(f"entries must be 2-D, got shape {e.shape}")
        if self.model not in _MODELS:
            raise InvalidArgumentError(f"model must be one of {_MODELS}, got {self.model!r}")
        if not np.isfinite(e).all():
            raise InvalidArgumentError("channel entries must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class ApproxErrorReport:
    """Per-pair planar-approximation error grid plus summary figures."""

    error_grid: np.ndarray        # (N_r, N_t), each entry in [0, 2]
    frobenius_rel_db: float
    farfield_metric: float


def _entries(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H, dtype=complex)


# ---------------------------------------------------------------------------
# elementary pieces
# ---------------------------------------------------------------------------

def path_gain(amp: float, dist: float, lam: float) -> complex:
    """Complex path gain amp * exp(-j*2*pi*dist/lam)."""
    if not (amp > 0 and dist > 0 and lam > 0):
        raise InvalidArgumentError(
            f"amp, dist, lambda must all be > 0, got ({amp!r}, {dist!r}, {lam!r})")
    return amp * np.exp(-2j * math.pi * dist / lam)


def array_response(layout: ArrayLayout, theta: float, phi: float, lam: float) -> np.ndarray:
    """Steering vector with entries exp(+j*(2*pi*d/lam)*psi); first entry 1."""
    if not (lam > 0):
        raise InvalidArgumentError(f"lambda must be > 0, got {lam!r}")
    ip = layout.integer_positions()  # (N, 2): (m_x+n_x, m_z+n_z)
    psi = ip[:, 0] * (math.sin(theta) * math.cos(phi)) - ip[:, 1] * math.sin(phi)
    kappa = 2.0 * math.pi * layout.d / lam
    return np.exp(1j * kappa * psi)


def _subarray_mirror_sources(scene: Scene, tx_pos: np.ndarray,
                             rx_pos: np.ndarray, p: int):
    """Mirror the Rx positions across reflector p (1-based NLoS index).

    Also enforces that every antenna on both sides lies strictly on the
    reflector's open half-space, otherwise the single-bounce path does not
    exist for some pair.
    """
    _, plane, _ = reflector_from_reference_path(scene, p)
    st = plane.signed_distance(tx_pos)
    sr = plane.signed_distance(rx_pos)
    ref_side = math.copysign(1.0, float(plane.signed_distance(np.zeros(3))))
    if np.any(st * ref_side <= 0) or np.any(sr * ref_side <= 0):
        raise NoSpecularPathError(
            f"reflector of path {p} passes through or behind an array; "
            "no specular path for some antenna pair")
    return plane.mirror(rx_pos)


def synth_swm(scene: Scene, amplitude_mode: str = "equal") -> ChannelMatrix:
    """Spherical-wave channel: exact per-pair distances for every path.

    amplitude_mode 'equal' uses the reference amplitude for all pairs;
    'distance' scales it by D_ref/D_pair.
    """
    if amplitude_mode not in ("equal", "distance"):
        raise InvalidArgumentError(f"unknown amplitude_mode {amplitude_mode!r}")
    lam = scene.wavelength
    k = 2.0 * math.pi / lam
    tx_pos = scene.tx.positions()
    rx_pos = rx_positions(scene)
    H = np.zeros((scene.rx.n_antennas, scene.tx.n_antennas), dtype=complex)
    scaled = amplitude_mode == "distance"
    for ix, path in enumerate(scene.paths):
        src = rx_pos if ix == 0 else _subarray_mirror_sources(scene, tx_pos, rx_pos, ix + 1)
        kernels.accumulate_path_phasors(
            H, np.ascontiguousarray(src), np.ascontiguousarray(tx_pos),
            path.amp, k, path.dist, scaled)
    return ChannelMatrix(H, "swm", scene.fingerprint())


def pwm_elementwise(scene: Scene) -> ChannelMatrix:
    """Planar-wave channel, per-entry phase route.

    Each entry carries the reference phasor times exp(+j*kappa*(psi_r+psi_t))
    evaluated from explicit integer antenna offsets.
    """
    lam = scene.wavelength
    kappa = 2.0 * math.pi * scene.tx.d / lam
    ip_t = scene.tx.integer_positions()
    ip_r = scene.rx.integer_positions()
    H = np.zeros((scene.rx.n_antennas, scene.tx.n_antennas), dtype=complex)
    for path in scene.paths:
        psi_t = (ip_t[:, 0] * (math.sin(path.theta_t) * math.cos(path.phi_t))
                 - ip_t[:, 1] * math.sin(path.phi_t))
        psi_r = (ip_r[:, 0] * (math.sin(path.theta_r) * math.cos(path.phi_r))
                 - ip_r[:, 1] * math.sin(path.phi_r))
        g = path_gain(path.amp, path.dist, lam)
        H += g * np.exp(1j * kappa * (psi_r[:, None] + psi_t[None, :]))
    return ChannelMatrix(H, "pwm", scene.fingerprint())


def synth_pwm(scene: Scene) -> ChannelMatrix:
    """Planar-wave channel, compact outer-product route (rank N_p)."""
    lam = scene.wavelength
    H = np.zeros((scene.rx.n_antennas, scene.tx.n_antennas), dtype=complex)
    for path in scene.paths:
        a_t = array_response(scene.tx, path.theta_t, path.phi_t, lam)
        a_r = array_response(scene.rx, path.theta_r, path.phi_r, lam)
        H += path_gain(path.amp, path.dist, lam) * np.outer(a_r, a_t)
    return ChannelMatrix(H, "pwm", scene.fingerprint())


def assemble_hspm(theta_t, phi_t, theta_r, phi_r, dist, amps,
                  tx_layout: ArrayLayout, rx_layout: ArrayLayout,
                  lam: float) -> np.ndarray:
    """Blockwise hybrid assembly from per-(k_t, k_r, p) parameters.

    All angle/distance arrays have shape (K_t, K_r, N_p).  Block (k_r, k_t)
    is sum_p amp_p * exp(-j*2*pi*D/lam) * outer(a_r_local, a_t_local) with
    local (per-subarray) steering vectors.
    """
    theta_t, phi_t = np.asarray(theta_t), np.asarray(phi_t)
    theta_r, phi_r = np.asarray(theta_r), np.asarray(phi_r)
    dist = np.asarray(dist)
    kt, kr, n_p = theta_t.shape
    if kt != tx_layout.n_subarrays or kr != rx_layout.n_subarrays:
        raise InvalidArgumentError(
            f"extension grid {theta_t.shape} does not match layouts "
            f"({tx_layout.n_subarrays}, {rx_layout.n_subarrays})")
    if len(amps) != n_p:
        raise InvalidArgumentError("one amplitude per path required")
    kappa = 2.0 * math.pi * tx_layout.d / lam

    nxt, nzt = np.meshgrid(np.arange(tx_layout.na_x), np.arange(tx_layout.na_z),
                           indexing="ij")
    nxt, nzt = nxt.ravel().astype(float), nzt.ravel().astype(float)
    nxr, nzr = np.meshgrid(np.arange(rx_layout.na_x), np.arange(rx_layout.na_z),
                           indexing="ij")
    nxr, nzr = nxr.ravel().astype(float), nzr.ravel().astype(float)

    na_t, na_r = tx_layout.subarray_size, rx_layout.subarray_size
    blocks = np.zeros((kt, kr, na_r, na_t), dtype=complex)
    for p in range(n_p):  # fixed path order for bit-reproducibility
        st_cp_t = np.sin(theta_t[:, :, p]) * np.cos(phi_t[:, :, p])
        sp_t = np.sin(phi_t[:, :, p])
        st_cp_r = np.sin(theta_r[:, :, p]) * np.cos(phi_r[:, :, p])
        sp_r = np.sin(phi_r[:, :, p])
        a_t = np.exp(1j * kappa * (st_cp_t[:, :, None] * nxt - sp_t[:, :, None] * nzt))
        a_r = np.exp(1j * kappa * (st_cp_r[:, :, None] * nxr - sp_r[:, :, None] * nzr))
        g = amps[p] * np.exp(-2j * math.pi * dist[:, :, p] / lam)
        blocks += g[:, :, None, None] * a_r[:, :, :, None] * a_t[:, :, None, :]
    # (K_t, K_r, na_r, na_t) -> (K_r, na_r, K_t, na_t) -> (N_r, N_t)
    H = blocks.transpose(1, 2, 0, 3).reshape(kr * na_r, kt * na_t)
    return H


def synth_hspm(scene: Scene) -> ChannelMatrix:
    """Hybrid channel: planar within subarrays, spherical across them.

    Per-subarray angles/distances come from the geometric extension of the
    ground-truth reference parameters (estimation module).
    """
    from .estimation import extend_reference, reference_truth  # avoid import cycle

    ref = reference_truth(scene)
    ext = extend_reference(ref, scene.tx, scene.rx)
    H = assemble_hspm(ext.theta_t, ext.phi_t, ext.theta_r, ext.phi_r, ext.dist,
                      np.array([p.amp for p in scene.paths]),
                      scene.tx, scene.rx, scene.wavelength)
    return ChannelMatrix(H, "hspm", scene.fingerprint())


# ---------------------------------------------------------------------------
# planar-approximation error
# ---------------------------------------------------------------------------

def _los_delta_integer(scene: Scene, i: int, l: int):
    """(delta_x, delta_z) combined integer offsets of pair (rx i, tx l)."""
    ip_t = scene.tx.integer_positions()
    ip_r = scene.rx.integer_positions()
    if not (0 <= i < ip_r.shape[0]) or not (0 <= l < ip_t.shape[0]):
        raise InvalidArgumentError(f"antenna pair ({i}, {l}) out of range")
    dx = ip_r[i, 0] - ip_t[l, 0]
    dz = ip_r[i, 1] - ip_t[l, 1]
    return float(dx), float(dz)


def pairwise_error_numeric(scene: Scene, i: int, l: int) -> float:
    """|exact LoS phasor - planar LoS phasor| for antenna pair (i, l)."""
    lam = scene.wavelength
    los = scene.los
    tx_pos = scene.tx.positions()
    rx_pos = rx_positions(scene)
    if not (0 <= i < rx_pos.shape[0]) or not (0 <= l < tx_pos.shape[0]):
        raise InvalidArgumentError(f"antenna pair ({i}, {l}) out of range")
    d_exact = float(np.linalg.norm(rx_pos[i] - tx_pos[l]))
    d_planar = los.dist + _planar_delta_distance(scene, i, l)
    return float(abs(np.exp(-2j * math.pi * d_exact / lam)
                     - np.exp(-2j * math.pi * d_planar / lam)))


def _planar_delta_distance(scene: Scene, i: int, l: int) -> float:
    """First-order LoS distance increment -d*(psi_t + psi_r) for pair (i, l)."""
    los = scene.los
    ip_t = scene.tx.integer_positions()
    ip_r = scene.rx.integer_positions()
    psi_t = (ip_t[l, 0] * math.sin(los.theta_t) * math.cos(los.phi_t)
             - ip_t[l, 1] * math.sin(los.phi_t))
    psi_r = (ip_r[i, 0] * math.sin(los.theta_r) * math.cos(los.phi_r)
             - ip_r[i, 1] * math.sin(los.phi_r))
    return -scene.tx.d * (psi_t + psi_r)


def pairwise_error_closed_form(scene: Scene, i: int, l: int,
                               eq_prefactor: float = 2.0) -> float:
    """Second-order closed form of the LoS pairwise error.

    prefactor * |sin( (pi d^2 / (2 D lam)) * [ (dm_x+dn_x)^2 (sin^2 t cos^2 p
    + cos^2 t) + (dm_z+dn_z)^2 cos^2 p ] )|.  The derivationally consistent
    prefactor is 2 (difference of two unit phasors); pass eq_prefactor=1.0
    for the halved historical variant.
    """
    if eq_prefactor not in (1.0, 2.0):
        raise InvalidArgumentError("eq_prefactor must be 1.0 or 2.0")
    los = scene.los
    lam = scene.wavelength
    dx, dz = _los_delta_integer(scene, i, l)
    st, ct = math.sin(los.theta_t), math.cos(los.theta_t)
    cp = math.cos(los.phi_t)
    bracket = dx * dx * (st * st * cp * cp + ct * ct) + dz * dz * cp * cp
    arg = math.pi * scene.tx.d ** 2 / (2.0 * los.dist * lam) * bracket
    return eq_prefactor * abs(math.sin(arg))


def pairwise_error_grid(scene: Scene) -> np.ndarray:
    """Full (N_r, N_t) numeric LoS error grid (vectorized oracle)."""
    lam = scene.wavelength
    los = scene.los
    tx_pos = np.ascontiguousarray(scene.tx.positions())
    rx_pos = np.ascontiguousarray(rx_positions(scene))
    d_exact = kernels.pairwise_distances(rx_pos, tx_pos)
    ip_t = scene.tx.integer_positions()
    ip_r = scene.rx.integer_positions()
    psi_t = (ip_t[:, 0] * math.sin(los.theta_t) * math.cos(los.phi_t)
             - ip_t[:, 1] * math.sin(los.phi_t))
    psi_r = (ip_r[:, 0] * math.sin(los.theta_r) * math.cos(los.phi_r)
             - ip_r[:, 1] * math.sin(los.phi_r))
    d_planar = los.dist - scene.tx.d * (psi_r[:, None] + psi_t[None, :])
    return np.abs(np.exp(-2j * math.pi * d_exact / lam)
                  - np.exp(-2j * math.pi * d_planar / lam))


def _axis_extent(layout: ArrayLayout) -> float:
    """sqrt((M_x+N_x)^2 + (M_z+N_z)^2): M counts distinct subarray offsets per axis."""
    mx = len({s[0] for s in layout.subarrays})
    mz = len({s[1] for s in layout.subarrays})
    return math.hypot(mx + layout.na_x, mz + layout.na_z)


def farfield_metric_layouts(tx: ArrayLayout, rx: ArrayLayout,
                            lam: float, distance: float) -> float:
    """pi d^2 L_t L_r / (lam D) for explicit layouts (d taken from them)."""
    if tx.d != rx.d:
        raise InvalidArgumentError("tx and rx layouts must share the antenna spacing")
    if not (lam > 0 and distance > 0):
        raise InvalidArgumentError("lam and distance must be > 0")
    return math.pi * tx.d ** 2 * _axis_extent(tx) * _axis_extent(rx) / (lam * distance)


def farfield_metric(scene: Scene) -> float:
    """Near-field indicator of the scene; values near 1 mean planar models fail."""
    return farfield_metric_layouts(scene.tx, scene.rx, scene.wavelength, scene.d11)


def model_mismatch_db(H_a, H_b) -> float:
    """20*log10(||H_a - H_b||_F / ||H_b||_F), floored at -300 dB."""
    A, B = _entries(H_a), _entries(H_b)
    if A.shape != B.shape:
        raise InvalidArgumentError(f"shape mismatch: {A.shape} vs {B.shape}")
    nb = np.linalg.norm(B)
    if nb == 0:
        raise InvalidArgumentError("reference matrix has zero Frobenius norm")
    ratio = np.linalg.norm(A - B) / nb
    if ratio <= 10.0 ** (DB_FLOOR / 20.0):
        return DB_FLOOR
    return float(20.0 * np.log10(ratio))


def approx_error_report(scene: Scene) -> ApproxErrorReport:
    """LoS error grid, PWM-vs-SWM Frobenius mismatch, and far-field metric."""
    grid = pairwise_error_grid(scene)
    rel = model_mismatch_db(synth_pwm(scene), synth_swm(scene))
    return ApproxErrorReport(error_grid=grid, frobenius_rel_db=rel,
                             farfield_metric=farfield_metric(scene))
