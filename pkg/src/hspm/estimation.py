"""Two-phase channel estimation.

Phase 1 recovers the six reference-pair parameters per path behind a
pluggable interface (oracle / grid matched filter / OMP baseline / external
file).  Phase 2 extends them geometrically to every subarray pair: the LoS
entry via the projected-triangle relations, NLoS entries by recovering the
reflector and Newton-solving the specular system for each subarray pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import channel as _channel
from .errors import (
    ConvergenceError,
    DegenerateGeometryError,
    InvalidArgumentError,
    NoSpecularPathError,
    NumericalFailureError,
    SingularSystemError,
)
from .geometry import (
    ArrayLayout,
    Scene,
    reflector_from_reference_params,
    u_dep,
    wrap_azimuth,
)

DB_FLOOR = -300.0

_FIELDS = ("amp", "dist", "theta_t", "phi_t", "theta_r", "phi_r")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceParamsEstimate:
    """Per-path reference-pair parameter set (arrays of shape (N_p,))."""

    amp: np.ndarray
    dist: np.ndarray
    theta_t: np.ndarray
    phi_t: np.ndarray
    theta_r: np.ndarray
    phi_r: np.ndarray
    provenance: str = "oracle"

    def __post_init__(self):
        for name in _FIELDS:
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        n = self.amp.shape[0]
        if n < 1:
            raise InvalidArgumentError("estimate needs at least one path")
        for name in _FIELDS:
            if getattr(self, name).shape != (n,):
                raise InvalidArgumentError(f"field {name} has inconsistent length")
        if np.any(self.amp <= 0):
            raise InvalidArgumentError("amplitudes must be > 0")
        if np.any(self.dist <= 0):
            raise InvalidArgumentError("distances must be > 0")
        for name in ("theta_t", "theta_r"):
            a = getattr(self, name)
            if np.any((a <= -math.pi) | (a > math.pi)):
                raise InvalidArgumentError(f"{name} must lie in (-pi, pi]")
        for name in ("phi_t", "phi_r"):
            a = getattr(self, name)
            if np.any((a <= -math.pi / 2) | (a >= math.pi / 2)):
                raise InvalidArgumentError(f"{name} must lie in (-pi/2, pi/2)")
        if self.provenance not in ("oracle", "grid", "omp", "external"):
            raise InvalidArgumentError(f"unknown provenance {self.provenance!r}")

    @property
    def n_paths(self) -> int:
        return self.amp.shape[0]


@dataclass(frozen=True)
class ExtendedParams:
    """Per-(k_t, k_r, p) extension output; arrays of shape (K_t, K_r, N_p).

    refl_point carries the solved reflection point for NLoS paths (NaN on
    the LoS slice); newton_iters records iterations-to-tolerance per solve.
    """

    theta_t: np.ndarray
    phi_t: np.ndarray
    theta_r: np.ndarray
    phi_r: np.ndarray
    dist: np.ndarray
    refl_point: np.ndarray
    newton_iters: np.ndarray

    @property
    def shape(self):
        return self.theta_t.shape


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    fd_step: float = 1e-7
    max_halvings: int = 10
    cond_limit: float = 1e12


@dataclass(frozen=True)
class LosExtension:
    theta_t: float
    phi_t: float
    theta_r: float
    phi_r: float
    dist: float


@dataclass(frozen=True)
class NlosExtension:
    theta_t: float
    phi_t: float
    theta_r: float
    phi_r: float
    dist: float
    refl_point: np.ndarray
    newton_iters: int = 0


def reference_truth(scene: Scene) -> ReferenceParamsEstimate:
    """Exact reference parameters straight from the scene."""
    return ReferenceParamsEstimate(
        amp=np.array([p.amp for p in scene.paths]),
        dist=np.array([p.dist for p in scene.paths]),
        theta_t=np.array([p.theta_t for p in scene.paths]),
        phi_t=np.array([p.phi_t for p in scene.paths]),
        theta_r=np.array([p.theta_r for p in scene.paths]),
        phi_r=np.array([p.phi_r for p in scene.paths]),
        provenance="oracle",
    )


# ---------------------------------------------------------------------------
# phase 1
# ---------------------------------------------------------------------------

def phase1_oracle(scene: Scene, perturb=None, seed=0) -> ReferenceParamsEstimate:
    """Ground truth plus independent Gaussian perturbations per field.

    perturb maps field name (amp, dist, theta_t, phi_t, theta_r, phi_r) to a
    std-dev; missing fields default to 0 and zero perturbation returns the
    exact truth bit-for-bit.
    """
    perturb = dict(perturb or {})
    unknown = set(perturb) - set(_FIELDS)
    if unknown:
        raise InvalidArgumentError(f"unknown perturb fields: {sorted(unknown)}")
    if any(v < 0 for v in perturb.values()):
        raise InvalidArgumentError("perturbation std-devs must be >= 0")
    truth = reference_truth(scene)
    values = {name: getattr(truth, name).copy() for name in _FIELDS}
    from .signal import seed_key
    rng = np.random.default_rng(list(seed_key(seed)))
    n = truth.n_paths
    touched = []
    for name in _FIELDS:  # fixed field order for reproducibility
        sigma = float(perturb.get(name, 0.0))
        if sigma > 0:
            values[name] = values[name] + rng.normal(0.0, sigma, n)
            touched.append(name)
    # re-validate only what was perturbed; zero perturbation stays bit-exact
    eps = 1e-12
    half = math.pi / 2 - 1e-9
    for name in touched:
        if name in ("amp", "dist"):
            values[name] = np.abs(values[name]) + eps
        elif name in ("theta_t", "theta_r"):
            values[name] = wrap_azimuth(values[name])
        else:
            values[name] = np.clip(values[name], -half, half)
    return ReferenceParamsEstimate(**values, provenance="oracle")


def _stacked_frames(cb, assemble):
    return np.hstack([assemble(cw, cb.layout) for cw in cb.codewords])


def _angle_grid_responses(layout: ArrayLayout, lam: float, az, el):
    """(N, G) matrix of steering vectors over the az x el grid (az-major)."""
    cols = []
    for a in az:
        for e in el:
            cols.append(_channel.array_response(layout, a, e, lam))
    return np.stack(cols, axis=1)


def phase1_grid(obs, tx_cb, rx_cb, grid: int, n_paths: int,
                az_range=(-math.pi / 2, math.pi / 2),
                el_range=(-math.pi / 4, math.pi / 4)) -> ReferenceParamsEstimate:
    """Successive matched-filter extraction on a 4-angle dictionary.

    Per path: pick the (theta_r, phi_r, theta_t, phi_t) grid tuple with the
    largest normalized correlation against the residual, least-squares the
    complex gain, subtract, and invert the free-space amplitude model for
    the distance.
    """
    from .signal import assemble_frame

    if grid < 2:
        raise InvalidArgumentError("grid must be >= 2 points per angle")
    if n_paths < 1:
        raise InvalidArgumentError("n_paths must be >= 1")
    lam = obs.wavelength
    Fbar = _stacked_frames(tx_cb, assemble_frame)   # (N_t, Ns*C)
    Wbar = _stacked_frames(rx_cb, assemble_frame)   # (N_r, Ns*C)
    if obs.Y.shape != (Wbar.shape[1], Fbar.shape[1]):
        raise InvalidArgumentError(
            f"observation shape {obs.Y.shape} does not match codebooks "
            f"({Wbar.shape[1]}, {Fbar.shape[1]})")
    az = np.linspace(az_range[0], az_range[1], grid)
    el = np.linspace(el_range[0], el_range[1], grid)
    A_t = _angle_grid_responses(tx_cb.layout, lam, az, el)
    A_r = _angle_grid_responses(rx_cb.layout, lam, az, el)
    V = Fbar.T @ A_t           # (M_t, G)
    U = Wbar.conj().T @ A_r    # (M_r, G)
    un = np.linalg.norm(U, axis=0)
    vn = np.linalg.norm(V, axis=0)
    if np.any(un == 0) or np.any(vn == 0):
        raise NumericalFailureError("codebook projects a dictionary atom to zero")

    R = obs.Y.copy()
    est = {name: [] for name in _FIELDS}
    taken: list[tuple[int, int]] = []
    for _ in range(n_paths):
        corr = U.conj().T @ R @ V.conj()            # (G_r, G_t)
        score = np.abs(corr) / np.outer(un, vn)
        for pair in taken:                          # no re-selection
            score[pair] = -1.0
        gr, gt = np.unravel_index(int(np.argmax(score)), score.shape)
        taken.append((gr, gt))
        u, v = U[:, gr], V[:, gt]
        c = (u.conj() @ R @ v.conj()) / (un[gr] ** 2 * vn[gt] ** 2)
        R = R - c * np.outer(u, v)
        amp = float(abs(c))
        if amp <= 0:
            raise NumericalFailureError("estimated path gain collapsed to zero")
        est["amp"].append(min(amp, 1.0))
        est["dist"].append(lam / (4.0 * math.pi * min(amp, 1.0)))
        est["theta_r"].append(az[gr // grid])
        est["phi_r"].append(el[gr % grid])
        est["theta_t"].append(az[gt // grid])
        est["phi_t"].append(el[gt % grid])
    return ReferenceParamsEstimate(
        **{k: np.array(v) for k, v in est.items()}, provenance="grid")


def omp_estimate(obs, tx_cb, rx_cb, dict_size: int, n_paths: int,
                 az_range=(-math.pi / 2, math.pi / 2), return_info: bool = False):
    """Orthogonal matching pursuit over beam-projected planar outer products.

    The dictionary spans a dict_size x dict_size azimuth grid (elevations 0);
    returns the reconstructed channel directly rather than parameters.
    """
    from .signal import assemble_frame

    if dict_size < 2:
        raise InvalidArgumentError("dict_size must be >= 2")
    if n_paths < 1:
        raise InvalidArgumentError("n_paths must be >= 1")
    lam = obs.wavelength
    Fbar = _stacked_frames(tx_cb, assemble_frame)
    Wbar = _stacked_frames(rx_cb, assemble_frame)
    if obs.Y.shape != (Wbar.shape[1], Fbar.shape[1]):
        raise InvalidArgumentError("observation does not match the codebooks")
    az = np.linspace(az_range[0], az_range[1], dict_size)
    A_t = np.stack([_channel.array_response(tx_cb.layout, a, 0.0, lam) for a in az], axis=1)
    A_r = np.stack([_channel.array_response(rx_cb.layout, a, 0.0, lam) for a in az], axis=1)
    U = Wbar.conj().T @ A_r    # (M_r, G)
    V = Fbar.T @ A_t           # (M_t, G)
    # atom(i, j) = vec(outer(U[:, i], V[:, j])) over the (G_r, G_t) grid
    D = np.einsum("ri,tj->rtij", U, V).reshape(U.shape[0] * V.shape[0], -1)
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise NumericalFailureError("zero-norm dictionary atom")
    D = D / norms
    y = obs.Y.reshape(-1)
    resid = y.copy()
    selected: list[int] = []
    resid_norms = [float(np.linalg.norm(resid))]
    coef = np.zeros(0, dtype=complex)
    for _ in range(n_paths):
        scores = np.abs(D.conj().T @ resid)
        scores[selected] = -1.0  # no re-selection
        selected.append(int(np.argmax(scores)))
        Dm = D[:, selected]
        try:
            coef, *_ = np.linalg.lstsq(Dm, y, rcond=None)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"singular least-squares update: {exc}") from exc
        resid = y - Dm @ coef
        resid_norms.append(float(np.linalg.norm(resid)))
    H_est = np.zeros((Wbar.shape[0], Fbar.shape[0]), dtype=complex)
    g_r = dict_size
    for x, idx in zip(coef, selected):
        i, j = idx // g_r, idx % g_r
        H_est += (x / norms[idx]) * np.outer(A_r[:, i], A_t[:, j])
    cm = _channel.ChannelMatrix(H_est, "pwm", "")
    if return_info:
        return cm, {"residual_norms": resid_norms, "selected": selected}
    return cm


# ---------------------------------------------------------------------------
# phase 2: LoS extension
# ---------------------------------------------------------------------------

def _los_vector(ref: ReferenceParamsEstimate, delta_dx, delta_dz):
    r1 = ref.dist[0] * u_dep(ref.theta_t[0], ref.phi_t[0])
    vx = r1[0] - np.asarray(delta_dx, dtype=float)
    vy = np.broadcast_to(r1[1], np.shape(vx)).astype(float)
    vz = r1[2] - np.asarray(delta_dz, dtype=float)
    return vx, vy, vz


def extend_los(ref: ReferenceParamsEstimate, delta_dx: float, delta_dz: float) -> LosExtension:
    """LoS angles/distance for a subarray pair displaced by (delta_dx, delta_dz).

    delta_dx = d_tx - d_rx and delta_dz = d_rz - d_tz are the x/z offset
    differences of the two subarray reference antennas in meters (the z axis
    of antenna offsets points down).  Zero displacement returns the
    reference parameters exactly.
    """
    if delta_dx == 0.0 and delta_dz == 0.0:
        return LosExtension(float(ref.theta_t[0]), float(ref.phi_t[0]),
                            float(ref.theta_r[0]), float(ref.phi_r[0]),
                            float(ref.dist[0]))
    vx, vy, vz = _los_vector(ref, delta_dx, delta_dz)
    d_xy = math.hypot(vx, vy)
    d_yz = math.hypot(vy, vz)
    if d_xy < 1e-12:
        raise DegenerateGeometryError(
            "subarray pair is vertically aligned", denominator="D_xy")
    dist = math.hypot(d_xy, vz)
    dist_alt = math.hypot(d_yz, vx)  # second projection route
    if abs(dist - dist_alt) > 1e-9 * max(dist, 1.0):
        raise NumericalFailureError(
            f"projection routes disagree: {dist!r} vs {dist_alt!r}")
    theta_t = math.atan2(vx, vy)
    phi_t = math.atan2(vz, d_xy)
    dth = theta_t - float(ref.theta_t[0])
    dph = phi_t - float(ref.phi_t[0])
    theta_r = wrap_azimuth(float(ref.theta_r[0]) - dth)
    phi_r = float(ref.phi_r[0]) - dph
    if not (-math.pi / 2 < phi_r < math.pi / 2):
        raise DegenerateGeometryError(
            "extended arrival elevation left (-pi/2, pi/2)", denominator="phi_r")
    return LosExtension(theta_t, phi_t, theta_r, phi_r, dist)


def _extend_los_batch(ref: ReferenceParamsEstimate, delta_dx, delta_dz):
    """Vectorized extend_los over displacement grids (same formulas)."""
    vx, vy, vz = _los_vector(ref, delta_dx, delta_dz)
    d_xy = np.hypot(vx, vy)
    if np.any(d_xy < 1e-12):
        raise DegenerateGeometryError(
            "subarray pair is vertically aligned", denominator="D_xy")
    dist = np.hypot(d_xy, vz)
    dist_alt = np.hypot(np.hypot(vy, vz), vx)
    if np.any(np.abs(dist - dist_alt) > 1e-9 * np.maximum(dist, 1.0)):
        raise NumericalFailureError("projection routes disagree")
    theta_t = np.arctan2(vx, vy)
    phi_t = np.arctan2(vz, d_xy)
    theta_r = wrap_azimuth(ref.theta_r[0] - (theta_t - ref.theta_t[0]))
    phi_r = ref.phi_r[0] - (phi_t - ref.phi_t[0])
    return theta_t, phi_t, theta_r, phi_r, dist


# ---------------------------------------------------------------------------
# phase 2: NLoS extension (specular system + Newton)
# ---------------------------------------------------------------------------

def newton_solve(residual_fn, jacobian, init, tol: float = 1e-10,
                 max_iter: int = 50, full_output: bool = False,
                 cfg: NewtonConfig | None = None):
    """Damped Newton iteration for a 3-vector root problem.

    jacobian=None falls back to central finite differences with step
    1e-7*(1+|x|).  The iteration keeps polishing while the residual improves
    (monotone descent with up to 10 step halvings); it fails if the residual
    never reaches tol within max_iter.
    """
    cfg = cfg or NewtonConfig(tol=tol, max_iter=max_iter)
    x = np.asarray(init, dtype=float).copy()
    if x.shape != (3,):
        raise InvalidArgumentError(f"init must be a 3-vector, got shape {x.shape}")

    def jac(xv):
        if jacobian is not None:
            return np.asarray(jacobian(xv), dtype=float)
        J = np.empty((3, 3))
        for j in range(3):
            h = cfg.fd_step * (1.0 + abs(xv[j]))
            xp, xm = xv.copy(), xv.copy()
            xp[j] += h
            xm[j] -= h
            J[:, j] = (np.asarray(residual_fn(xp)) - np.asarray(residual_fn(xm))) / (2 * h)
        return J

    f = np.asarray(residual_fn(x), dtype=float)
    fn = float(np.linalg.norm(f))
    first_hit = 0 if fn <= cfg.tol else -1
    iters = 0
    for it in range(1, cfg.max_iter + 1):
        J = jac(x)
        if not np.isfinite(J).all():
            raise NumericalFailureError("non-finite Jacobian")
        if np.linalg.cond(J) > cfg.cond_limit:
            raise SingularSystemError(
                f"Jacobian condition estimate exceeds {cfg.cond_limit:.1e}")
        step = np.linalg.solve(J, f)
        improved = False
        scale = 1.0
        for _ in range(cfg.max_halvings + 1):
            x_new = x - scale * step
            f_new = np.asarray(residual_fn(x_new), dtype=float)
            fn_new = float(np.linalg.norm(f_new))
            if fn_new < fn:
                x, f, fn = x_new, f_new, fn_new
                improved = True
                break
            scale *= 0.5
        if not improved:
            break  # at the numeric floor
        iters = it
        if first_hit < 0 and fn <= cfg.tol:
            first_hit = it
        if fn == 0.0:
            break
    if first_hit < 0:
        raise ConvergenceError("Newton iteration did not reach tolerance",
                               residual=fn, iterations=iters)
    if full_output:
        return x, {"iterations": first_hit, "total_iterations": iters, "residual": fn}
    return x


def _reflection_system(plane, t, r):
    """Residual and analytic Jacobian of the specular system for point S.

    f1: equal direction cosines of S->T and S->R against the plane normal.
    f2: plane membership of S (normalized).
    f3: coplanarity of S with T, R and the normal (normalized triple product).
    """
    n = plane.normal()
    nn = np.linalg.norm(n)
    nhat = n / nn
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    m = np.cross(r - t, nhat)
    d0 = plane.d0

    def residual(s):
        vt = t - s
        vr = r - s
        lt = np.linalg.norm(vt)
        lr = np.linalg.norm(vr)
        if lt < 1e-15 or lr < 1e-15:
            raise DegenerateGeometryError(
                "iterate coincides with an endpoint", denominator="|S-T| or |S-R|")
        f1 = (nhat @ vt) / lt - (nhat @ vr) / lr
        f2 = (n @ s + d0) / nn
        f3 = ((s - t) @ m) / (lt * np.linalg.norm(r - t))
        return np.array([f1, f2, f3])

    def jacobian(s):
        vt = t - s
        vr = r - s
        lt = np.linalg.norm(vt)
        lr = np.linalg.norm(vr)
        ut = vt / lt
        ur = vr / lr
        df1 = (-nhat + (nhat @ ut) * ut) / lt - (-nhat + (nhat @ ur) * ur) / lr
        df2 = nhat
        lrt = np.linalg.norm(r - t)
        st = s - t
        df3 = m / (lt * lrt) + (st @ m) * ut / (lt ** 2 * lrt)
        return np.stack([df1, df2, df3])

    return residual, jacobian


def extend_nlos(ref: ReferenceParamsEstimate, p: int,
                d_tx: float = 0.0, d_tz: float = 0.0,
                d_rx: float = 0.0, d_rz: float = 0.0,
                newton_cfg: NewtonConfig | None = None) -> NlosExtension:
    """NLoS angles/distance for subarray reference offsets (meters).

    p is the 1-based path index (p > 1).  Recovers the reflector from the
    reference estimate, Newton-solves the specular system for the pair's
    reflection point (initialized at the reference reflection point), and
    derives angles plus the two-segment distance.
    """
    if not (2 <= p <= ref.n_paths):
        raise InvalidArgumentError(f"p must be an NLoS index in [2, {ref.n_paths}], got {p}")
    cfg = newton_cfg or NewtonConfig()
    j = p - 1
    if d_tx == 0.0 and d_tz == 0.0 and d_rx == 0.0 and d_rz == 0.0:
        s11, _, _ = _recover_reflector(ref, p)
        return NlosExtension(float(ref.theta_t[j]), float(ref.phi_t[j]),
                             float(ref.theta_r[j]), float(ref.phi_r[j]),
                             float(ref.dist[j]), s11, newton_iters=0)
    s11, plane, _ = _recover_reflector(ref, p)
    r1 = ref.dist[0] * u_dep(ref.theta_t[0], ref.phi_t[0])
    t_k = np.array([d_tx, 0.0, -d_tz])
    r_k = r1 + np.array([d_rx, 0.0, -d_rz])
    st = float(plane.signed_distance(t_k))
    sr = float(plane.signed_distance(r_k))
    if st == 0.0 or sr == 0.0 or (st > 0) != (sr > 0):
        raise NoSpecularPathError(
            f"subarray pair straddles the reflector of path {p}")
    residual, jacobian = _reflection_system(plane, t_k, r_k)
    s, info = newton_solve(residual, jacobian, s11, tol=cfg.tol,
                           max_iter=cfg.max_iter, full_output=True, cfg=cfg)
    return _nlos_from_point(s, t_k, r_k, info["iterations"])


def _recover_reflector(ref: ReferenceParamsEstimate, p: int):
    j = p - 1
    return reflector_from_reference_params(
        float(ref.dist[0]), float(ref.theta_t[0]), float(ref.phi_t[0]),
        float(ref.theta_r[0]),
        float(ref.theta_t[j]), float(ref.phi_t[j]), float(ref.theta_r[j]))


def _nlos_from_point(s, t_k, r_k, iters) -> NlosExtension:
    at = s - t_k
    ar = s - r_k
    lt = float(np.linalg.norm(at))
    lr = float(np.linalg.norm(ar))
    if lt < 1e-15 or lr < 1e-15:
        raise DegenerateGeometryError(
            "reflection point coincides with a subarray", denominator="|S-T| or |S-R|")
    theta_t = math.atan2(at[0], at[1])
    phi_t = math.asin(max(-1.0, min(1.0, at[2] / lt)))
    theta_r = math.atan2(ar[0], -ar[1])
    phi_r = math.asin(max(-1.0, min(1.0, ar[2] / lr)))
    return NlosExtension(theta_t, phi_t, theta_r, phi_r, lt + lr,
                         np.asarray(s, dtype=float), newton_iters=int(iters))


def _extend_nlos_batch(ref: ReferenceParamsEstimate, p: int, t_k: np.ndarray,
                       r_k: np.ndarray, cfg: NewtonConfig):
    """Vectorized Newton over B subarray pairs for path p.

    t_k, r_k: (B, 3) subarray reference coordinates.  Falls back to the
    scalar solver for any element that misses the tolerance.  Returns
    (S (B,3), iters (B,)).
    """
    s11, plane, _ = _recover_reflector(ref, p)
    n = plane.normal()
    nn = np.linalg.norm(n)
    nhat = n / nn
    st = (t_k @ n + plane.d0) / nn
    sr = (r_k @ n + plane.d0) / nn
    if np.any(st == 0) or np.any(sr == 0) or np.any((st > 0) != (sr > 0)):
        raise NoSpecularPathError(f"a subarray pair straddles the reflector of path {p}")
    m = np.cross(r_k - t_k, nhat)
    lrt = np.linalg.norm(r_k - t_k, axis=1)

    B = t_k.shape[0]
    s = np.broadcast_to(s11, (B, 3)).copy()

    def residual(sv):
        vt = t_k - sv
        vr = r_k - sv
        lt = np.linalg.norm(vt, axis=1)
        lr = np.linalg.norm(vr, axis=1)
        f1 = (vt @ nhat) / lt - (vr @ nhat) / lr
        f2 = (sv @ n + plane.d0) / nn
        f3 = np.einsum("bk,bk->b", sv - t_k, m) / (lt * lrt)
        return np.stack([f1, f2, f3], axis=1), lt, lr, vt, vr

    f, lt, lr, vt, vr = residual(s)
    fn = np.linalg.norm(f, axis=1)
    iters = np.zeros(B, dtype=int)
    done_at = np.where(fn <= cfg.tol, 0, -1)
    for it in range(1, cfg.max_iter + 1):
        if not (fn > 0.0).any():
            break
        ut = vt / lt[:, None]
        ur = vr / lr[:, None]
        ctn = ut @ nhat
        crn = ur @ nhat
        df1 = (-nhat[None, :] + ctn[:, None] * ut) / lt[:, None] \
            - (-nhat[None, :] + crn[:, None] * ur) / lr[:, None]
        df2 = np.broadcast_to(nhat, (B, 3))
        sm = np.einsum("bk,bk->b", s - t_k, m)
        df3 = m / (lt * lrt)[:, None] + sm[:, None] * ut / (lt ** 2 * lrt)[:, None]
        J = np.stack([df1, df2, df3], axis=1)  # (B, 3, 3)
        try:
            step = np.linalg.solve(J, f[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            break  # defer to the scalar fallback below
        s_new = s - step
        f_new, lt_n, lr_n, vt_n, vr_n = residual(s_new)
        fn_new = np.linalg.norm(f_new, axis=1)
        better = fn_new < fn
        if not better.any():
            break
        upd = better
        s[upd] = s_new[upd]
        f[upd] = f_new[upd]
        fn[upd] = fn_new[upd]
        lt[upd], lr[upd] = lt_n[upd], lr_n[upd]
        vt[upd], vr[upd] = vt_n[upd], vr_n[upd]
        newly = (done_at < 0) & (fn <= cfg.tol)
        done_at[newly] = it
    missed = done_at < 0
    for b in np.flatnonzero(missed):  # scalar fallback with full safeguards
        res_b, jac_b = _reflection_system(plane, t_k[b], r_k[b])
        s_b, info = newton_solve(res_b, jac_b, s11, tol=cfg.tol,
                                 max_iter=cfg.max_iter, full_output=True, cfg=cfg)
        s[b] = s_b
        done_at[b] = info["iterations"]
    return s, done_at


def extend_reference(ref: ReferenceParamsEstimate, tx_layout: ArrayLayout,
                     rx_layout: ArrayLayout,
                     newton_cfg: NewtonConfig | None = None) -> ExtendedParams:
    """Extend reference parameters to every (k_t, k_r, p) tuple.

    The (0, 0, p) entries are the inputs, bit-for-bit.
    """
    cfg = newton_cfg or NewtonConfig()
    kt, kr, n_p = tx_layout.n_subarrays, rx_layout.n_subarrays, ref.n_paths
    offs_t = tx_layout.offsets() * tx_layout.d   # (K_t, 2) in meters
    offs_r = rx_layout.offsets() * rx_layout.d
    ddx = offs_t[:, None, 0] - offs_r[None, :, 0]          # d_tx - d_rx
    ddz = offs_r[None, :, 1] - offs_t[:, None, 1]          # d_rz - d_tz

    shape = (kt, kr, n_p)
    theta_t = np.empty(shape)
    phi_t = np.empty(shape)
    theta_r = np.empty(shape)
    phi_r = np.empty(shape)
    dist = np.empty(shape)
    refl = np.full(shape + (3,), np.nan)
    iters = np.zeros(shape, dtype=int)

    th_t, ph_t, th_r, ph_r, dd = _extend_los_batch(ref, ddx, ddz)
    theta_t[:, :, 0], phi_t[:, :, 0] = th_t, ph_t
    theta_r[:, :, 0], phi_r[:, :, 0] = th_r, ph_r
    dist[:, :, 0] = dd

    if n_p > 1:
        r1 = ref.dist[0] * u_dep(ref.theta_t[0], ref.phi_t[0])
        t_k = np.zeros((kt, kr, 3))
        t_k[:, :, 0] = offs_t[:, None, 0]
        t_k[:, :, 2] = -offs_t[:, None, 1]
        r_k = np.zeros((kt, kr, 3))
        r_k[:, :, 0] = r1[0] + offs_r[None, :, 0]
        r_k[:, :, 1] = r1[1]
        r_k[:, :, 2] = r1[2] - offs_r[None, :, 1]
        t_flat = np.ascontiguousarray(t_k.reshape(-1, 3))
        r_flat = np.ascontiguousarray(r_k.reshape(-1, 3))
        for p in range(2, n_p + 1):
            j = p - 1
            s, it = _extend_nlos_batch(ref, p, t_flat, r_flat, cfg)
            s = s.reshape(kt, kr, 3)
            at = s - t_k
            ar = s - r_k
            lt = np.linalg.norm(at, axis=2)
            lr = np.linalg.norm(ar, axis=2)
            theta_t[:, :, j] = np.arctan2(at[:, :, 0], at[:, :, 1])
            phi_t[:, :, j] = np.arcsin(np.clip(at[:, :, 2] / lt, -1.0, 1.0))
            theta_r[:, :, j] = np.arctan2(ar[:, :, 0], -ar[:, :, 1])
            phi_r[:, :, j] = np.arcsin(np.clip(ar[:, :, 2] / lr, -1.0, 1.0))
            dist[:, :, j] = lt + lr
            refl[:, :, j, :] = s
            iters[:, :, j] = it.reshape(kt, kr)

    # the reference pair is the inputs, exactly
    theta_t[0, 0, :] = ref.theta_t
    phi_t[0, 0, :] = ref.phi_t
    theta_r[0, 0, :] = ref.theta_r
    phi_r[0, 0, :] = ref.phi_r
    dist[0, 0, :] = ref.dist
    return ExtendedParams(theta_t=theta_t, phi_t=phi_t, theta_r=theta_r,
                          phi_r=phi_r, dist=dist, refl_point=refl,
                          newton_iters=iters)


# ---------------------------------------------------------------------------
# reconstruction and metrics
# ---------------------------------------------------------------------------

def reconstruct_hspm(ext: ExtendedParams, amps, tx_layout: ArrayLayout,
                     rx_layout: ArrayLayout, lam: float,
                     scene_hash: str = "") -> _channel.ChannelMatrix:
    """Assemble the hybrid channel from extended parameters and shared amplitudes."""
    amps = np.atleast_1d(np.asarray(amps, dtype=float))
    if ext.shape[2] != amps.shape[0]:
        raise InvalidArgumentError(
            f"got {amps.shape[0]} amplitudes for {ext.shape[2]} paths")
    H = _channel.assemble_hspm(ext.theta_t, ext.phi_t, ext.theta_r, ext.phi_r,
                               ext.dist, amps, tx_layout, rx_layout, lam)
    return _channel.ChannelMatrix(H, "hspm", scene_hash)


def two_phase_from_reference(ref: ReferenceParamsEstimate, scene: Scene,
                             newton_cfg: NewtonConfig | None = None):
    """Phase-2 extension + reconstruction for a Phase-1 estimate on a scene."""
    ext = extend_reference(ref, scene.tx, scene.rx, newton_cfg)
    H = reconstruct_hspm(ext, ref.amp, scene.tx, scene.rx, scene.wavelength,
                         scene.fingerprint())
    return H, ext


def nmse_db(H_hat, H) -> float:
    """20*log10(||H_hat - H||_F / ||H||_F), floored at -300 dB."""
    return _channel.model_mismatch_db(H_hat, H)


def _wrapped_diff(a, b):
    return wrap_azimuth(np.asarray(a) - np.asarray(b))


def param_errors(est: ReferenceParamsEstimate, truth: ReferenceParamsEstimate):
    """Normalized per-field-group errors in dB: (angle_db, dist_db, gain_db).

    Paths are matched by the assignment minimizing total absolute angle
    error; the angle vector stacks [theta_r, phi_r, theta_t, phi_t] over
    paths.
    """
    if est.n_paths != truth.n_paths:
        raise InvalidArgumentError(
            f"path count mismatch: {est.n_paths} vs {truth.n_paths}")
    n = truth.n_paths
    cost = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            cost[i, j] = (abs(_wrapped_diff(est.theta_r[i], truth.theta_r[j]))
                          + abs(est.phi_r[i] - truth.phi_r[j])
                          + abs(_wrapped_diff(est.theta_t[i], truth.theta_t[j]))
                          + abs(est.phi_t[i] - truth.phi_t[j]))
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(n, dtype=int)
    order[cols] = rows      # order[j] = estimated path matched to truth j

    ang_truth = np.stack([truth.theta_r, truth.phi_r, truth.theta_t, truth.phi_t],
                         axis=1).ravel()
    diff = np.concatenate([
        _wrapped_diff(est.theta_r[order], truth.theta_r),
        est.phi_r[order] - truth.phi_r,
        _wrapped_diff(est.theta_t[order], truth.theta_t),
        est.phi_t[order] - truth.phi_t,
    ])

    def _db(err_norm, ref_norm):
        if ref_norm == 0:
            raise InvalidArgumentError("reference parameter vector has zero norm")
        ratio = err_norm / ref_norm
        if ratio <= 10.0 ** (DB_FLOOR / 20.0):
            return DB_FLOOR
        return float(20.0 * np.log10(ratio))

    angle_db = _db(np.linalg.norm(diff), np.linalg.norm(ang_truth))
    dist_db = _db(np.linalg.norm(est.dist[order] - truth.dist),
                  np.linalg.norm(truth.dist))
    gain_db = _db(np.linalg.norm(est.amp[order] - truth.amp),
                  np.linalg.norm(truth.amp))
    return angle_db, dist_db, gain_db
