"""Hybrid-beamforming observation pipeline.

Codebooks of block-diagonal analog frames with constant-modulus entries
1/sqrt(N), identity digital parts by default, matched-filtered per-codeword
blocks, SNR-calibrated combined-domain noise, and tensorization for the
learning pipeline.

All randomness flows through numpy's default_rng (PCG64) seeded with
explicit integer sequences, so observations are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix
from .errors import InvalidArgumentError, ValidationError
from .geometry import ArrayLayout


def seed_key(seed) -> tuple[int, ...]:
    """Canonical entropy tuple for default_rng: scalars become one-element keys."""
    if np.isscalar(seed):
        return (int(seed),)
    return tuple(int(s) for s in seed)


@dataclass(frozen=True)
class Codeword:
    """Per-antenna analog phases (fractions of a turn) plus a digital matrix."""

    phases: np.ndarray          # (N,) values in [0, 1)
    digital: np.ndarray         # (K, N_s) complex

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        dg = np.asarray(self.digital, dtype=complex)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "digital", dg)
        if ph.ndim != 1 or dg.ndim != 2:
            raise InvalidArgumentError("phases must be 1-D and digital 2-D")
        if np.any(ph < 0) or np.any(ph >= 1):
            raise InvalidArgumentError("analog phases must lie in [0, 1)")
        if dg.shape[1] > dg.shape[0]:
            raise InvalidArgumentError(
                f"stream count {dg.shape[1]} exceeds subarray count {dg.shape[0]}")

    @property
    def n_streams(self) -> int:
        return self.digital.shape[1]


@dataclass(frozen=True)
class Codebook:
    codewords: tuple[Codeword, ...]
    side: str
    seed: tuple[int, ...]
    layout: ArrayLayout

    def __post_init__(self):
        object.__setattr__(self, "codewords", tuple(self.codewords))
        if len(self.codewords) < 1:
            raise InvalidArgumentError("codebook needs at least one codeword")
        if self.side not in ("tx", "rx"):
            raise InvalidArgumentError(f"side must be 'tx' or 'rx', got {self.side!r}")

    @property
    def size(self) -> int:
        return len(self.codewords)

    @property
    def n_streams(self) -> int:
        return self.codewords[0].n_streams


@dataclass(frozen=True)
class Observation:
    """Stacked beam-swept received blocks Y plus generation metadata."""

    Y: np.ndarray
    snr_db: float
    noise_seed: tuple[int, ...]
    tx_codebook: Codebook
    rx_codebook: Codebook
    noise_sigma: float
    wavelength: float

    @property
    def shape(self):
        return self.Y.shape


def random_codebook(layout: ArrayLayout, C: int, n_streams: int, seed: int,
                    side: str = "tx") -> Codebook:
    """C codewords with i.i.d. uniform [0, 1) analog phases, identity digital part."""
    K = layout.n_subarrays
    if C < 1:
        raise InvalidArgumentError("C must be >= 1")
    if not (1 <= n_streams <= K):
        raise InvalidArgumentError(
            f"n_streams must lie in [1, {K}] for a {K}-subarray layout, got {n_streams}")
    key = seed_key(seed)
    rng = np.random.default_rng(list(key))
    digital = np.eye(K, n_streams, dtype=complex)
    words = tuple(
        Codeword(phases=rng.random(layout.n_antennas), digital=digital)
        for _ in range(C)
    )
    return Codebook(codewords=words, side=side, seed=key, layout=layout)


def assemble_frame(codeword: Codeword, layout: ArrayLayout) -> np.ndarray:
    """(N, N_s) frame = block-diagonal analog matrix times digital matrix.

    Non-zero analog entries have modulus exactly 1/sqrt(N); entries outside
    the diagonal blocks are exactly zero.
    """
    N, K = layout.n_antennas, layout.n_subarrays
    if codeword.phases.shape != (N,) or codeword.digital.shape[0] != K:
        raise InvalidArgumentError(
            f"codeword dimensions do not match layout (N={N}, K={K})")
    na = layout.subarray_size
    analog = np.zeros((N, K), dtype=complex)
    scale = 1.0 / math.sqrt(N)
    for k in range(K):
        rows = slice(k * na, (k + 1) * na)
        analog[rows, k] = scale * np.exp(2j * math.pi * codeword.phases[rows])
    return analog @ codeword.digital


def _entries(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H, dtype=complex)


def observe_pair(H, F: np.ndarray, W: np.ndarray, noise_sigma: float,
                 seed=0) -> np.ndarray:
    """W^H H F plus combined noise W^H N_c, N_c i.i.d. CN(0, noise_sigma^2)."""
    Hm = _entries(H)
    if F.shape[0] != Hm.shape[1] or W.shape[0] != Hm.shape[0]:
        raise InvalidArgumentError(
            f"dimension mismatch: H {Hm.shape}, F {F.shape}, W {W.shape}")
    if noise_sigma < 0:
        raise InvalidArgumentError("noise_sigma must be >= 0")
    out = W.conj().T @ Hm @ F
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        n = (rng.standard_normal((Hm.shape[0], F.shape[1]))
             + 1j * rng.standard_normal((Hm.shape[0], F.shape[1])))
        out = out + W.conj().T @ (noise_sigma / math.sqrt(2.0) * n)
    return out


def stack_observations(H, tx_cb: Codebook, rx_cb: Codebook, snr_db: float,
                       seed: int, wavelength: float) -> Observation:
    """All C_r x C_t codeword combinations stacked into one matrix.

    Block (c_r, c_t) occupies rows [c_r*N_s, (c_r+1)*N_s) and the matching
    columns; its noise draw is seeded with [seed, c_r, c_t] so any block can
    be regenerated standalone via observe_pair.  noise_sigma is calibrated
    from snr_db against the zero-noise pass (signal power over expected
    stacked noise power); pass snr_db=inf to disable noise.
    """
    F = [assemble_frame(cw, tx_cb.layout) for cw in tx_cb.codewords]
    W = [assemble_frame(cw, rx_cb.layout) for cw in rx_cb.codewords]
    Hm = _entries(H)
    ns_t, ns_r = tx_cb.n_streams, rx_cb.n_streams
    ct, cr = tx_cb.size, rx_cb.size

    clean = np.empty((cr * ns_r, ct * ns_t), dtype=complex)
    for i, Wc in enumerate(W):
        for j, Fc in enumerate(F):
            clean[i * ns_r:(i + 1) * ns_r, j * ns_t:(j + 1) * ns_t] = \
                Wc.conj().T @ Hm @ Fc

    key = seed_key(seed)
    if snr_db is None or math.isinf(snr_db):
        return Observation(Y=clean, snr_db=math.inf, noise_seed=key,
                           tx_codebook=tx_cb, rx_codebook=rx_cb,
                           noise_sigma=0.0, wavelength=float(wavelength))

    p_signal = float(np.linalg.norm(clean) ** 2)
    if p_signal == 0:
        raise InvalidArgumentError("zero clean signal: SNR calibration undefined")
    w_power = sum(float(np.linalg.norm(Wc) ** 2) for Wc in W)
    snr_lin = 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(p_signal / (snr_lin * ns_t * ct * w_power))

    Y = np.empty_like(clean)
    for i, Wc in enumerate(W):
        for j, Fc in enumerate(F):
            Y[i * ns_r:(i + 1) * ns_r, j * ns_t:(j + 1) * ns_t] = \
                observe_pair(Hm, Fc, Wc, sigma, seed=list(key) + [i, j])
    return Observation(Y=Y, snr_db=float(snr_db), noise_seed=key,
                       tx_codebook=tx_cb, rx_codebook=rx_cb,
                       noise_sigma=sigma, wavelength=float(wavelength))


def tensorize(obs: Observation) -> np.ndarray:
    """(R, R, 3) real tensor with channels (Re[Y], Im[Y], |Y|)."""
    Y = obs.Y
    return np.stack([Y.real, Y.imag, np.abs(Y)], axis=-1)


def normalize_minmax(values, lo: float, hi: float, field: str = "value") -> np.ndarray:
    """(x - lo) / (hi - lo); out-of-range input raises instead of clipping."""
    if not (hi > lo):
        raise InvalidArgumentError(f"hi must exceed lo, got [{lo!r}, {hi!r}]")
    x = np.asarray(values, dtype=float)
    if np.any(x < lo) or np.any(x > hi):
        bad = x[(x < lo) | (x > hi)].ravel()[0]
        raise ValidationError(
            f"value {bad!r} outside normalization range [{lo!r}, {hi!r}]",
            field=field)
    return (x - lo) / (hi - lo)


def denormalize_minmax(values, lo: float, hi: float) -> np.ndarray:
    """Inverse of normalize_minmax."""
    if not (hi > lo):
        raise InvalidArgumentError(f"hi must exceed lo, got [{lo!r}, {hi!r}]")
    return np.asarray(values, dtype=float) * (hi - lo) + lo
