import math

import numpy as np
import pytest

from hspm import (
    ArrayLayout,
    GainModel,
    PathParams,
    SamplerConfig,
    Scene,
    free_space_amp,
    sample_scene,
    wrap_azimuth,
)
from hspm.geometry import C_LIGHT


def make_los_scene(f=1e10, dist=2.0, theta=0.2, phi=0.1,
                   offsets=((0, 0),), na=(2, 2), k_abs=0.0) -> Scene:
    lam = C_LIGHT / f
    d = lam / 2.0
    tx = ArrayLayout(tuple(offsets), na[0], na[1], d)
    rx = ArrayLayout(tuple(offsets), na[0], na[1], d)
    los = PathParams(1, free_space_amp(dist, lam, 1.0, k_abs), dist,
                     theta, phi, wrap_azimuth(-theta), -phi)
    return Scene(f, tx, rx, (los,), GainModel(k_abs, ()))


# the frozen two-path configuration used throughout the suite: reflection
# point at 1.5 * u_dep(-0.5, 0.15), arrival angles derived from coordinates
FROZEN_B = {
    "frequency_hz": 1e10,
    "tx": {"subarray_offsets": [[0, 0]], "na_x": 2, "na_z": 2},
    "rx": {"subarray_offsets": [[0, 0]], "na_x": 2, "na_z": 2},
    "d11_m": 2.0,
    "los": {"theta_t": 0.2, "phi_t": 0.1, "theta_r": -0.2, "phi_r": -0.1},
    "nlos": [{"theta_t": -0.5, "phi_t": 0.15,
              "theta_r": -1.0404735248866992,
              "phi_r": 0.019092168651229872,
              "refl_coeff": 0.7}],
    "gain_model": {"k_abs": 0.05},
}


@pytest.fixture
def los_scene() -> Scene:
    return make_los_scene()


@pytest.fixture
def two_path_scene() -> Scene:
    from hspm import scene_from_dict
    return scene_from_dict(FROZEN_B)


def small_sampler(n_nlos=1, f=1e10, seed_box=None) -> SamplerConfig:
    """Electrically small scenes: f in the low GHz, desk-scale distances."""
    return SamplerConfig(
        frequency=f,
        tx_offsets=((0, 0), (4, 0), (0, 4), (4, 4)),
        rx_offsets=((0, 0), (4, 0), (0, 4), (4, 4)),
        tx_na=(2, 2), rx_na=(2, 2),
        n_nlos=n_nlos,
        rx_box=seed_box or ((-1.0, 1.0), (2.0, 5.0), (-0.8, 0.8)),
    )


def random_scene(seed, n_nlos=1, f=1e10) -> Scene:
    return sample_scene(small_sampler(n_nlos=n_nlos, f=f), seed)


def max_rel(a, b) -> float:
    """max|a - b| / max|b| (scale-relative entrywise deviation)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
