import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hspm import (
    ArrayLayout,
    DegenerateGeometryError,
    GainModel,
    InvalidArgumentError,
    NoSpecularPathError,
    PathParams,
    ReflectorPlane,
    Scene,
    ValidationError,
    antenna_position,
    arr_angles,
    dep_angles,
    free_space_amp,
    mirror_reflection_point,
    reflector_from_reference_params,
    reflector_from_reference_path,
    specular_residual,
    u_dep,
    wrap_azimuth,
)
from hspm.geometry import C_LIGHT, plane_from_point_normal, rx_positions

from conftest import make_los_scene

AZ = st.floats(-10.0, 10.0)
EL = st.floats(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6)


# ---------------------------------------------------------------------------
# angle helpers
# ---------------------------------------------------------------------------

@given(AZ)
def test_wrap_azimuth_range(a):
    w = wrap_azimuth(a)
    assert -math.pi < w <= math.pi


@given(st.floats(-math.pi + 1e-9, math.pi))
def test_wrap_azimuth_identity_in_range(a):
    assert wrap_azimuth(a) == pytest.approx(a, abs=1e-12)


@given(AZ, st.integers(-3, 3))
def test_wrap_azimuth_periodic(a, k):
    assert wrap_azimuth(a + 2 * math.pi * k) == pytest.approx(
        wrap_azimuth(a), abs=1e-9)


def test_wrap_azimuth_array():
    out = wrap_azimuth(np.array([0.0, math.pi, -math.pi, 3 * math.pi]))
    assert out.tolist() == [0.0, math.pi, math.pi, math.pi]


@given(st.floats(-math.pi + 1e-6, math.pi - 1e-6), EL)
def test_departure_angle_roundtrip(theta, phi):
    v = u_dep(theta, phi)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    th2, ph2 = dep_angles(3.7 * v)
    assert th2 == pytest.approx(theta, abs=1e-8)
    assert ph2 == pytest.approx(phi, abs=1e-8)


@given(st.floats(-math.pi + 1e-6, math.pi - 1e-6), EL)
def test_arrival_angle_roundtrip(theta, phi):
    # arrival frame looks along -y: invert the stated angles explicitly
    v = np.array([math.sin(theta) * math.cos(phi),
                  -math.cos(theta) * math.cos(phi),
                  math.sin(phi)])
    th2, ph2 = arr_angles(v)
    assert th2 == pytest.approx(theta, abs=1e-8)
    assert ph2 == pytest.approx(phi, abs=1e-8)


def test_los_arrival_mirrors_departure():
    v = u_dep(0.37, -0.21)
    th, ph = arr_angles(-np.asarray(v))   # seen from Rx, source direction
    assert th == pytest.approx(-0.37, abs=1e-12)
    assert ph == pytest.approx(0.21, abs=1e-12)


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------

def test_layout_counts_and_canonical_order():
    lay = ArrayLayout(((0, 0), (4, 0)), 2, 3, 0.01)
    assert lay.n_subarrays == 2
    assert lay.subarray_size == 6
    assert lay.n_antennas == 12
    ip = lay.integer_positions()
    # index = k*(na_x*na_z) + n_x*na_z + n_z
    assert ip[0].tolist() == [0, 0]
    assert ip[1].tolist() == [0, 1]
    assert ip[3].tolist() == [1, 0]
    assert ip[6].tolist() == [4, 0]
    pos = lay.positions()
    assert pos[6].tolist() == [0.04, 0.0, 0.0]
    assert pos[1].tolist() == [0.0, 0.0, -0.01]


def test_layout_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        ArrayLayout((), 2, 2, 0.01)
    with pytest.raises(InvalidArgumentError):
        ArrayLayout(((0, 0),), 0, 2, 0.01)
    with pytest.raises(InvalidArgumentError):
        ArrayLayout(((0, 0),), 2, 2, -1.0)
    with pytest.raises(InvalidArgumentError):
        ArrayLayout(((0, 0), (0, 0)), 2, 2, 0.01)   # duplicate offset


def test_antenna_position_matches_positions_table():
    lay = ArrayLayout(((0, 0), (4, 0)), 2, 3, 0.01)
    pos = lay.positions()
    assert np.allclose(antenna_position(lay, 1, 1, 2), pos[1 * 6 + 1 * 3 + 2])
    with pytest.raises(InvalidArgumentError):
        antenna_position(lay, 2, 0, 0)
    with pytest.raises(InvalidArgumentError):
        antenna_position(lay, 0, 0, 3)


# ---------------------------------------------------------------------------
# scene validation
# ---------------------------------------------------------------------------

def test_path_params_validation():
    with pytest.raises(InvalidArgumentError):
        PathParams(1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)      # amp must be > 0
    with pytest.raises(InvalidArgumentError):
        PathParams(1, 0.5, -1.0, 0.0, 0.0, 0.0, 0.0)     # dist must be > 0
    with pytest.raises(InvalidArgumentError):
        PathParams(1, 0.5, 1.0, 4.0, 0.0, 0.0, 0.0)      # azimuth out of range
    with pytest.raises(InvalidArgumentError):
        PathParams(1, 0.5, 1.0, 0.0, 1.6, 0.0, 0.0)      # elevation out of range


def test_scene_enforces_half_wavelength_spacing():
    f = 1e10
    lam = C_LIGHT / f
    tx = ArrayLayout(((0, 0),), 2, 2, lam / 2)
    rx_bad = ArrayLayout(((0, 0),), 2, 2, lam / 2 * 1.001)
    los = PathParams(1, 0.01, 2.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValidationError) as err:
        Scene(f, tx, rx_bad, (los,), GainModel(0.0, ()))
    assert "rx.d" in str(err.value)


def test_scene_path_indexing_and_gain_model():
    scene = make_los_scene()
    assert scene.n_paths == 1
    assert scene.los.index == 1
    assert scene.d11 == 2.0
    with pytest.raises(InvalidArgumentError):
        GainModel(-0.1, ())
    with pytest.raises(InvalidArgumentError):
        GainModel(0.0, (1.5,))


def test_fingerprint_stable_and_sensitive():
    a = make_los_scene()
    b = make_los_scene()
    c = make_los_scene(dist=2.5)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_free_space_amp_literal():
    # lam/(4 pi D) at f = 10 GHz, D = 2 m
    assert free_space_amp(2.0, C_LIGHT / 1e10) == pytest.approx(
        0.0011928362898092355, rel=1e-14)
    # absorption halves the log-amplitude per unit distance times k_abs
    ratio = free_space_amp(2.0, 0.03, k_abs=0.05) / free_space_amp(2.0, 0.03)
    assert ratio == pytest.approx(math.exp(-0.05), rel=1e-14)
    assert free_space_amp(2.0, 0.03, refl=0.5) == pytest.approx(
        0.5 * free_space_amp(2.0, 0.03), rel=1e-14)


# ---------------------------------------------------------------------------
# reflector planes
# ---------------------------------------------------------------------------

def test_plane_mirror_involution_and_fixed_points():
    plane = ReflectorPlane(-7.930549685697973, 2.1480475514243076, 1.0,
                           -8.659161250347502)
    rng = np.random.default_rng(1)
    pts = rng.normal(0, 2, (20, 3))
    assert np.allclose(plane.mirror(plane.mirror(pts)), pts, atol=1e-9)
    on_plane = pts - np.outer(plane.signed_distance(pts),
                              plane.normal() / np.linalg.norm(plane.normal()))
    assert np.allclose(plane.mirror(on_plane), on_plane, atol=1e-9)


def test_plane_from_point_normal_rejects_vertical():
    with pytest.raises(DegenerateGeometryError) as err:
        plane_from_point_normal((0, 1, 0), (1.0, 1.0, 0.0))
    assert "n_z" in str(err.value)


def test_mirror_reflection_point_frozen():
    # bisector-constructed plane: the specular point must be the generator S
    plane = ReflectorPlane(-7.930549685697973, 2.1480475514243076, 1.0,
                           -8.659161250347502)
    t = np.zeros(3)
    r = 2.0 * np.asarray(u_dep(0.2, 0.1))
    s = mirror_reflection_point(plane, t, r)
    expect = np.array([-0.7110631598936181, 1.3015923835473262,
                       0.22415719871039883])
    assert np.allclose(s, expect, atol=1e-9)
    assert specular_residual(plane, t, s, r) <= 1e-9


def test_mirror_reflection_point_requires_same_side():
    plane = ReflectorPlane(0.0, 1.0, 1.0, -1.0)   # y + z = 1
    with pytest.raises(NoSpecularPathError):
        mirror_reflection_point(plane, np.zeros(3), np.array([0.0, 3.0, 3.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_specular_point_obeys_reflection_law(seed):
    rng = np.random.default_rng([seed])
    t = rng.uniform(-1, 1, 3) + np.array([0.0, 2.0, 0.0])
    r = rng.uniform(-1, 1, 3) + np.array([0.0, 4.0, 0.0])
    n = rng.uniform(-1, 1, 3)
    n[2] = np.sign(n[2]) * max(abs(n[2]), 0.2)
    p0 = rng.uniform(-1, 1, 3) - np.array([0.0, 2.0, 0.0])
    plane = plane_from_point_normal(p0, n)
    st_, sr_ = plane.signed_distance(t), plane.signed_distance(r)
    if st_ == 0 or sr_ == 0 or (st_ > 0) != (sr_ > 0):
        return
    s = mirror_reflection_point(plane, t, r)
    assert abs(plane.signed_distance(s)) <= 1e-9 * np.linalg.norm(plane.normal())
    assert specular_residual(plane, t, s, r) <= 1e-9
    # two-segment length equals the mirror-image straight line
    mirror_len = np.linalg.norm(plane.mirror(r) - t)
    path_len = np.linalg.norm(s - t) + np.linalg.norm(r - s)
    assert path_len == pytest.approx(mirror_len, rel=1e-12)


# ---------------------------------------------------------------------------
# reference-path reflector recovery
# ---------------------------------------------------------------------------

def test_reflector_recovery_frozen():
    s, plane, d_ref = reflector_from_reference_params(
        2.0, 0.2, 0.1, -0.2, -0.5, 0.15, -1.0404735248866992)
    assert d_ref == pytest.approx(1.5, abs=1e-12)
    expect = 1.5 * np.asarray(u_dep(-0.5, 0.15))
    assert np.allclose(s, expect, atol=1e-12)
    # plane passes through S and bisects: residual at the construction point
    assert abs(plane.signed_distance(s)) <= 1e-12
    assert specular_residual(plane, np.zeros(3),
                             s, 2.0 * np.asarray(u_dep(0.2, 0.1))) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_reflector_recovery_random_exact(seed):
    rng = np.random.default_rng([seed])
    d11 = rng.uniform(1.5, 60.0)
    th1 = rng.uniform(-1.0, 1.0)
    ph1 = rng.uniform(-0.5, 0.5)
    thp = rng.uniform(-1.2, 1.2)
    php = rng.uniform(-0.6, 0.6)
    ds = d11 * rng.uniform(0.3, 1.5)
    s_true = ds * np.asarray(u_dep(thp, php))
    r1 = d11 * np.asarray(u_dep(th1, ph1))
    v = s_true - r1
    th_rp, ph_rp = arr_angles(v / np.linalg.norm(v))
    th_r1 = -th1
    if abs(wrap_azimuth(th_rp - th_r1)) < 0.05 or abs(math.sin(th_rp + thp)) < 0.05:
        return
    try:
        s, _, d_ref = reflector_from_reference_params(
            d11, th1, ph1, th_r1, thp, php, th_rp)
    except DegenerateGeometryError:
        # bisector normal nearly in the xy-plane: correctly rejected
        return
    assert np.allclose(s, s_true, rtol=1e-10, atol=1e-10 * d11)
    assert d_ref == pytest.approx(ds, rel=1e-10)


def test_reflector_recovery_degenerate_cases():
    with pytest.raises(DegenerateGeometryError) as err:
        reflector_from_reference_params(2.0, 0.2, 0.1, -0.2, 0.2, 0.0, -0.2)
    assert "sin(theta_r + theta_t)" in str(err.value)


def test_reflector_from_reference_path(two_path_scene):
    s, plane, d_ref = reflector_from_reference_path(two_path_scene, 2)
    assert d_ref == pytest.approx(1.5, abs=1e-9)
    with pytest.raises(InvalidArgumentError):
        reflector_from_reference_path(two_path_scene, 1)
    with pytest.raises(InvalidArgumentError):
        reflector_from_reference_path(two_path_scene, 3)


def test_rx_positions_offset_structure(two_path_scene):
    scene = two_path_scene
    rx = rx_positions(scene)
    r1 = scene.rx_ref_position()
    assert np.allclose(rx[0], r1)
    d = scene.rx.d
    assert np.allclose(rx[1] - r1, [0.0, 0.0, -d])
    assert np.allclose(rx[2] - r1, [d, 0.0, 0.0])
