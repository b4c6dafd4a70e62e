from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from sfsm.errors import DegenerateDepth, NonPositiveDepth, ValidationError
from sfsm.geometry import (
    CameraModel,
    SoftPlusParams,
    camera_to_pixel,
    direction_vector,
    direction_vector_jacobian,
    exact_rotation,
    normalize_homogeneous,
    pixel_to_camera,
    point_to_azel,
    quat_to_rotation,
    rotation_log,
    rotation_to_quat,
    skew,
    small_rotation_matrix,
    softplus,
    softplus_inverse,
    softplus_prime,
)

CAM = CameraModel(fx=3900.0, fy=3905.0, cx=512.0, cy=510.0, width=1024, height=1024)


def test_camera_matrix_inverse():
    assert np.allclose(CAM.K @ CAM.K_inv, np.eye(3), atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValidationError):
        CameraModel(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
    with pytest.raises(ValidationError):
        CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=0, height=10)


def test_pixel_camera_round_trip():
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 1024, size=(40, 2))
    back = camera_to_pixel(CAM, pixel_to_camera(CAM, p))
    assert np.allclose(back, p, atol=1e-9)


def test_principal_point_maps_to_origin():
    x = pixel_to_camera(CAM, np.array([CAM.cx, CAM.cy]))
    assert np.allclose(x, 0.0)


def test_normalize_homogeneous_basic():
    assert np.allclose(normalize_homogeneous(np.array([2.0, -4.0, 2.0])), [1.0, -2.0])


def test_normalize_homogeneous_degenerate():
    with pytest.raises(DegenerateDepth):
        normalize_homogeneous(np.array([1.0, 1.0, 1e-13]))


def test_skew_antisymmetry_and_cross():
    v = np.array([0.3, -1.2, 2.0])
    w = np.array([1.0, 0.5, -0.2])
    S = skew(v)
    assert np.allclose(S.T, -S)
    assert np.allclose(S @ w, np.cross(v, w))


def test_small_rotation_structure():
    th = np.array([0.01, -0.02, 0.03])
    R = small_rotation_matrix(th)
    expected = np.array(
        [[1.0, -0.03, -0.02], [0.03, 1.0, -0.01], [0.02, 0.01, 1.0]]
    )
    assert np.allclose(R, expected)


def test_exact_rotation_matches_scipy():
    rng = np.random.default_rng(1)
    th = rng.normal(scale=0.5, size=(50, 3))
    R = exact_rotation(th)
    R_ref = Rotation.from_rotvec(th).as_matrix()
    assert np.allclose(R, R_ref, atol=1e-12)


def test_exact_rotation_small_angle_series():
    th = np.array([1e-10, -2e-10, 5e-11])
    R = exact_rotation(th)
    assert np.allclose(R, np.eye(3) + skew(th), atol=1e-19)


def test_small_rotation_first_order_error_bound():
    # || (I + [th]x) - exp([th]x) || = O(|th|^2)
    rng = np.random.default_rng(2)
    for scale in [1e-4, 1e-3, 1e-2]:
        th = rng.normal(size=3)
        th = th / np.linalg.norm(th) * scale
        err = np.abs(small_rotation_matrix(th) - exact_rotation(th)).max()
        assert err < scale**2


def test_rotation_log_round_trip():
    rng = np.random.default_rng(3)
    th = rng.normal(scale=0.7, size=(30, 3))
    assert np.allclose(rotation_log(exact_rotation(th)), th, atol=1e-10)


def test_rotation_log_near_pi():
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    th = axis * (np.pi - 1e-6)
    assert np.allclose(rotation_log(exact_rotation(th)), th, atol=1e-8)


def test_quaternion_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(30):
        R = Rotation.from_rotvec(rng.normal(scale=1.5, size=3)).as_matrix()
        q = rotation_to_quat(R)
        assert q[0] >= 0
        assert np.allclose(quat_to_rotation(q), R, atol=1e-12)
        q_ref = Rotation.from_matrix(R).as_quat()  # (x, y, z, w)
        q_ref = np.r_[q_ref[3], q_ref[:3]]
        if q_ref[0] < 0:
            q_ref = -q_ref
        assert np.allclose(q, q_ref, atol=1e-12)


# high-precision oracle values (50-digit arithmetic, frozen)
SOFTPLUS_CASES = [
    # (omega, alpha, value)
    (0.0, 1.0, 0.69314718055994530942),
    (-100.0, 1.0, 3.7200759760208359630e-44),
    (1.0, 1.0, 1.313261687518222834),
    (0.5, 10.0, 0.50067153484891180686),
    (-0.3, 10.0, 0.0048587351573742064024),
]


@pytest.mark.parametrize("omega,alpha,expected", SOFTPLUS_CASES)
def test_softplus_oracle(omega, alpha, expected):
    got = softplus(omega, SoftPlusParams(alpha))
    assert got == pytest.approx(expected, rel=1e-14, abs=1e-300)


SOFTPLUS_INV_CASES = [
    (0.01, 1.0, -4.6001660193248968972),
    (0.01, 10.0, -0.2252168461044090787),
    (2.0, 1.0, 1.854586542131140943),
]


@pytest.mark.parametrize("w,alpha,expected", SOFTPLUS_INV_CASES)
def test_softplus_inverse_oracle(w, alpha, expected):
    got = softplus_inverse(w, SoftPlusParams(alpha))
    assert got == pytest.approx(expected, rel=1e-13)


def test_softplus_inverse_identity_branch():
    # alpha * w > 30 switches to the identity; error there is below 1e-13
    assert softplus_inverse(50.0, SoftPlusParams(1.0)) == 50.0
    assert softplus_inverse(4.0, SoftPlusParams(10.0)) == 4.0


def test_softplus_extreme_inputs_finite_and_monotone():
    # exp(-alpha * 1e6) underflows to +0.0, so monotone means non-decreasing here
    omegas = np.array([-1e6, -100.0, 0.0, 100.0, 1e6])
    for alpha in [1.0, 10.0, 100.0]:
        vals = softplus(omegas, SoftPlusParams(alpha))
        assert np.all(np.isfinite(vals))
        assert np.all(np.diff(vals) >= 0)
        assert np.all(vals >= 0)
        assert np.all(vals[2:] > 0)


@settings(max_examples=200, deadline=None)
@given(
    w=st.floats(min_value=1e-8, max_value=1e8),
    alpha=st.sampled_from([1.0, 10.0, 100.0]),
)
def test_softplus_round_trip_property(w, alpha):
    params = SoftPlusParams(alpha)
    back = softplus(softplus_inverse(w, params), params)
    assert back == pytest.approx(w, rel=1e-9)


def test_softplus_inverse_rejects_nonpositive():
    with pytest.raises(NonPositiveDepth):
        softplus_inverse(0.0)
    with pytest.raises(NonPositiveDepth):
        softplus_inverse(-1.0)


def test_softplus_prime_is_sigmoid():
    assert softplus_prime(0.0, SoftPlusParams(1.0)) == pytest.approx(0.5)
    # finite-difference check
    params = SoftPlusParams(10.0)
    for om in [-0.4, -0.1, 0.0, 0.2, 1.3]:
        h = 1e-6
        fd = (softplus(om + h, params) - softplus(om - h, params)) / (2 * h)
        assert softplus_prime(om, params) == pytest.approx(fd, rel=1e-8)


def test_direction_vector_oracle():
    # point (1, -2, 10), values frozen from 50-digit arithmetic
    psi, phi, rho = point_to_azel(np.array([1.0, -2.0, 10.0]))
    assert psi == pytest.approx(0.099668652491162027378, rel=1e-14)
    assert phi == pytest.approx(0.19644099143623993408, rel=1e-14)
    assert rho == pytest.approx(0.097590007294853317935, rel=1e-14)
    assert np.allclose(direction_vector(psi, phi) / rho, [1.0, -2.0, 10.0], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    psi=st.floats(min_value=-1.5, max_value=1.5),
    phi=st.floats(min_value=-1.5, max_value=1.5),
)
def test_direction_vector_unit_norm(psi, phi):
    m = direction_vector(psi, phi)
    assert np.linalg.norm(m) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(min_value=-5.0, max_value=5.0),
    y=st.floats(min_value=-5.0, max_value=5.0),
    z=st.floats(min_value=0.1, max_value=1000.0),
)
def test_azel_round_trip_property(x, y, z):
    p = np.array([x, y, z])
    psi, phi, rho = point_to_azel(p)
    assert np.allclose(direction_vector(psi, phi) / rho, p, rtol=1e-10, atol=1e-10)


def test_point_to_azel_rejects_nonpositive_depth():
    with pytest.raises(DegenerateDepth):
        point_to_azel(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(DegenerateDepth):
        point_to_azel(np.array([1.0, 1.0, -2.0]))


def test_direction_vector_jacobian_finite_difference():
    rng = np.random.default_rng(5)
    for _ in range(20):
        psi, phi = rng.uniform(-1.2, 1.2, size=2)
        d_psi, d_phi = direction_vector_jacobian(psi, phi)
        h = 1e-7
        fd_psi = (direction_vector(psi + h, phi) - direction_vector(psi - h, phi)) / (2 * h)
        fd_phi = (direction_vector(psi, phi + h) - direction_vector(psi, phi - h)) / (2 * h)
        assert np.allclose(d_psi, fd_psi, atol=1e-8)
        assert np.allclose(d_phi, fd_phi, atol=1e-8)
