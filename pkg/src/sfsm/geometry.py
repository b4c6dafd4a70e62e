"""Camera and rotation primitives shared by every pipeline stage.

Conventions
-----------
Points are plain ndarrays. Pixel points are (..., 2) arrays ``(u, v)``,
normalized image points are (..., 2) arrays ``(x, y)`` on the z = 1 plane,
3-D points are (..., 3) arrays in the reference camera frame (z forward).
Rotation vectors are (..., 3) arrays in radians. All functions broadcast
over leading axes.

A landmark bearing is parameterized by azimuth ``psi`` (rotation about the
camera y axis) and elevation ``phi`` so that ``direction_vector(psi, phi)``
is the unit ray and inverse range ``rho`` recovers the point as
``direction_vector(psi, phi) / rho``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDepth, NonPositiveDepth, ValidationError

EPS_Z = 1e-12


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with zero skew and an image extent."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"image extent must be positive, got ({self.width}, {self.height})")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class SoftPlusParams:
    """Sharpness of the positivity map used for inverse depths."""

    alpha: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")


@dataclass
class Pose:
    """Rigid transform taking reference-frame points into frame i."""

    R: np.ndarray
    r: np.ndarray

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


def normalize_homogeneous(v: np.ndarray) -> np.ndarray:
    """Divide by the third component: (..., 3) -> (..., 2).

    Raises DegenerateDepth when any |z| <= EPS_Z.
    """
    v = np.asarray(v, dtype=float)
    z = v[..., 2]
    if np.any(np.abs(z) <= EPS_Z):
        raise DegenerateDepth(f"near-zero depth in homogeneous normalization (min |z| = {np.abs(z).min():.3e})")
    return v[..., :2] / z[..., None]


def pixel_to_camera(cam: CameraModel, p: np.ndarray) -> np.ndarray:
    """Pixels (..., 2) to normalized image coordinates (..., 2)."""
    p = np.asarray(p, dtype=float)
    x = (p[..., 0] - cam.cx) / cam.fx
    y = (p[..., 1] - cam.cy) / cam.fy
    return np.stack([x, y], axis=-1)


def camera_to_pixel(cam: CameraModel, x: np.ndarray) -> np.ndarray:
    """Normalized image coordinates (..., 2) to pixels (..., 2)."""
    x = np.asarray(x, dtype=float)
    u = cam.fx * x[..., 0] + cam.cx
    v = cam.fy * x[..., 1] + cam.cy
    return np.stack([u, v], axis=-1)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def small_rotation_matrix(theta: np.ndarray) -> np.ndarray:
    """First-order rotation I + [theta]x, (..., 3) -> (..., 3, 3)."""
    return np.eye(3) + skew(theta)


def exact_rotation(theta: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map, (..., 3) -> (..., 3, 3)."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta, axis=-1)
    a2 = angle * angle
    small = angle < 1e-8
    # sin(t)/t and (1-cos t)/t^2 with series fallbacks near zero
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 1.0 - a2 / 6.0, np.sin(angle) / np.where(small, 1.0, angle))
        c = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(angle)) / np.where(small, 1.0, a2))
    K = skew(theta)
    K2 = K @ K
    return np.eye(3) + s[..., None, None] * K + c[..., None, None] * K2


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of an orthonormal matrix, (..., 3, 3) -> (..., 3)."""
    R = np.asarray(R, dtype=float)
    # sin(angle) * axis from the skew part, cos(angle) from the trace
    s_vec = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    s_norm = np.linalg.norm(s_vec, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    angle = np.arctan2(s_norm, c)

    out = np.empty(R.shape[:-2] + (3,))
    near_pi = angle > np.pi - 1e-4
    tiny = s_norm < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(tiny, 1.0, angle / np.where(tiny, 1.0, s_norm))
    out[...] = s_vec * scale[..., None]

    if np.any(near_pi):
        # axis from the dominant diagonal of (R + I) / 2
        idx = np.argwhere(near_pi)
        for ij in idx:
            Ri = R[tuple(ij)]
            M = 0.5 * (Ri + np.eye(3))
            k = int(np.argmax(np.diag(M)))
            axis = M[:, k] / np.sqrt(max(M[k, k], 1e-16))
            axis = axis / np.linalg.norm(axis)
            sv = s_vec[tuple(ij)]
            if np.dot(axis, sv) < 0:
                axis = -axis
            out[tuple(ij)] = axis * angle[tuple(ij)]
    return out


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (w, x, y, z); normalizes first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def softplus(omega, params: SoftPlusParams = SoftPlusParams()):
    """Strictly positive inverse depth w = softplus(omega).

    Overflow-safe form: max(0, w) + log1p(exp(-|alpha w|)) / alpha.
    """
    a = params.alpha
    omega = np.asarray(omega, dtype=float)
    out = np.maximum(omega, 0.0) + np.log1p(np.exp(-np.abs(a * omega))) / a
    return out if out.ndim else float(out)


def softplus_prime(omega, params: SoftPlusParams = SoftPlusParams()):
    """d softplus / d omega = sigmoid(alpha * omega)."""
    from scipy.special import expit

    out = expit(params.alpha * np.asarray(omega, dtype=float))
    return out if out.ndim else float(out)


def softplus_inverse(w, params: SoftPlusParams = SoftPlusParams()):
    """Inverse of softplus on w > 0; identity branch once alpha*w > 30."""
    a = params.alpha
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise NonPositiveDepth("softplus_inverse requires strictly positive input")
    aw = a * w
    with np.errstate(divide="ignore"):
        exact = np.log(np.expm1(np.where(aw > 30.0, 1.0, aw))) / a
    out = np.where(aw > 30.0, w, exact)
    return out if out.ndim else float(out)


def direction_vector(psi, phi) -> np.ndarray:
    """Unit bearing [cos(phi) sin(psi), -sin(phi), cos(phi) cos(psi)]."""
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cphi = np.cos(phi)
    return np.stack([cphi * np.sin(psi), -np.sin(phi), cphi * np.cos(psi)], axis=-1)


def direction_vector_jacobian(psi, phi):
    """Partials of direction_vector: (dm/dpsi, dm/dphi), each (..., 3)."""
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    sps, cps = np.sin(psi), np.cos(psi)
    sph, cph = np.sin(phi), np.cos(phi)
    d_psi = np.stack([cph * cps, np.zeros_like(cps), -cph * sps], axis=-1)
    d_phi = np.stack([-sph * sps, -cph, -sph * cps], axis=-1)
    return d_psi, d_phi


def point_to_azel(y: np.ndarray):
    """(psi, phi, rho) for a point in front of the reference camera.

    psi = atan(X / Z), phi = atan(-Y / hypot(X, Z)), rho = 1 / |y|.
    Raises DegenerateDepth for Z <= 0 or |y| ~ 0.
    """
    y = np.asarray(y, dtype=float)
    X, Y, Z = y[..., 0], y[..., 1], y[..., 2]
    if np.any(Z <= 0):
        raise DegenerateDepth("azimuth/elevation parameterization needs Z > 0")
    norm = np.linalg.norm(y, axis=-1)
    if np.any(norm <= EPS_Z):
        raise DegenerateDepth("cannot parameterize a zero-length bearing")
    psi = np.arctan2(X, Z)
    phi = np.arctan2(-Y, np.hypot(X, Z))
    rho = 1.0 / norm
    if psi.ndim:
        return psi, phi, rho
    return float(psi), float(phi), float(rho)
