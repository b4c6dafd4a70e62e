"""Shared synthetic fixtures for the refinement-stage tests.

Scenes here are generated directly from the projection models so that the
stages under test can reach exactly zero residual. The standalone scene
generator gets its own tests elsewhere.
"""
import numpy as np
import pytest

from sfsm.geometry import (
    CameraModel,
    camera_to_pixel,
    exact_rotation,
    small_rotation_matrix,
)
from sfsm.step1 import RansacResult, SmallMotionEstimate
from sfsm.tracks import FeatureTracks, Track


def _assemble_tracks(cam, pix_frames):
    """Track list from per-frame (m, 2) pixel arrays, all fully covisible."""
    m = pix_frames[0].shape[0]
    tracks = []
    for j in range(m):
        uv = np.array([pf[j] for pf in pix_frames])
        tracks.append(Track(track_id=j, uv=uv))
    return FeatureTracks(cam=cam, n_frames=len(pix_frames), tracks=tracks)


def make_bundle_scene(n_frames=5, m=40, seed=0, exact_rot=False,
                      theta_scale=0.02, noise_px=0.0):
    """Scene whose pixels follow the small-motion projection model exactly.

    With exact_rot the rotations are full Rodrigues matrices, matching the
    final-stage model; otherwise first-order rotations, matching the
    restricted stage. Returns (tracks, truth dict).
    """
    rng = np.random.default_rng(seed)
    cam = CameraModel(fx=900.0, fy=880.0, cx=512.0, cy=384.0, width=1024, height=768)
    n = n_frames - 1
    x0 = rng.uniform(-0.28, 0.28, size=(m, 2))
    x0h = np.concatenate([x0, np.ones((m, 1))], axis=1)
    w = rng.uniform(0.008, 0.012, size=m)
    thetas = rng.uniform(-theta_scale, theta_scale, size=(n, 3))
    trans = rng.uniform(-0.6, 0.6, size=(n, 3))

    pix_frames = [camera_to_pixel(cam, x0)]
    for i in range(n):
        R = exact_rotation(thetas[i]) if exact_rot else small_rotation_matrix(thetas[i])
        g = x0h @ R.T + w[:, None] * trans[i]
        pix = camera_to_pixel(cam, g[:, :2] / g[:, 2:])
        if noise_px:
            pix = pix + rng.normal(0.0, noise_px, size=pix.shape)
        pix_frames.append(pix)

    ft = _assemble_tracks(cam, pix_frames)
    truth = dict(x0h=x0h, w=w, thetas=thetas, translations=trans,
                 points=x0h / w[:, None])
    return ft, truth


def fabricate_estimate(ft, truth, rms=0.0):
    """SmallMotionEstimate carrying the exact generating rotations."""
    n = ft.n_frames - 1
    m = len(ft.tracks)
    wbar = 0.01
    ransac = RansacResult(
        theta=truth["thetas"][-1],
        rbar=truth["translations"][-1] * wbar,
        inlier_mask=np.ones(m, dtype=bool),
        iterations_run=0,
        best_count=m,
        inlier_rms_px=rms,
    )
    return SmallMotionEstimate(
        thetas=truth["thetas"].copy(),
        rbars=truth["translations"] * wbar,
        inlier_indices=np.arange(m),
        per_frame_rms_px=np.full(n, rms),
        n_covisible=m,
        ransac=ransac,
    )


@pytest.fixture
def small_motion_scene():
    return make_bundle_scene(exact_rot=False, seed=3)


@pytest.fixture
def exact_rotation_scene():
    return make_bundle_scene(exact_rot=True, seed=7)
