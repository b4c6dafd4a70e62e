"""Restricted refinement: per-frame translations and per-landmark inverse
depths, with the stage-1 rotations held fixed.

The shared inverse depth assumption of stage 1 is dropped here: each
landmark j gets its own inverse depth, kept strictly positive through the
softplus map, and each frame i gets an unscaled translation initialized
from the stage-1 scaled translation divided by the nominal inverse depth.
Rotations stay first-order and constant, which keeps the problem close to
bilinear and cheap.

The comparison baseline ("ha" variant) optimizes a raw inverse depth with
a hard positivity clamp at 1e-10 instead of the softplus map; below the
clamp the derivative is zero, so a landmark pushed across it stalls there.
That brittleness is intentional baseline behaviour.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Step2Failure
from .geometry import SoftPlusParams, pixel_to_camera, skew, softplus, softplus_inverse, softplus_prime
from .optimizer import EvaluationRejected, LmConfig, Problem, SolveReport, solve
from .step1 import SmallMotionEstimate
from .tracks import FeatureTracks

DEPTH_GUARD = 1e-9
W_CLAMP = 1e-10
# Smallest normal float. softplus(omega) underflows to exact 0.0 once
# alpha*omega < -745; flooring there keeps the modeled inverse depth strictly
# positive in float64, with a zero gradient like the hard clamp above.
W_FLOOR = float(np.finfo(np.float64).tiny)


@dataclass
class Step2Solution:
    translations: np.ndarray  # (n, 3) frames 1..n
    omegas: np.ndarray  # (m,) softplus parameters (proposed) or raw w (baseline)
    inverse_depths: np.ndarray  # (m,) strictly positive w
    track_ids: np.ndarray  # (m,) track ids in problem order
    report: SolveReport = field(repr=False, default=None)
    min_inverse_depth_trace: list = field(default_factory=list, repr=False)
    variant: str = "proposed"


def _measurements(ft: FeatureTracks, est: SmallMotionEstimate):
    """Gathered arrays over frames 1..n x inlier tracks."""
    n = ft.n_frames - 1
    idx = est.inlier_indices
    m = idx.size
    x0h = np.ones((m, 3))
    x0h[:, :2] = pixel_to_camera(ft.cam, ft.pixels_at(0, idx))
    p = np.empty((n, m, 2))
    for i in range(1, n + 1):
        p[i - 1] = ft.pixels_at(i, idx)
    frame_ix = np.repeat(np.arange(n), m)
    track_ix = np.tile(np.arange(m), n)
    return x0h, p.reshape(n * m, 2), frame_ix, track_ix


def _projection_parts(cam, g):
    """Pixel projection of camera points g (N, 3) and d(pixel)/dg (N, 2, 3)."""
    z = g[:, 2]
    if np.any(z <= DEPTH_GUARD):
        raise EvaluationRejected("camera-plane crossing")
    u = cam.fx * g[:, 0] / z + cam.cx
    v = cam.fy * g[:, 1] / z + cam.cy
    pix = np.stack([u, v], axis=-1)
    P = np.zeros((g.shape[0], 2, 3))
    P[:, 0, 0] = cam.fx / z
    P[:, 0, 2] = -cam.fx * g[:, 0] / (z * z)
    P[:, 1, 1] = cam.fy / z
    P[:, 1, 2] = -cam.fy * g[:, 1] / (z * z)
    return pix, P


def make_step2_family(cam, x0h, p_meas, track_rows, params: SoftPlusParams, variant: str):
    """Vectorized residual for one (theta const, translation, depth) triple.

    Returns fn(values, want_jac) suitable for Problem.add_residual_family
    with slots (theta, r, depth-parameter).
    """
    hat_x0 = skew(x0h)  # (m, 3, 3), constant

    def fn(values, want_jac):
        theta, r, dp = values
        x0 = x0h[track_rows]
        q = x0 + np.cross(theta, x0)
        if variant == "proposed":
            sp = softplus(dp[:, 0], params)
            w = np.maximum(sp, W_FLOOR)
            dw = softplus_prime(dp[:, 0], params) * (sp > W_FLOOR) if want_jac else None
        else:
            w = np.maximum(dp[:, 0], W_CLAMP)
            dw = (dp[:, 0] > W_CLAMP).astype(float) if want_jac else None
        g = q + w[:, None] * r
        pix, P = _projection_parts(cam, g)
        res = p_meas - pix
        if not want_jac:
            return res, None
        J_theta = np.einsum("kab,kbc->kac", P, hat_x0[track_rows])
        J_r = -P * w[:, None, None]
        J_w = -np.einsum("kab,kb->ka", P, r) * dw[:, None]
        return res, [J_theta, J_r, J_w[:, :, None]]

    return fn


def build_step2_problem(
    ft: FeatureTracks,
    est: SmallMotionEstimate,
    params: SoftPlusParams = SoftPlusParams(),
    wbar: float = 0.01,
    sigma_px: float = 1.0,
    variant: str = "proposed",
):
    """Problem plus block handles; initial state from the stage-1 output."""
    n = ft.n_frames - 1
    x0h, p_meas, frame_ix, track_ix = _measurements(ft, est)
    m = est.inlier_indices.size

    prob = Problem()
    theta_ids = [prob.add_parameter(est.thetas[i], constant=True) for i in range(n)]
    r_ids = [prob.add_parameter(est.rbars[i] / wbar) for i in range(n)]
    if variant == "proposed":
        omega0 = softplus_inverse(wbar, params)
        d_ids = [prob.add_parameter(np.array([omega0])) for _ in range(m)]
    else:
        d_ids = [prob.add_parameter(np.array([wbar])) for _ in range(m)]

    fn = make_step2_family(ft.cam, x0h, p_meas, track_ix, params, variant)
    prob.add_residual_family(
        [theta_ids, r_ids, d_ids],
        [frame_ix, frame_ix, track_ix],
        fn,
        dim=2,
        sigma=sigma_px**2 * np.eye(2),
        robust=True,
    )
    return prob, theta_ids, r_ids, d_ids


def solve_step2(
    ft: FeatureTracks,
    est: SmallMotionEstimate,
    params: SoftPlusParams = SoftPlusParams(),
    wbar: float = 0.01,
    sigma_px: float = 1.0,
    variant: str = "proposed",
    lm: LmConfig = LmConfig(),
) -> Step2Solution:
    prob, theta_ids, r_ids, d_ids = build_step2_problem(
        ft, est, params, wbar, sigma_px, variant
    )
    theta_before = [prob.block_value(t) for t in theta_ids]

    depth_trace: list = []

    def on_accept(values, iteration, cost):
        dp = np.array([values[d][0] for d in d_ids])
        if variant == "proposed":
            w = np.maximum(softplus(dp, params), W_FLOOR)
        else:
            w = np.maximum(dp, W_CLAMP)
        depth_trace.append(float(np.min(w)))

    report = solve(prob, lm, on_accept=on_accept)
    if report.termination_reason == "diverged":
        raise Step2Failure("restricted refinement diverged")

    for t_id, before in zip(theta_ids, theta_before):
        assert np.all(prob.block_value(t_id) == before), "fixed rotations moved"

    dp = np.array([prob.block_value(d)[0] for d in d_ids])
    if variant == "proposed":
        w = np.maximum(softplus(dp, params), W_FLOOR)
    else:
        w = np.maximum(dp, W_CLAMP)
    return Step2Solution(
        translations=np.array([prob.block_value(r) for r in r_ids]),
        omegas=dp,
        inverse_depths=np.asarray(w, dtype=float),
        track_ids=np.array([ft.tracks[k].track_id for k in est.inlier_indices]),
        report=report,
        min_inverse_depth_trace=depth_trace,
        variant=variant,
    )
