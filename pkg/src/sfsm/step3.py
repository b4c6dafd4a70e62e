"""Full refinement: exact rotations, translations and landmark geometry.

Landmarks are parameterized by (omega, psi, phi): softplus(omega) is the
inverse *range*, and (psi, phi) steer the unit bearing seen from the
reference camera. Freeing the bearing means the reference-frame
measurement no longer has to be swallowed verbatim (it carries pixel
quantization like every other observation); instead it constrains the
bearing through a prior residual on frame 0. Rotations move on SO(3) via
right-multiplicative increments.

The "ha" baseline keeps the landmark anchored to the measured reference
bearing and optimizes a single raw inverse depth per landmark (clamped at
1e-10, zero gradient below), with no reference priors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import Step3Failure
from .geometry import (
    Pose,
    SoftPlusParams,
    direction_vector,
    direction_vector_jacobian,
    exact_rotation,
    point_to_azel,
    skew,
    softplus,
    softplus_inverse,
    softplus_prime,
)
from .optimizer import LmConfig, Problem, SolveReport, solve
from .step1 import SmallMotionEstimate
from .step2 import W_CLAMP, W_FLOOR, Step2Solution, _measurements, _projection_parts
from .tracks import FeatureTracks

MIN_INIT_W = 1e-8

log = logging.getLogger(__name__)


@dataclass
class InitializationSolution:
    """Metric-up-to-scale initialization for frames 0..n."""

    poses: list  # Pose, index 0 is the identity reference
    track_ids: np.ndarray  # (m,) retained landmark ids
    landmark_params: np.ndarray  # (m, 3) omega/psi/phi or (m, 1) raw w
    landmark_points: np.ndarray  # (m, 3) reference-frame positions
    dropped_track_ids: np.ndarray
    report: SolveReport = field(repr=False, default=None)
    min_inverse_depth_trace: list = field(default_factory=list, repr=False)
    per_frame_rms_px: np.ndarray = None  # (n,), frames 1..n
    per_landmark_rms_px: np.ndarray = None  # (m,)
    final_rms_px: float = np.nan
    variant: str = "proposed"


def make_step3_family(cam, p_meas, params: SoftPlusParams, variant: str,
                      x0h=None, track_rows=None):
    """Measurement residual with slots (rotation, translation, landmark)."""

    def fn(values, want_jac):
        R, r, lm = values
        if variant == "proposed":
            omega, psi, phi = lm[:, 0], lm[:, 1], lm[:, 2]
            sp = softplus(omega, params)
            w = np.maximum(sp, W_FLOOR)
            m_vec = direction_vector(psi, phi)
        else:
            w = np.maximum(lm[:, 0], W_CLAMP)
            m_vec = x0h[track_rows]
        anchor = np.einsum("kab,kb->ka", R, m_vec)
        g = anchor + w[:, None] * r
        pix, P = _projection_parts(cam, g)
        res = p_meas - pix
        if not want_jac:
            return res, None
        J_R = np.einsum("kab,kbc->kac", P, np.einsum("kab,kbc->kac", R, skew(m_vec)))
        J_r = -P * w[:, None, None]
        if variant == "proposed":
            dw = softplus_prime(omega, params) * (sp > W_FLOOR)
            d_psi, d_phi = direction_vector_jacobian(psi, phi)
            J_lm = np.empty((lm.shape[0], 2, 3))
            J_lm[:, :, 0] = -np.einsum("kab,kb->ka", P, r) * dw[:, None]
            J_lm[:, :, 1] = -np.einsum("kab,kb->ka", P, np.einsum("kab,kb->ka", R, d_psi))
            J_lm[:, :, 2] = -np.einsum("kab,kb->ka", P, np.einsum("kab,kb->ka", R, d_phi))
        else:
            dw = (lm[:, 0] > W_CLAMP).astype(float)
            J_lm = (-np.einsum("kab,kb->ka", P, r) * dw[:, None])[:, :, None]
        return res, [J_R, J_r, J_lm]

    return fn


def make_prior_family(cam, p0_meas, params: SoftPlusParams):
    """Reference-frame bearing prior, slot (landmark,), zero omega column."""

    def fn(values, want_jac):
        (lm,) = values
        psi, phi = lm[:, 1], lm[:, 2]
        m_vec = direction_vector(psi, phi)
        pix, P = _projection_parts(cam, m_vec)
        res = p0_meas - pix
        if not want_jac:
            return res, None
        d_psi, d_phi = direction_vector_jacobian(psi, phi)
        J = np.zeros((lm.shape[0], 2, 3))
        J[:, :, 1] = -np.einsum("kab,kb->ka", P, d_psi)
        J[:, :, 2] = -np.einsum("kab,kb->ka", P, d_phi)
        return res, [J]

    return fn


def init_landmarks(x0h, s2: Step2Solution, params: SoftPlusParams, variant: str):
    """Landmark parameters from the restricted solution; drops tiny depths."""
    keep = s2.inverse_depths > MIN_INIT_W
    w = s2.inverse_depths[keep]
    if variant == "proposed":
        y0 = x0h[keep] / w[:, None]
        psi, phi, rho = point_to_azel(y0)
        omega = softplus_inverse(rho, params)
        lm = np.stack([omega, psi, phi], axis=-1)
    else:
        lm = w[:, None].copy()
    return keep, lm


def build_step3_problem(
    ft: FeatureTracks,
    est: SmallMotionEstimate,
    s2: Step2Solution,
    params: SoftPlusParams = SoftPlusParams(),
    sigma_px: float = 1.0,
    variant: str = "proposed",
):
    n = ft.n_frames - 1
    if n < 2:
        raise Step3Failure("full refinement needs at least 2 non-reference frames")
    x0h, p_meas, frame_ix, track_ix = _measurements(ft, est)
    keep, lm_init = init_landmarks(x0h, s2, params, variant)
    keep_ix = np.flatnonzero(keep)
    if keep_ix.size < 3:
        raise Step3Failure("fewer than 3 landmarks with usable inverse depth")
    if keep_ix.size < keep.size:
        log.info("dropping %d landmarks with inverse depth <= %g",
                 keep.size - keep_ix.size, MIN_INIT_W)
    remap = -np.ones(keep.size, dtype=int)
    remap[keep_ix] = np.arange(keep_ix.size)
    sel = keep[track_ix]
    frame_ix = frame_ix[sel]
    track_ix = remap[track_ix[sel]]
    p_meas = p_meas[sel]
    x0h_kept = x0h[keep_ix]

    prob = Problem()
    R_ids = [prob.add_parameter(exact_rotation(est.thetas[i]), so3=True) for i in range(n)]
    r_ids = [prob.add_parameter(s2.translations[i]) for i in range(n)]
    lm_ids = [prob.add_parameter(lm_init[j]) for j in range(keep_ix.size)]

    fn = make_step3_family(ft.cam, p_meas, params, variant,
                           x0h=x0h_kept, track_rows=track_ix)
    sigma = sigma_px**2 * np.eye(2)
    prob.add_residual_family(
        [R_ids, r_ids, lm_ids], [frame_ix, frame_ix, track_ix], fn, dim=2, sigma=sigma, robust=True
    )
    if variant == "proposed":
        p0 = ft.pixels_at(0, est.inlier_indices[keep_ix])
        prior = make_prior_family(ft.cam, p0, params)
        prob.add_residual_family(
            [lm_ids], [np.arange(keep_ix.size)], prior, dim=2, sigma=sigma, robust=True
        )
    handles = dict(R=R_ids, r=r_ids, lm=lm_ids, keep_ix=keep_ix, fn=fn,
                   p_meas=p_meas, frame_ix=frame_ix, track_ix=track_ix,
                   x0h=x0h_kept)
    return prob, handles


def solve_step3(
    ft: FeatureTracks,
    est: SmallMotionEstimate,
    s2: Step2Solution,
    params: SoftPlusParams = SoftPlusParams(),
    sigma_px: float = 1.0,
    variant: str = "proposed",
    lm: LmConfig = LmConfig(),
) -> InitializationSolution:
    prob, h = build_step3_problem(ft, est, s2, params, sigma_px, variant)
    lm_ids = h["lm"]

    depth_trace: list = []

    def on_accept(values, iteration, cost):
        first = np.array([values[b][0] for b in lm_ids])
        if variant == "proposed":
            w = np.maximum(softplus(first, params), W_FLOOR)
        else:
            w = np.maximum(first, W_CLAMP)
        depth_trace.append(float(np.min(w)))

    report = solve(prob, lm, on_accept=on_accept)
    if report.termination_reason == "diverged":
        raise Step3Failure("full refinement diverged")

    n = ft.n_frames - 1
    poses = [Pose.identity()]
    for i in range(n):
        poses.append(Pose(prob.block_value(h["R"][i]), prob.block_value(h["r"][i])))
    lm_params = np.array([prob.block_value(b) for b in lm_ids])
    if variant == "proposed":
        rho = np.maximum(softplus(lm_params[:, 0], params), W_FLOOR)
        points = direction_vector(lm_params[:, 1], lm_params[:, 2]) / rho[:, None]
    else:
        w = np.maximum(lm_params[:, 0], W_CLAMP)
        points = h["x0h"] / w[:, None]

    # final unwhitened residual statistics, recomputed through the same model
    values = [b.value for b in prob.blocks]
    gathered = [
        np.stack([values[b] for b in ids])[ix]
        for ids, ix in (
            (h["R"], h["frame_ix"]),
            (h["r"], h["frame_ix"]),
            (lm_ids, h["track_ix"]),
        )
    ]
    res, _ = h["fn"](gathered, False)
    sq = np.sum(res * res, axis=1)
    per_frame = np.array(
        [np.sqrt(np.mean(sq[h["frame_ix"] == i])) for i in range(n)]
    )
    per_lm = np.array(
        [np.sqrt(np.mean(sq[h["track_ix"] == j])) for j in range(len(lm_ids))]
    )

    all_ids = np.array([ft.tracks[k].track_id for k in est.inlier_indices])
    return InitializationSolution(
        poses=poses,
        track_ids=all_ids[h["keep_ix"]],
        landmark_params=lm_params,
        landmark_points=points,
        dropped_track_ids=np.setdiff1d(all_ids, all_ids[h["keep_ix"]]),
        report=report,
        min_inverse_depth_trace=depth_trace,
        per_frame_rms_px=per_frame,
        per_landmark_rms_px=per_lm,
        final_rms_px=float(np.sqrt(np.mean(sq))),
        variant=variant,
    )
