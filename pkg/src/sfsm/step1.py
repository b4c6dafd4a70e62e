"""Linear small-motion stage.

For small rotations and a weak-perspective target, the image of a reference
point ``x0 = (x0, y0)`` in frame i under rotation vector ``theta`` and
scaled translation ``rbar`` is the rational expression

    D = -theta2*x0 + theta1*y0 + 1 + rbar3
    x = (x0 - theta3*y0 + theta2 + rbar1) / D
    y = (theta3*x0 + y0 - theta1 + rbar2) / D

Clearing D gives two equations per correspondence that are exactly linear
in (theta, rbar), solved per frame pair by least squares. The scaled
translation absorbs the unknown shared inverse depth, so only the product
is observable here; the refinement stages recover the split.

The rotation-only variant drops the rbar columns (baseline behaviour for
comparison runs) and needs a 2-correspondence minimal sample instead of 3.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDepth,
    InsufficientCorrespondences,
    RansacFailure,
    Step1Failure,
)
from .geometry import EPS_Z, CameraModel, camera_to_pixel, pixel_to_camera
from .tracks import FeatureTracks


@dataclass(frozen=True)
class Step1Config:
    mu_px: float = 2.0  # inlier gate, pixels
    iterations: int = 52
    sample_size: int = 3
    min_inlier_count: int = 6
    min_inlier_fraction: float = 0.2
    rotation_only: bool = False
    adaptive: bool = False
    confidence: float = 0.999
    cond_max: float = 1e10
    wbar: float = 0.01  # nominal shared inverse depth, consumed by the next stage
    rng_seed: int = 0

    def minimal_sample(self) -> int:
        return 2 if self.rotation_only else 3

    def __post_init__(self):
        if self.sample_size < self.minimal_sample():
            raise ValueError(
                f"sample_size {self.sample_size} below the minimal sample "
                f"{self.minimal_sample()} for this model"
            )


@dataclass
class RansacResult:
    theta: np.ndarray  # (3,)
    rbar: np.ndarray  # (3,)
    inlier_mask: np.ndarray  # (k,) bool over covisible tracks
    iterations_run: int
    best_count: int
    inlier_rms_px: float


@dataclass
class SmallMotionEstimate:
    """Per-frame first-order motion for frames 1..n plus the inlier set."""

    thetas: np.ndarray  # (n, 3), row i-1 is frame i
    rbars: np.ndarray  # (n, 3)
    inlier_indices: np.ndarray  # indices into the covisible track list
    per_frame_rms_px: np.ndarray  # (n,)
    n_covisible: int
    ransac: RansacResult = field(repr=False, default=None)


def expected_point(theta, rbar, x0) -> np.ndarray:
    """Model projection of reference points x0 (..., 2) -> (..., 2)."""
    xy, valid = _project(theta, rbar, np.asarray(x0, dtype=float))
    if not np.all(valid):
        raise DegenerateDepth("model denominator fell below threshold")
    return xy


def _project(theta, rbar, x0):
    t1, t2, t3 = theta
    b1, b2, b3 = rbar
    x, y = x0[..., 0], x0[..., 1]
    D = -t2 * x + t1 * y + 1.0 + b3
    valid = np.abs(D) > EPS_Z
    Ds = np.where(valid, D, 1.0)
    px = (x - t3 * y + t2 + b1) / Ds
    py = (t3 * x + y - t1 + b2) / Ds
    return np.stack([px, py], axis=-1), valid


def build_linear_system(x0, xi, rotation_only: bool = False):
    """Stack the two linearized rows per correspondence.

    Unknown order (theta1, theta2, theta3, rbar1, rbar2, rbar3); the
    rotation-only variant keeps just the first three columns.
    """
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    k = x0.shape[0]
    a, b = x0[:, 0], x0[:, 1]
    u, v = xi[:, 0], xi[:, 1]
    A = np.zeros((2 * k, 6))
    rhs = np.empty(2 * k)
    A[0::2, 0] = u * b
    A[0::2, 1] = -u * a - 1.0
    A[0::2, 2] = b
    A[0::2, 3] = -1.0
    A[0::2, 5] = u
    rhs[0::2] = a - u
    A[1::2, 0] = v * b + 1.0
    A[1::2, 1] = -v * a
    A[1::2, 2] = -a
    A[1::2, 4] = -1.0
    A[1::2, 5] = v
    rhs[1::2] = b - v
    if rotation_only:
        A = A[:, :3]
    return A, rhs


def solve_linear(A, rhs, cond_max: float = 1e10):
    """Minimum-norm least squares; None when the system is ill-conditioned."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] <= 0 or s[0] / s[-1] > cond_max:
        return None
    sol = Vt.T @ ((U.T @ rhs) / s)
    return sol


def _unpack(sol, rotation_only):
    if rotation_only:
        return sol.copy(), np.zeros(3)
    return sol[:3].copy(), sol[3:].copy()


def solve_sample(x0, xi, cfg: Step1Config):
    """Fit (theta, rbar) to a minimal sample; None for degenerate geometry."""
    A, rhs = build_linear_system(x0, xi, cfg.rotation_only)
    sol = solve_linear(A, rhs, cfg.cond_max)
    if sol is None:
        return None
    return _unpack(sol, cfg.rotation_only)


def _score(cam, theta, rbar, x0, uv_i, mu_px):
    pred, valid = _project(theta, rbar, x0)
    err = np.linalg.norm(camera_to_pixel(cam, pred) - uv_i, axis=-1)
    err = np.where(valid, err, np.inf)
    return err < mu_px, err


def ransac_frame_pair(
    cam: CameraModel,
    uv0: np.ndarray,
    uv_i: np.ndarray,
    cfg: Step1Config,
    rng: np.random.Generator,
) -> RansacResult:
    """Robust fit between the reference frame and one other frame.

    Hypotheses are ranked by (inlier count, inlier RMS); ties keep the
    earliest iteration, so any evaluation order gives the same winner.
    """
    k = uv0.shape[0]
    if k < cfg.sample_size:
        raise InsufficientCorrespondences(
            f"{k} covisible tracks, need at least {cfg.sample_size}"
        )
    x0 = pixel_to_camera(cam, uv0)

    best = None  # (count, rms, mask, iteration)
    iterations_run = 0
    for it in range(cfg.iterations):
        iterations_run = it + 1
        idx = rng.choice(k, size=cfg.sample_size, replace=False)
        fit = solve_sample(x0[idx], pixel_to_camera(cam, uv_i[idx]), cfg)
        if fit is None:
            continue
        mask, err = _score(cam, fit[0], fit[1], x0, uv_i, cfg.mu_px)
        count = int(mask.sum())
        if count == 0:
            continue
        rms = float(np.sqrt(np.mean(err[mask] ** 2)))
        if best is None or count > best[0] or (count == best[0] and rms < best[1]):
            best = (count, rms, mask)
        if cfg.adaptive and best is not None and best[0] > 0:
            frac = best[0] / k
            denom = np.log1p(-min(frac**cfg.sample_size, 1 - 1e-12))
            needed = np.log(max(1.0 - cfg.confidence, 1e-300)) / denom
            if iterations_run >= needed:
                break

    min_inliers = max(cfg.min_inlier_count, int(np.ceil(cfg.min_inlier_fraction * k)))
    if best is None or best[0] < min_inliers:
        got = 0 if best is None else best[0]
        raise RansacFailure(
            f"best hypothesis has {got} inliers, need {min_inliers} of {k}"
        )

    # Refit on the winning consensus, then re-score against the refit model.
    # A minimal-sample hypothesis is exact at its own points but noisier
    # elsewhere, so the returned inlier set belongs to the refined fit. The
    # refit/re-score alternation settles within a couple of passes; the cap
    # keeps it deterministic.
    mask = best[2]
    for _ in range(3):
        A, rhs = build_linear_system(x0[mask], pixel_to_camera(cam, uv_i[mask]),
                                     cfg.rotation_only)
        sol = solve_linear(A, rhs, cfg.cond_max)
        if sol is None:
            raise RansacFailure("inlier refit is degenerate")
        theta, rbar = _unpack(sol, cfg.rotation_only)
        new_mask, err = _score(cam, theta, rbar, x0, uv_i, cfg.mu_px)
        if int(new_mask.sum()) < cfg.sample_size or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if int(mask.sum()) < min_inliers:
        raise RansacFailure(
            f"refit consensus has {int(mask.sum())} inliers, need {min_inliers} of {k}"
        )
    rms = float(np.sqrt(np.mean(err[mask] ** 2)))
    return RansacResult(
        theta=theta,
        rbar=rbar,
        inlier_mask=mask,
        iterations_run=iterations_run,
        best_count=int(mask.sum()),
        inlier_rms_px=rms,
    )


def estimate_all_frames(ft: FeatureTracks, cfg: Step1Config = Step1Config()) -> SmallMotionEstimate:
    """Run RANSAC on the (0, n) pair, then fit every frame on its inliers."""
    n = ft.n_frames - 1
    covis = ft.covisible_indices(0, n)
    if covis.size < cfg.sample_size:
        raise InsufficientCorrespondences(
            f"insufficient covisible tracks: {covis.size} < {cfg.sample_size}"
        )
    uv0 = ft.pixels_at(0, covis)
    uvn = ft.pixels_at(n, covis)
    rng = np.random.default_rng(cfg.rng_seed)
    res = ransac_frame_pair(ft.cam, uv0, uvn, cfg, rng)

    inlier_idx = covis[res.inlier_mask]
    x0 = pixel_to_camera(ft.cam, ft.pixels_at(0, inlier_idx))
    thetas = np.empty((n, 3))
    rbars = np.empty((n, 3))
    rms = np.empty(n)
    for i in range(1, n + 1):
        uv_i = ft.pixels_at(i, inlier_idx)
        A, rhs = build_linear_system(x0, pixel_to_camera(ft.cam, uv_i), cfg.rotation_only)
        sol = solve_linear(A, rhs, cfg.cond_max)
        if sol is None:
            raise Step1Failure(f"per-frame solve degenerate at frame {i}")
        thetas[i - 1], rbars[i - 1] = _unpack(sol, cfg.rotation_only)
        _, err = _score(ft.cam, thetas[i - 1], rbars[i - 1], x0, uv_i, np.inf)
        rms[i - 1] = float(np.sqrt(np.mean(err**2)))

    return SmallMotionEstimate(
        thetas=thetas,
        rbars=rbars,
        inlier_indices=inlier_idx,
        per_frame_rms_px=rms,
        n_covisible=int(covis.size),
        ransac=res,
    )
