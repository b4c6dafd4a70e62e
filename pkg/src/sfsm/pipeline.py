"""Three-stage pipeline wiring, shared configuration, and solution file I/O.

A single PipelineConfig drives both method variants through identical code
paths and optimizer settings; the baseline differs only in the flags it
forces (rotation-only linear stage with 2-point samples, raw clamped
inverse depth instead of the softplus map, anchored bearings, no reference
priors). Solution files are plain text, deterministic byte-for-byte for
fixed inputs: wall-clock timings deliberately stay out of them and are
reported separately.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateScale,
    InsufficientCorrespondences,
    ParseError,
    RansacFailure,
    Step1Failure,
    Step2Failure,
    Step3Failure,
    ValidationError,
)
from .geometry import Pose, SoftPlusParams, quat_to_rotation, rotation_to_quat
from .optimizer import LmConfig
from .step1 import SmallMotionEstimate, Step1Config, estimate_all_frames
from .step2 import Step2Solution, solve_step2
from .step3 import InitializationSolution, solve_step3
from .tracks import FeatureTracks
from .version import VERSION_STRING

FILE_MAGIC = "SFSM-SOLUTION v1"

VARIANT_ALIASES = {"proposed": "proposed", "ha-baseline": "ha-baseline", "ha": "ha-baseline"}


@dataclass(frozen=True)
class SuccessThresholds:
    """Success gates on the normalized error metrics."""

    max_rms_ate: float = 1.0
    max_rms_are_deg: float = 1.0
    max_rms_depth: float = 2.0

    def __post_init__(self):
        if min(self.max_rms_ate, self.max_rms_are_deg, self.max_rms_depth) <= 0:
            raise ValidationError("success thresholds must be positive")


@dataclass
class PipelineConfig:
    variant: str = "proposed"
    wbar: float = 0.01
    sigma_px: float = 1.0
    step1: Step1Config = field(default_factory=Step1Config)
    softplus: SoftPlusParams = field(default_factory=SoftPlusParams)
    # Small-motion bundle problems are ill conditioned and the damping
    # schedule crawls, so the pipeline ships a larger iteration budget than
    # the solver default. Both variants always share this one config.
    lm: LmConfig = field(default_factory=lambda: LmConfig(max_iterations=500))
    thresholds: SuccessThresholds = field(default_factory=SuccessThresholds)

    def __post_init__(self):
        if self.variant not in VARIANT_ALIASES:
            raise ValidationError(
                f"unknown variant {self.variant!r}, expected one of "
                f"{sorted(set(VARIANT_ALIASES.values()))}"
            )
        if self.wbar <= 0:
            raise ValidationError("wbar must be positive")
        if self.sigma_px <= 0:
            raise ValidationError("sigma_px must be positive")

    @property
    def variant_key(self) -> str:
        """Internal stage selector: 'proposed' or 'ha'."""
        return "ha" if VARIANT_ALIASES[self.variant] == "ha-baseline" else "proposed"

    def resolved(self) -> "PipelineConfig":
        """Canonical variant name with variant-coupled stage-1 flags applied."""
        if self.variant_key == "ha":
            step1 = dataclasses.replace(self.step1, rotation_only=True, sample_size=2)
        else:
            step1 = dataclasses.replace(self.step1, rotation_only=False)
        return dataclasses.replace(self, variant=VARIANT_ALIASES[self.variant], step1=step1)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "wbar": self.wbar,
            "sigma_px": self.sigma_px,
            "step1": dataclasses.asdict(self.step1),
            "softplus": dataclasses.asdict(self.softplus),
            "lm": dataclasses.asdict(self.lm),
            "thresholds": dataclasses.asdict(self.thresholds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        parts = {}
        for key, sub_cls in (
            ("step1", Step1Config),
            ("softplus", SoftPlusParams),
            ("lm", LmConfig),
            ("thresholds", SuccessThresholds),
        ):
            sub = d.pop(key, None)
            if sub is not None:
                known = {f.name for f in dataclasses.fields(sub_cls)}
                bad = set(sub) - known
                if bad:
                    raise ValidationError(f"unknown {key} config keys: {sorted(bad)}")
                parts[key] = sub_cls(**sub)
        known = {"variant", "wbar", "sigma_px"}
        bad = set(d) - known
        if bad:
            raise ValidationError(f"unknown pipeline config keys: {sorted(bad)}")
        try:
            return cls(**d, **parts)
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad pipeline config JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ParseError("pipeline config JSON must be an object")
        return cls.from_dict(d)


@dataclass
class PipelineResult:
    config: PipelineConfig  # resolved
    est: SmallMotionEstimate
    s2: Step2Solution
    sol: InitializationSolution
    timings: dict  # stage name -> seconds

    @property
    def converged(self) -> bool:
        return self.s2.report.converged and self.sol.report.converged


def failure_stage(exc: Exception) -> str:
    """Pipeline stage responsible for an exception, for diagnostics."""
    if isinstance(exc, (InsufficientCorrespondences, RansacFailure, Step1Failure)):
        return "step1"
    if isinstance(exc, Step2Failure):
        return "step2"
    if isinstance(exc, Step3Failure):
        return "step3"
    if isinstance(exc, DegenerateScale):
        return "eval"
    return "pipeline"


def run_pipeline(ft: FeatureTracks, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Linear stage, restricted refinement, then full refinement."""
    cfg = cfg.resolved()
    key = cfg.variant_key
    timings = {}

    t0 = time.perf_counter()
    est = estimate_all_frames(ft, cfg.step1)
    timings["step1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    s2 = solve_step2(ft, est, params=cfg.softplus, wbar=cfg.wbar,
                     sigma_px=cfg.sigma_px, variant=key, lm=cfg.lm)
    timings["step2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sol = solve_step3(ft, est, s2, params=cfg.softplus,
                      sigma_px=cfg.sigma_px, variant=key, lm=cfg.lm)
    timings["step3"] = time.perf_counter() - t0

    return PipelineResult(config=cfg, est=est, s2=s2, sol=sol, timings=timings)


def _fmt(x) -> str:
    return "%.17g" % float(x)


def write_solution(path, result: PipelineResult) -> None:
    """Deterministic text dump of the initialization solution."""
    sol = result.sol
    est = result.est
    lines = [FILE_MAGIC]
    lines.append(f"version {VERSION_STRING}")
    lines.append(f"variant {result.config.variant}")
    lines.append(f"landmark_model {'azel' if sol.variant == 'proposed' else 'inverse_depth'}")
    lines.append(f"frames {len(sol.poses)}")
    lines.append(f"landmarks {sol.track_ids.size}")
    lines.append(f"config {result.config.to_json()}")
    lines.append(
        "diag step1 iterations %d inliers %d covisible %d rms_px %s"
        % (est.ransac.iterations_run, est.inlier_indices.size, est.n_covisible,
           _fmt(est.ransac.inlier_rms_px))
    )
    for name, report in (("step2", result.s2.report), ("step3", sol.report)):
        lines.append(
            "diag %s initial_cost %s final_cost %s iterations %d termination %s"
            % (name, _fmt(report.initial_cost), _fmt(report.final_cost),
               report.iterations, report.termination_reason)
        )
    lines.append(f"diag final_rms_px {_fmt(sol.final_rms_px)}")
    for i, pose in enumerate(sol.poses):
        q = rotation_to_quat(pose.R)
        vals = " ".join(_fmt(v) for v in (*q, *pose.r))
        lines.append(f"pose {i} {vals}")
    for j, tid in enumerate(sol.track_ids):
        params = " ".join(_fmt(v) for v in sol.landmark_params[j])
        xyz = " ".join(_fmt(v) for v in sol.landmark_points[j])
        lines.append(f"landmark {int(tid)} {params} {xyz}")
    if sol.dropped_track_ids.size:
        lines.append("dropped " + " ".join(str(int(t)) for t in sol.dropped_track_ids))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


@dataclass
class SolutionFile:
    """Parsed solution file, close to the on-disk layout."""

    version: str
    variant: str
    landmark_model: str
    poses: list
    track_ids: np.ndarray
    landmark_params: np.ndarray
    landmark_points: np.ndarray
    dropped_track_ids: np.ndarray
    diagnostics: dict
    config: dict


def read_solution(path) -> SolutionFile:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != FILE_MAGIC:
        raise ParseError(f"not a {FILE_MAGIC} file")
    header: dict = {}
    diagnostics: dict = {}
    poses: dict = {}
    landmarks: list = []
    dropped: list = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, _, rest = ln.partition(" ")
        if key in ("version", "variant", "landmark_model", "frames", "landmarks", "config"):
            header[key] = rest
        elif key == "diag":
            name, _, kv = rest.partition(" ")
            toks = kv.split()
            if name in ("step1", "step2", "step3"):
                diagnostics[name] = dict(zip(toks[::2], toks[1::2]))
            else:
                diagnostics[name] = toks[0]
        elif key == "pose":
            toks = rest.split()
            i = int(toks[0])
            q = np.array([float(t) for t in toks[1:5]])
            r = np.array([float(t) for t in toks[5:8]])
            poses[i] = Pose(quat_to_rotation(q), r)
        elif key == "landmark":
            toks = rest.split()
            landmarks.append((int(toks[0]), [float(t) for t in toks[1:]]))
        elif key == "dropped":
            dropped = [int(t) for t in rest.split()]
        else:
            raise ParseError(f"unknown solution file key {key!r}")
    for req in ("version", "variant", "landmark_model", "frames", "landmarks"):
        if req not in header:
            raise ParseError(f"missing solution header field {req!r}")
    n_frames = int(header["frames"])
    if sorted(poses) != list(range(n_frames)):
        raise ParseError("pose rows do not cover the declared frame range")
    if len(landmarks) != int(header["landmarks"]):
        raise ParseError("landmark row count does not match header")
    n_params = 3 if header["landmark_model"] == "azel" else 1
    track_ids = np.array([t for t, _ in landmarks], dtype=int)
    vals = np.array([v for _, v in landmarks], dtype=float).reshape(len(landmarks), n_params + 3)
    return SolutionFile(
        version=header["version"],
        variant=header["variant"],
        landmark_model=header["landmark_model"],
        poses=[poses[i] for i in range(n_frames)],
        track_ids=track_ids,
        landmark_params=vals[:, :n_params],
        landmark_points=vals[:, n_params:],
        dropped_track_ids=np.array(dropped, dtype=int),
        diagnostics=diagnostics,
        config=json.loads(header["config"]) if "config" in header else {},
    )
