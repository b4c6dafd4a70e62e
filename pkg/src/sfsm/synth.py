"""Synthetic center-pointing inspection scenes with exported ground truth.

The camera rides an arc about the target while its boresight stays aimed
at the target center; the target itself may tumble. Because the pipeline
only observes relative motion, truth is exported in the frozen-target
convention: landmarks are fixed in the reference camera frame and each
camera pose is the relative transform, so the rigid-projection equation
holds exactly between exported poses, exported points, and the noise-free
pixels. Pose 0 is the identity by construction.

Derivation of the exported quantities, with B the frame-0 camera
orientation, A_i the arc rotation, Q_i the tumble rotation, and p0 the
initial camera position (all in the target frame):

    camera sees   y_c = B A_i^T (Q_i y_body - A_i p0)
    reference     y_0 = B y_body + (0, 0, range)
    therefore     y_c = R_i y_0 + r_i
    with          R_i = B A_i^T Q_i B^T,   r_i = (I - R_i) (0, 0, range)
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, ParseError, ValidationError
from .geometry import CameraModel, Pose, exact_rotation, quat_to_rotation, rotation_to_quat
from .tracks import FeatureTracks, Track
from .version import VERSION_STRING

TRUTH_MAGIC = "SFSM-TRUTH v1"
MIN_COVISIBLE = 10

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """Stateless 64-bit mix used to derive per-sequence seeds."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass
class SceneConfig:
    range_m: float = 100.0
    fov_deg: float = 14.9
    n_frames: int = 20
    fps: float = 10.0
    width: int = 1024
    height: int = 1024
    target_extent_m: float = 8.0
    n_landmarks: int = 200
    planar_fraction: float = 0.5
    arc_rate_deg_s: float = 0.4
    tumble_rate_deg_s: float = 0.25
    view_dir: tuple = None  # boresight in the target frame; None samples it
    arc_axis: tuple = None  # camera arc axis; None samples one orthogonal to view_dir
    tumble_axis: tuple = None  # target spin axis; None samples it
    noise_px: float = 0.3
    quantize: bool = True
    outlier_fraction: float = 0.0
    dropout: float = 1.0  # per-frame track survival probability
    rng_seed: int = 0

    def __post_init__(self):
        checks = [
            ("range_m", self.range_m > 0),
            ("fov_deg", 0 < self.fov_deg < 180),
            ("n_frames", self.n_frames >= 2),
            ("fps", self.fps > 0),
            ("width", self.width > 0),
            ("height", self.height > 0),
            ("target_extent_m", 0 < self.target_extent_m < self.range_m),
            ("n_landmarks", self.n_landmarks >= 1),
            ("planar_fraction", 0 <= self.planar_fraction <= 1),
            ("arc_rate_deg_s", self.arc_rate_deg_s >= 0),
            ("tumble_rate_deg_s", self.tumble_rate_deg_s >= 0),
            ("noise_px", self.noise_px >= 0),
            ("outlier_fraction", 0 <= self.outlier_fraction <= 1),
            ("dropout", 0 <= self.dropout <= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ValidationError(f"invalid scene config field {name!r}")
        for name in ("view_dir", "arc_axis", "tumble_axis"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in v)
                if len(v) != 3 or not np.all(np.isfinite(v)) or np.linalg.norm(v) < 1e-12:
                    raise ValidationError(f"invalid scene config field {name!r}")
                object.__setattr__(self, name, v)

    def camera(self) -> CameraModel:
        fx = (self.width / 2.0) / np.tan(np.radians(self.fov_deg) / 2.0)
        return CameraModel(fx=fx, fy=fx, cx=self.width / 2.0, cy=self.height / 2.0,
                           width=self.width, height=self.height)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("view_dir", "arc_axis", "tumble_axis"):
            if d[name] is not None:
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValidationError(f"unknown scene config keys: {sorted(bad)}")
        for name in ("view_dir", "arc_axis", "tumble_axis"):
            if d.get(name) is not None:
                d[name] = tuple(d[name])
        return cls(**d)


@dataclass
class SceneTruth:
    poses: list  # Pose, frame 0 identity, frozen-target relative motion
    landmarks: np.ndarray  # (m, 3) reference-camera-frame positions, all ids
    track_ids: np.ndarray  # (m,)
    outlier_ids: np.ndarray  # ids whose tracks are mismatched garbage
    parallax_deg: float
    config: SceneConfig
    seed: int


def _unit(v):
    return np.asarray(v, dtype=float) / np.linalg.norm(v)


def _sample_unit(rng):
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _perp_unit(v, rng):
    while True:
        w = _sample_unit(rng)
        w = w - np.dot(w, v) * v
        n = np.linalg.norm(w)
        if n > 1e-6:
            return w / n


def _look_at(d):
    """World-to-camera rotation with +z boresight along d."""
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, d)) > 0.9:
        up = np.array([1.0, 0.0, 0.0])
    x = _unit(np.cross(up, d))
    y = np.cross(d, x)
    return np.stack([x, y, d])


def _landmark_cloud(cfg: SceneConfig, rng) -> np.ndarray:
    """Body-frame landmarks: a dominant plane plus a volumetric remainder."""
    m = cfg.n_landmarks
    n_plane = int(round(cfg.planar_fraction * m))
    e = cfg.target_extent_m
    pts = np.empty((m, 3))
    normal = _sample_unit(rng)
    u = _perp_unit(normal, rng)
    v = np.cross(normal, u)
    radius = e * np.sqrt(rng.uniform(size=n_plane))
    ang = rng.uniform(0, 2 * np.pi, size=n_plane)
    pts[:n_plane] = radius[:, None] * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)
    n_ball = m - n_plane
    dirs = np.stack([_sample_unit(rng) for _ in range(n_ball)]) if n_ball else np.empty((0, 3))
    pts[n_plane:] = dirs * (e * rng.uniform(size=n_ball) ** (1.0 / 3.0))[:, None]
    pts -= pts.mean(axis=0)
    top = np.linalg.norm(pts, axis=1).max()
    if top > e:
        pts *= e / top
    return pts


def generate_scene(cfg: SceneConfig):
    """Returns (FeatureTracks, SceneTruth), fully determined by cfg.rng_seed."""
    rng = np.random.default_rng(cfg.rng_seed)
    cam = cfg.camera()
    n = cfg.n_frames - 1
    m = cfg.n_landmarks

    d = _unit(cfg.view_dir) if cfg.view_dir is not None else _sample_unit(rng)
    arc_axis = _unit(cfg.arc_axis) if cfg.arc_axis is not None else _perp_unit(d, rng)
    tumble_axis = _unit(cfg.tumble_axis) if cfg.tumble_axis is not None else _sample_unit(rng)
    y_body = _landmark_cloud(cfg, rng)

    p0 = -cfg.range_m * d
    B = _look_at(d)
    boresight = np.array([0.0, 0.0, cfg.range_m])
    y0 = y_body @ B.T + boresight

    arc_rate = np.radians(cfg.arc_rate_deg_s)
    tumble_rate = np.radians(cfg.tumble_rate_deg_s)
    poses = []
    pix = np.empty((cfg.n_frames, m, 2))
    rel_positions = np.empty((cfg.n_frames, 3))
    for i in range(cfg.n_frames):
        t = i / cfg.fps
        A = exact_rotation(arc_axis * arc_rate * t)
        Q = exact_rotation(tumble_axis * tumble_rate * t)
        R = B @ A.T @ Q @ B.T
        r = (np.eye(3) - R) @ boresight
        poses.append(Pose(R, r))
        y_c = (Q @ y_body.T - (A @ p0)[:, None]).T @ (B @ A.T).T
        z = y_c[:, 2]
        if np.any(z <= 0):
            raise GenerationError(f"landmark behind the camera at frame {i}")
        pix[i, :, 0] = cam.fx * y_c[:, 0] / z + cam.cx
        pix[i, :, 1] = cam.fy * y_c[:, 1] / z + cam.cy
        rel_positions[i] = Q.T @ A @ p0
    poses[0] = Pose.identity()

    cosang = rel_positions @ rel_positions[0] / cfg.range_m**2
    parallax_deg = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)).max()))

    if cfg.noise_px > 0:
        pix += rng.normal(0.0, cfg.noise_px, size=pix.shape)

    n_out = int(round(cfg.outlier_fraction * m))
    outlier_ids = np.sort(rng.choice(m, size=n_out, replace=False)) if n_out else np.empty(0, dtype=int)
    for j in outlier_ids:
        pix[:, j, 0] = rng.uniform(0.0, cam.width, size=cfg.n_frames)
        pix[:, j, 1] = rng.uniform(0.0, cam.height, size=cfg.n_frames)

    if cfg.quantize:
        pix = np.round(pix)

    lengths = np.full(m, cfg.n_frames, dtype=int)
    if cfg.dropout < 1.0:
        alive = rng.uniform(size=(cfg.n_frames - 1, m)) < cfg.dropout
        for j in range(m):
            dead = np.flatnonzero(~alive[:, j])
            if dead.size:
                lengths[j] = dead[0] + 1
    in_bounds = (
        (pix[..., 0] >= 0) & (pix[..., 0] <= cam.width)
        & (pix[..., 1] >= 0) & (pix[..., 1] <= cam.height)
    )
    for j in range(m):
        oob = np.flatnonzero(~in_bounds[:, j])
        if oob.size:
            lengths[j] = min(lengths[j], oob[0])

    tracks = [
        Track(track_id=j, uv=pix[: lengths[j], j].copy())
        for j in range(m)
        if lengths[j] >= 2
    ]
    if sum(1 for tr in tracks if tr.uv.shape[0] == cfg.n_frames) < MIN_COVISIBLE:
        raise GenerationError(
            f"fewer than {MIN_COVISIBLE} tracks covisible in frames 0 and {n}"
        )
    ft = FeatureTracks(cam=cam, n_frames=cfg.n_frames, tracks=tracks,
                       provenance=VERSION_STRING, seed=cfg.rng_seed)
    truth = SceneTruth(
        poses=poses,
        landmarks=y0,
        track_ids=np.arange(m),
        outlier_ids=outlier_ids,
        parallax_deg=parallax_deg,
        config=cfg,
        seed=cfg.rng_seed,
    )
    return ft, truth


def generate_benchmark_set(base_cfg: SceneConfig, n_sequences: int, master_seed: int):
    """Independent scenes with per-sequence seeds splitmix64(master ^ i)."""
    if n_sequences < 1:
        raise ValidationError("n_sequences must be at least 1")
    out = []
    for i in range(n_sequences):
        seed = splitmix64((int(master_seed) & MASK64) ^ i)
        cfg = dataclasses.replace(base_cfg, rng_seed=seed)
        try:
            out.append(generate_scene(cfg))
        except GenerationError as exc:
            raise GenerationError(f"sequence {i} (seed {seed}): {exc}") from exc
    return out


def _fmt(x) -> str:
    return "%.17g" % float(x)


def write_truth(path, truth: SceneTruth) -> None:
    lines = [TRUTH_MAGIC]
    lines.append(f"version {VERSION_STRING}")
    lines.append(f"seed {truth.seed}")
    lines.append(f"parallax_deg {_fmt(truth.parallax_deg)}")
    lines.append("config " + json.dumps(truth.config.to_dict(), sort_keys=True,
                                        separators=(",", ":")))
    lines.append(f"frames {len(truth.poses)}")
    lines.append(f"landmarks {truth.track_ids.size}")
    for i, pose in enumerate(truth.poses):
        q = rotation_to_quat(pose.R)
        lines.append(f"pose {i} " + " ".join(_fmt(v) for v in (*q, *pose.r)))
    for tid, y in zip(truth.track_ids, truth.landmarks):
        lines.append(f"point {int(tid)} " + " ".join(_fmt(v) for v in y))
    if truth.outlier_ids.size:
        lines.append("outliers " + " ".join(str(int(t)) for t in truth.outlier_ids))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_truth(path) -> SceneTruth:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != TRUTH_MAGIC:
        raise ParseError(f"not a {TRUTH_MAGIC} file")
    header: dict = {}
    poses: dict = {}
    points: list = []
    outliers: list = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, _, rest = ln.partition(" ")
        if key in ("version", "seed", "parallax_deg", "config", "frames", "landmarks"):
            header[key] = rest
        elif key == "pose":
            toks = rest.split()
            q = np.array([float(t) for t in toks[1:5]])
            poses[int(toks[0])] = Pose(quat_to_rotation(q), np.array([float(t) for t in toks[5:8]]))
        elif key == "point":
            toks = rest.split()
            points.append((int(toks[0]), [float(t) for t in toks[1:4]]))
        elif key == "outliers":
            outliers = [int(t) for t in rest.split()]
        else:
            raise ParseError(f"unknown truth file key {key!r}")
    for req in ("seed", "config", "frames", "landmarks", "parallax_deg"):
        if req not in header:
            raise ParseError(f"missing truth header field {req!r}")
    n_frames = int(header["frames"])
    if sorted(poses) != list(range(n_frames)):
        raise ParseError("pose rows do not cover the declared frame range")
    if len(points) != int(header["landmarks"]):
        raise ParseError("point row count does not match header")
    try:
        cfg = SceneConfig.from_dict(json.loads(header["config"]))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad embedded scene config: {exc}") from exc
    return SceneTruth(
        poses=[poses[i] for i in range(n_frames)],
        landmarks=np.array([p for _, p in points], dtype=float),
        track_ids=np.array([t for t, _ in points], dtype=int),
        outlier_ids=np.array(outliers, dtype=int),
        parallax_deg=float(header["parallax_deg"]),
        config=cfg,
        seed=int(header["seed"]),
    )
