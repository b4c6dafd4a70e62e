"""Feature track container and its line-oriented text format.

File layout::

    SFSM-TRACKS v1
    camera <fx> <fy> <cx> <cy> <width> <height>
    frames <n_frames>
    tracks <m>
    track <id>
    <frame_idx> <u> <v>
    ...

Optional header keys ``provenance <free text>`` and ``seed <int>`` may
appear between ``camera`` and the first ``track`` line; anything else is a
ParseError. Floats are written with 17 significant digits so a write/read
cycle is bit-exact.

Tracks are gap-free by contract: every track starts at frame 0 and covers a
contiguous prefix of frames. Front ends that tolerate gaps must split such
tracks before export. The minimum-covisibility requirement (at least 3
tracks observed in both the reference and the last frame) is a pipeline
precondition checked at stage entry, not here, so that a thin file still
parses and the run fails with a pipeline error code rather than an I/O one.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CameraModel

FILE_MAGIC = "SFSM-TRACKS v1"
_HEADER_KEYS = ("camera", "frames", "tracks", "provenance", "seed")


@dataclass
class Track:
    """Observations of one landmark over frames 0..len(uv)-1."""

    track_id: int
    uv: np.ndarray  # (n_obs, 2) pixels, row k observed at frame k

    @property
    def n_obs(self) -> int:
        return self.uv.shape[0]

    @property
    def last_frame(self) -> int:
        return self.uv.shape[0] - 1

    def __eq__(self, other):
        return (
            isinstance(other, Track)
            and self.track_id == other.track_id
            and self.uv.shape == other.uv.shape
            and bool(np.all(self.uv == other.uv))
        )


@dataclass
class FeatureTracks:
    """A tracked sequence: camera, frame count and per-landmark tracks."""

    cam: CameraModel
    n_frames: int
    tracks: list[Track] = field(default_factory=list)
    provenance: str | None = None
    seed: int | None = None

    @property
    def m(self) -> int:
        return len(self.tracks)

    def covisible_indices(self, frame_a: int, frame_b: int) -> np.ndarray:
        """Indices of tracks observed in both frames."""
        last = max(frame_a, frame_b)
        return np.array(
            [k for k, t in enumerate(self.tracks) if t.last_frame >= last], dtype=int
        )

    def covisible_subset(self, frame_a: int, frame_b: int) -> "FeatureTracks":
        keep = self.covisible_indices(frame_a, frame_b)
        return FeatureTracks(
            cam=self.cam,
            n_frames=self.n_frames,
            tracks=[self.tracks[k] for k in keep],
            provenance=self.provenance,
            seed=self.seed,
        )

    def pixels_at(self, frame: int, indices=None) -> np.ndarray:
        """(k, 2) pixel array for the given tracks at one frame."""
        if indices is None:
            indices = range(self.m)
        return np.array([self.tracks[k].uv[frame] for k in indices], dtype=float)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureTracks)
            and self.cam == other.cam
            and self.n_frames == other.n_frames
            and self.provenance == other.provenance
            and self.seed == other.seed
            and self.tracks == other.tracks
        )


def validate_tracks(ft: FeatureTracks) -> None:
    """Check structural invariants; raises ValidationError."""
    if ft.n_frames < 2:
        raise ValidationError(f"need at least 2 frames, got {ft.n_frames}")
    if ft.m == 0:
        raise ValidationError("track list is empty")
    seen = set()
    for t in ft.tracks:
        if t.track_id in seen:
            raise ValidationError(f"duplicate track id {t.track_id}")
        seen.add(t.track_id)
        if t.uv.ndim != 2 or t.uv.shape[1] != 2:
            raise ValidationError(f"track {t.track_id}: bad observation array shape {t.uv.shape}")
        if t.n_obs < 1:
            raise ValidationError(f"track {t.track_id} has no observations")
        if t.n_obs > ft.n_frames:
            raise ValidationError(
                f"track {t.track_id} has {t.n_obs} observations for {ft.n_frames} frames"
            )
        if not np.all(np.isfinite(t.uv)):
            raise ValidationError(f"track {t.track_id} has non-finite pixels")
        u, v = t.uv[:, 0], t.uv[:, 1]
        if np.any(u < 0) or np.any(u > ft.cam.width) or np.any(v < 0) or np.any(v > ft.cam.height):
            raise ValidationError(f"track {t.track_id} leaves the image bounds")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_tracks(ft: FeatureTracks, path) -> None:
    """Serialize to the text format; deterministic byte-for-byte."""
    validate_tracks(ft)
    buf = io.StringIO()
    buf.write(FILE_MAGIC + "\n")
    c = ft.cam
    buf.write(
        f"camera {_fmt(c.fx)} {_fmt(c.fy)} {_fmt(c.cx)} {_fmt(c.cy)} {c.width} {c.height}\n"
    )
    buf.write(f"frames {ft.n_frames}\n")
    buf.write(f"tracks {ft.m}\n")
    if ft.provenance is not None:
        buf.write(f"provenance {ft.provenance}\n")
    if ft.seed is not None:
        buf.write(f"seed {ft.seed}\n")
    for t in ft.tracks:
        buf.write(f"track {t.track_id}\n")
        for frame, (u, v) in enumerate(t.uv):
            buf.write(f"{frame} {_fmt(u)} {_fmt(v)}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_tracks(path) -> FeatureTracks:
    """Parse and validate a track file."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != FILE_MAGIC:
        raise ParseError(f"bad magic line, expected '{FILE_MAGIC}'")

    header: dict = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "track":
            break
        key = parts[0]
        if key not in _HEADER_KEYS:
            raise ParseError(f"unknown header key '{key}' on line {i + 1}")
        if key in header:
            raise ParseError(f"duplicate header key '{key}'")
        try:
            if key == "camera":
                if len(parts) != 7:
                    raise ValueError("camera line needs 6 values")
                header["camera"] = CameraModel(
                    fx=float(parts[1]),
                    fy=float(parts[2]),
                    cx=float(parts[3]),
                    cy=float(parts[4]),
                    width=int(parts[5]),
                    height=int(parts[6]),
                )
            elif key in ("frames", "tracks", "seed"):
                header[key] = int(parts[1])
            else:  # provenance: rest of line verbatim
                header[key] = lines[i].split(" ", 1)[1] if " " in lines[i] else ""
        except (ValueError, IndexError) as exc:
            raise ParseError(f"malformed header line {i + 1}: {lines[i]!r}") from exc
        i += 1

    for required in ("camera", "frames", "tracks"):
        if required not in header:
            raise ParseError(f"missing header key '{required}'")

    tracks: list[Track] = []
    current_id = None
    current_obs: list = []

    def flush():
        if current_id is None:
            return
        if not current_obs:
            raise ParseError(f"track {current_id} has no observation lines")
        frames = [f for f, _, _ in current_obs]
        if frames[0] != 0:
            raise ValidationError(f"track {current_id} does not start at frame 0")
        if frames != list(range(len(frames))):
            raise ValidationError(f"track {current_id} has gaps or unordered frames")
        uv = np.array([[u, v] for _, u, v in current_obs], dtype=float)
        tracks.append(Track(track_id=current_id, uv=uv))

    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "track":
            flush()
            try:
                current_id = int(parts[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"malformed track line {i + 1}: {lines[i]!r}") from exc
            current_obs = []
        else:
            if current_id is None:
                raise ParseError(f"observation before any track header at line {i + 1}")
            if len(parts) != 3:
                raise ParseError(f"malformed observation line {i + 1}: {lines[i]!r}")
            try:
                current_obs.append((int(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise ParseError(f"malformed observation line {i + 1}: {lines[i]!r}") from exc
        i += 1
    flush()

    if len(tracks) != header["tracks"]:
        raise ParseError(f"header declares {header['tracks']} tracks, body has {len(tracks)}")

    ft = FeatureTracks(
        cam=header["camera"],
        n_frames=header["frames"],
        tracks=tracks,
        provenance=header.get("provenance"),
        seed=header.get("seed"),
    )
    validate_tracks(ft)
    return ft
