"""Point clouds, laser profiles and ASCII PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FrameMismatchError, InvalidArgumentError, PlyParseError
from .geometry import apply

PROFILE_PLANE_TOL = 1e-9


def _points_array(points):
    p = np.asarray(points, dtype=float)
    if p.size == 0:
        p = p.reshape(0, 3)
    if p.ndim != 2 or p.shape[1] != 3:
        raise InvalidArgumentError(f"points must have shape (N, 3), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("points must be finite")
    return p


def _intensity_array(intensity, n):
    if intensity is None:
        return None
    i = np.asarray(intensity, dtype=float).reshape(-1)
    if i.shape != (n,):
        raise InvalidArgumentError(f"intensity must have {n} entries, got {i.shape[0]}")
    if np.any(~np.isfinite(i)) or np.any(i < 0.0) or np.any(i > 1.0):
        raise InvalidArgumentError("intensity values must lie in [0, 1]")
    return i


@dataclass(frozen=True)
class PointCloud:
    """A set of 3D points (mm) tagged with the frame they are expressed in.

    ``intensity`` is either ``None`` or one value in ``[0, 1]`` per point.
    ``normals`` (unit surface normals) are optional and only produced by
    mesh sampling; they are not written to PLY.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None
    frame: str = "B"
    comments: tuple = field(default=(), compare=False)
    normals: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        p = _points_array(self.points)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "intensity", _intensity_array(self.intensity, len(p)))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(p):
                raise InvalidArgumentError("normals must match the number of points")
            object.__setattr__(self, "normals", nrm)
        if not isinstance(self.frame, str) or not self.frame:
            raise InvalidArgumentError("frame label must be a nonempty string")
        object.__setattr__(self, "comments", tuple(self.comments))

    def __len__(self):
        return len(self.points)

    @property
    def has_intensity(self):
        return self.intensity is not None

    def subset(self, mask):
        inten = None if self.intensity is None else self.intensity[mask]
        nrm = None if self.normals is None else self.normals[mask]
        return PointCloud(self.points[mask], inten, self.frame, self.comments, nrm)

    def centroid(self):
        return self.points.mean(axis=0)

    @classmethod
    def empty(cls, frame="B", with_intensity=False):
        return cls(np.zeros((0, 3)), np.zeros(0) if with_intensity else None, frame)


@dataclass(frozen=True)
class LaserProfile:
    """One laser line, in the sensor frame: every point has ``y == 0``."""

    points: np.ndarray
    intensity: np.ndarray | None = None
    sensor_pose_index: int = 0

    def __post_init__(self):
        p = _points_array(self.points)
        if len(p) and np.max(np.abs(p[:, 1])) >= PROFILE_PLANE_TOL:
            raise InvalidArgumentError("profile points must lie in the sensor plane y = 0")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "intensity", _intensity_array(self.intensity, len(p)))

    def __len__(self):
        return len(self.points)

    def as_cloud(self):
        return PointCloud(self.points, self.intensity, "S")


def transform_cloud(H, cloud, new_frame):
    pts = apply(H, cloud.points) if len(cloud) else cloud.points.copy()
    nrm = None if cloud.normals is None else cloud.normals @ H.rotation.T
    return PointCloud(pts, cloud.intensity, new_frame, cloud.comments, nrm)


def merge_clouds(clouds, frame=None):
    """Multiset union of clouds that are already expressed in one frame.

    Intensities survive only if every input carries them.
    """
    clouds = list(clouds)
    if not clouds:
        if frame is None:
            raise InvalidArgumentError("cannot infer frame of an empty merge")
        return PointCloud.empty(frame)
    frames = {c.frame for c in clouds}
    if len(frames) > 1:
        raise FrameMismatchError(f"cannot merge clouds in different frames: {sorted(frames)}")
    pts = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.has_intensity for c in clouds):
        inten = np.concatenate([c.intensity for c in clouds])
    else:
        inten = None
    nrm = None
    if all(c.normals is not None for c in clouds):
        nrm = np.concatenate([c.normals for c in clouds], axis=0)
    return PointCloud(pts, inten, clouds[0].frame, (), nrm)


# --- ASCII PLY ---------------------------------------------------------------

def save_cloud(cloud, path, comments=()):
    """Write ``cloud`` as ASCII PLY with x, y, z, intensity (0 when absent)."""
    path = Path(path)
    n = len(cloud)
    lines = ["ply", "format ascii 1.0", f"comment frame {cloud.frame}"]
    if not cloud.has_intensity:
        lines.append("comment no_intensity")
    for c in tuple(cloud.comments) + tuple(comments):
        lines.append(f"comment {c}")
    lines += [
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
        "end_header",
    ]
    inten = cloud.intensity if cloud.has_intensity else np.zeros(n)
    data = np.column_stack([cloud.points, inten])
    body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in data)
    text = "\n".join(lines) + "\n" + (body + "\n" if n else "")
    path.write_text(text)
    return path


def load_cloud(path):
    """Read an ASCII PLY written by :func:`save_cloud` (or a compatible tool)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("missing 'ply' magic", 1)
    frame = "B"
    no_intensity = False
    comments = []
    n_vertex = None
    props = []
    in_vertex = False
    header_end = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok:
            continue
        key = tok[0]
        if key == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise PlyParseError(f"unsupported format {' '.join(tok[1:])!r}", lineno)
        elif key == "comment":
            if len(tok) >= 3 and tok[1] == "frame":
                frame = tok[2]
            elif tok[1:] == ["no_intensity"]:
                no_intensity = True
            elif len(tok) > 1:
                comments.append(raw.split(None, 1)[1])
        elif key == "element":
            if len(tok) != 3:
                raise PlyParseError("malformed element line", lineno)
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise PlyParseError(f"bad vertex count {tok[2]!r}", lineno) from None
                if n_vertex < 0:
                    raise PlyParseError("negative vertex count", lineno)
        elif key == "property":
            if len(tok) < 3:
                raise PlyParseError("malformed property line", lineno)
            if in_vertex:
                props.append(tok[-1])
        elif key == "end_header":
            header_end = lineno
            break
        else:
            raise PlyParseError(f"unexpected header keyword {key!r}", lineno)
    if header_end is None:
        raise PlyParseError("missing end_header", len(lines))
    if n_vertex is None:
        raise PlyParseError("missing 'element vertex' declaration", header_end)
    for name in ("x", "y", "z"):
        if name not in props:
            raise PlyParseError(f"missing vertex property {name!r}", header_end)

    rows = []
    lineno = header_end
    for raw in lines[header_end:]:
        lineno += 1
        if not raw.strip():
            continue
        if len(rows) == n_vertex:
            break
        tok = raw.split()
        if len(tok) != len(props):
            raise PlyParseError(f"expected {len(props)} values, got {len(tok)}", lineno)
        try:
            rows.append([float(t) for t in tok])
        except ValueError:
            raise PlyParseError(f"non-numeric value in {raw.strip()!r}", lineno) from None
    if len(rows) < n_vertex:
        raise PlyParseError(f"expected {n_vertex} vertex rows, found {len(rows)}", lineno + 1)

    data = np.array(rows, dtype=float).reshape(n_vertex, len(props))
    ix = [props.index(k) for k in ("x", "y", "z")]
    inten = None
    if "intensity" in props and not no_intensity:
        inten = data[:, props.index("intensity")]
    return PointCloud(data[:, ix], inten, frame, tuple(comments))
