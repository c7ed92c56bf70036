"""Simulated robot-mounted laser profile scanner.

The sensor frame S has its laser plane in ``y = 0``; rays leave the sensor
origin line parallel to ``+z`` at evenly spaced ``x`` over the field of view.
The robot scans in stop-and-look mode: the end effector holds one rotation
per trajectory and stops at linearly interpolated positions, where one
profile is captured.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cloud import LaserProfile, load_cloud, save_cloud
from .errors import InvalidArgumentError
from .geometry import RigidTransform, as_rotation, compose, rotation_angle, rotx, roty, rotz
from .targets import GrayImage, TriMesh

# Reference fixture mounting: the sensor looks along -x of the flange.
FIXTURE_HAND_EYE_ROTATION = np.array([[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]])
FIXTURE_HAND_EYE_TRANSLATION = np.array([907.5, 97.0, 40.0])

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class SensorModel:
    fov_width: float = 200.0
    z_near: float = 150.0
    z_far: float = 500.0
    samples_per_profile: int = 200
    sigma_z: float = 0.1
    sigma_x: float = 0.02

    def __post_init__(self):
        if not self.z_near < self.z_far:
            raise InvalidArgumentError("z_near must be smaller than z_far")
        if self.samples_per_profile < 2:
            raise InvalidArgumentError("samples_per_profile must be at least 2")
        if self.sigma_x < 0 or self.sigma_z < 0 or self.fov_width <= 0:
            raise InvalidArgumentError("fov_width must be positive and sigmas non-negative")

    def ray_x(self):
        return np.linspace(-self.fov_width / 2, self.fov_width / 2, self.samples_per_profile)

    def noiseless(self):
        return SensorModel(self.fov_width, self.z_near, self.z_far, self.samples_per_profile, 0.0, 0.0)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScanScene:
    """Ground truth: a target placed at ``target_pose`` (B <- C) and the hand-eye (E <- S)."""

    target: TriMesh | GrayImage
    target_pose: RigidTransform
    hand_eye: RigidTransform
    description: dict = field(default_factory=dict, compare=False)
    _cast: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        mesh = self.target.plane_mesh() if isinstance(self.target, GrayImage) else self.target
        a, b, c = mesh.corners()
        e1, e2 = b - a, c - a
        object.__setattr__(self, "_cast", {"a": a, "e1": e1, "e2": e2, "n": np.cross(e1, e2)})

    @property
    def mesh(self):
        return self.target.plane_mesh() if isinstance(self.target, GrayImage) else self.target


@dataclass(frozen=True)
class Trajectory:
    ee_rotation: np.ndarray
    ee_positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ee_rotation", as_rotation(self.ee_rotation))
        p = np.asarray(self.ee_positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "ee_positions", p)

    def __len__(self):
        return len(self.ee_positions)

    def poses(self):
        return [RigidTransform(self.ee_rotation, p) for p in self.ee_positions]


@dataclass
class DatasetRecord:
    trajectory: Trajectory
    profiles: list

    def ee_poses(self):
        return self.trajectory.poses()


@dataclass
class ScanDataset:
    records: list
    seed: int
    sensor: SensorModel
    scene: ScanScene
    ee_jitter: float = 0.0

    def __len__(self):
        return len(self.records)


def interpolate_trajectory(x_start, x_end, n_steps, ee_rotation):
    """Stop-and-look waypoints ``X_r = X_start + r / N (X_end - X_start)``, ``r = 0..N``."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgumentError("number of steps must be an integer >= 1")
    n = int(n_steps)
    x0 = np.asarray(x_start, dtype=float)
    x1 = np.asarray(x_end, dtype=float)
    r = np.arange(n + 1)[:, None]
    pos = x0 + r / n * (x1 - x0)
    pos[0], pos[-1] = x0, x1
    return Trajectory(ee_rotation, pos)


def _cast_rays(scene, origins, direction):
    """Distance to the first surface hit along ``direction`` (``inf`` on a miss).

    Möller-Trumbore with one shared direction. Rays are binned by their
    coordinates in the plane normal to ``direction`` so each triangle is only
    tested against rays inside its projected bounding box.
    """
    g = scene._cast
    a, e1, e2, n = g["a"], g["e1"], g["e2"], g["n"]
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.eye(3)[int(np.argmin(np.abs(d)))]
    b1 = np.cross(d, helper)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(d, b1)

    origins = np.asarray(origins, dtype=float)
    best = np.full(len(origins), np.inf)
    if not len(origins) or not len(a):
        return best
    r1, r2 = origins @ b1, origins @ b2
    order = np.argsort(r1, kind="stable")
    r1_sorted = r1[order]

    p = np.cross(d, e2)
    q = np.cross(e1, d)
    det = np.einsum("ij,ij->i", e1, p)
    corners = np.stack([a, a + e1, a + e2])            # (3, T, 3)
    c1, c2 = corners @ b1, corners @ b2                # (3, T)
    lo1, hi1 = c1.min(axis=0) - 1e-9, c1.max(axis=0) + 1e-9
    lo2, hi2 = c2.min(axis=0) - 1e-9, c2.max(axis=0) + 1e-9
    eps = 1e-12
    for k in range(len(a)):
        if abs(det[k]) <= _PARALLEL_EPS:
            continue
        i0, i1 = np.searchsorted(r1_sorted, [lo1[k], hi1[k]], side="left")
        if i0 == i1:
            continue
        idx = order[i0:i1]
        idx = idx[(r2[idx] >= lo2[k]) & (r2[idx] <= hi2[k])]
        if not len(idx):
            continue
        w = origins[idx] - a[k]
        inv = 1.0 / det[k]
        # u = w.p / det, v = w.q / det, t = w.n / det
        u = (w @ p[k]) * inv
        v = (w @ q[k]) * inv
        t = (w @ n[k]) * inv
        hit = (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 0)
        if np.any(hit):
            j = idx[hit]
            best[j] = np.minimum(best[j], t[hit])
    return best


def _draw_noise(rng, sensor):
    k = sensor.samples_per_profile
    ex = rng.standard_normal(k) * sensor.sigma_x if sensor.sigma_x > 0 else np.zeros(k)
    ez = rng.standard_normal(k) * sensor.sigma_z if sensor.sigma_z > 0 else np.zeros(k)
    return ex, ez


def _scan(scene, ee_poses, sensor, noise):
    """Cast every ray of every pose in one batch; one profile per pose."""
    to_target = scene.target_pose.inverse()
    xs = sensor.ray_x()
    k = len(xs)
    poses = [compose(to_target, compose(p, scene.hand_eye)) for p in ee_poses]
    if not poses:
        return []
    # poses of one trajectory share a rotation, so group by direction
    profiles = [None] * len(poses)
    groups = {}
    for i, p in enumerate(poses):
        groups.setdefault(p.rotation.tobytes(), []).append(i)
    for idx in groups.values():
        R = poses[idx[0]].rotation
        origins = np.concatenate([poses[i].translation + np.outer(xs, R[:, 0]) for i in idx])
        dist = _cast_rays(scene, origins, R[:, 2])
        # first hit only: a surface closer than z_near occludes whatever lies behind it
        dist[(dist < sensor.z_near) | (dist > sensor.z_far)] = np.inf
        for n, i in enumerate(idx):
            d = dist[n * k:(n + 1) * k]
            o = origins[n * k:(n + 1) * k]
            hit = np.isfinite(d)
            if isinstance(scene.target, GrayImage):
                p_c = o[hit] + d[hit, None] * R[:, 2]
                inten = scene.target.intensity_at(p_c[:, 0], p_c[:, 1])
            else:
                inten = np.ones(int(hit.sum()))
            ex, ez = noise[i]
            pts = np.column_stack([xs[hit] + ex[hit], np.zeros(int(hit.sum())), d[hit] + ez[hit]])
            profiles[i] = LaserProfile(pts, inten, i)
    return profiles


def acquire_profile(scene, ee_pose, sensor, rng=None):
    """Capture one profile with the end effector held at ``ee_pose`` (B <- E).

    Returns points ``(x + eps_x, 0, z + eps_z)`` in the sensor frame for rays
    whose first hit lies in ``[z_near, z_far]``. Noise is drawn for every ray
    (hit or not) so the random stream does not depend on the geometry.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    prof = _scan(scene, [ee_pose], sensor, [_draw_noise(rng, sensor)])[0]
    return LaserProfile(prof.points, prof.intensity, 0)


def profile_rng(seed, record_index, step_index):
    """Independent stream per (dataset seed, trajectory, waypoint)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(record_index), int(step_index)]))


def acquire_dataset(scene, trajectories, sensor, seed=0, ee_jitter=0.0):
    """Scan ``scene`` once per trajectory.

    At every waypoint the robot actually stands at the commanded position plus
    a uniform jitter in ``[-ee_jitter, ee_jitter]`` per axis, while the
    dataset stores the commanded pose, as a real controller would report it.
    Each waypoint draws from its own stream (see :func:`profile_rng`): first
    the jitter, then the per-ray noise.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidArgumentError("at least one trajectory is required")
    records = []
    for i, traj in enumerate(trajectories):
        actual, noise = [], []
        for j, pos in enumerate(traj.ee_positions):
            rng = profile_rng(seed, i, j)
            if ee_jitter > 0:
                pos = pos + rng.uniform(-ee_jitter, ee_jitter, 3)
            actual.append(RigidTransform(traj.ee_rotation, pos))
            noise.append(_draw_noise(rng, sensor))
        records.append(DatasetRecord(traj, _scan(scene, actual, sensor, noise)))
    return ScanDataset(records, int(seed), sensor, scene, float(ee_jitter))


# --- default acquisition plan ------------------------------------------------------

# (yaw, tilt about sensor x, tilt about sensor y) in degrees for each reconstructed cloud
DEFAULT_VIEWS_DEG = [
    (0.0, -12.0, -12.0),
    (40.0, 15.0, 0.0),
    (80.0, -15.0, 10.0),
    (120.0, 10.0, -15.0),
    (160.0, -10.0, 15.0),
    (200.0, 20.0, 5.0),
    (240.0, -20.0, -5.0),
    (280.0, 5.0, 20.0),
    (320.0, -5.0, -20.0),
    (20.0, 12.0, 12.0),
]


def sensor_view_rotation(yaw_deg, tilt_x_deg, tilt_y_deg):
    """Sensor orientation in B looking roughly straight down (-z of B)."""
    return (
        rotz(math.radians(yaw_deg))
        @ rotx(math.pi)
        @ rotx(math.radians(tilt_x_deg))
        @ roty(math.radians(tilt_y_deg))
    )


def plan_trajectories(scene, views_deg=None, standoff=300.0, step_mm=1.0, sweep_length=None):
    """One straight sweep per view, centred on the target and along sensor y.

    The sensor origin travels on a line ``standoff`` mm from the target centre
    against the viewing direction; end-effector positions follow from the
    ground-truth hand-eye.
    """
    views_deg = DEFAULT_VIEWS_DEG if views_deg is None else views_deg
    mesh = scene.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    centre = scene.target_pose.translation + scene.target_pose.rotation @ ((lo + hi) / 2)
    if sweep_length is None:
        sweep_length = float(np.linalg.norm((hi - lo)[:2])) + 20.0
    n = max(1, int(math.ceil(sweep_length / step_mm)))
    R_es, o_es = scene.hand_eye.rotation, scene.hand_eye.translation
    trajs = []
    for yaw, ax, ay in views_deg:
        R_bs = sensor_view_rotation(yaw, ax, ay)
        R_be = R_bs @ R_es.T
        base = centre - standoff * R_bs[:, 2]
        s0 = base - 0.5 * sweep_length * R_bs[:, 1]
        s1 = base + 0.5 * sweep_length * R_bs[:, 1]
        trajs.append(interpolate_trajectory(s0 - R_be @ o_es, s1 - R_be @ o_es, n, R_be))
    return trajs


# --- persistence -------------------------------------------------------------------------

def save_dataset(dataset, directory):
    """Write ``manifest.json`` plus one PLY per profile under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    recs = []
    for i, rec in enumerate(dataset.records):
        files = []
        for j, prof in enumerate(rec.profiles):
            name = f"record_{i:02d}/profile_{j:04d}.ply"
            (directory / name).parent.mkdir(parents=True, exist_ok=True)
            save_cloud(prof.as_cloud(), directory / name, comments=(f"sensor_pose_index {prof.sensor_pose_index}",))
            files.append(name)
        recs.append({
            "ee_rotation": rec.trajectory.ee_rotation.tolist(),
            "ee_poses": [p.to_dict() for p in rec.ee_poses()],
            "profiles": files,
        })
    manifest = {
        "seed": dataset.seed,
        "sensor": dataset.sensor.to_dict(),
        "ee_jitter": dataset.ee_jitter,
        "hand_eye_true": dataset.scene.hand_eye.to_dict(),
        "target_pose_true": dataset.scene.target_pose.to_dict(),
        "target": dataset.scene.description,
        "records": recs,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_dataset(directory, scene=None):
    """Inverse of :func:`save_dataset`.

    The target geometry itself is not stored; pass ``scene`` to attach it,
    otherwise the returned dataset has ``scene=None`` and ground truth is
    available from ``manifest``.
    """
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    records = []
    for rec in manifest["records"]:
        poses = [RigidTransform.from_dict(p) for p in rec["ee_poses"]]
        traj = Trajectory(np.asarray(rec["ee_rotation"]), np.array([p.translation for p in poses]))
        profiles = []
        for j, name in enumerate(rec["profiles"]):
            c = load_cloud(directory / name)
            profiles.append(LaserProfile(c.points, c.intensity, j))
        records.append(DatasetRecord(traj, profiles))
    sensor = SensorModel(**manifest["sensor"])
    ds = ScanDataset(records, manifest["seed"], sensor, scene, manifest.get("ee_jitter", 0.0))
    ds.manifest = manifest
    return ds


def max_rotation_drift(rotations):
    """Largest pairwise angle (rad) between a list of rotations and the first."""
    if len(rotations) < 2:
        return 0.0
    R0 = rotations[0]
    return max(rotation_angle(R0.T @ R) for R in rotations[1:])
