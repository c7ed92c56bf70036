"""Reconstruct clouds in the robot base frame from profiles and end-effector poses.

Two modes share one code path:

* ``true_hand_eye`` maps each profile through ``B <- E_j <- S``;
* ``rotation_only`` replaces the hand-eye with ``(R_es, 0)``, i.e. a frame
  oriented like the sensor but centred on the flange. The result is the true
  cloud shifted by ``-R_be @ o_es``, which is what makes the translation
  observable from registration alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, load_cloud, save_cloud
from .errors import AssumptionViolationError, InvalidArgumentError
from .geometry import RigidTransform, apply, as_rotation, compose, rotation_angle

ROTATION_DRIFT_TOL = 1e-6

TRUE_HAND_EYE = "true_hand_eye"
ROTATION_ONLY = "rotation_only"


@dataclass(frozen=True)
class ReconstructedCloud:
    cloud: PointCloud
    ee_rotation: np.ndarray
    mode: str

    def __len__(self):
        return len(self.cloud)


def _common_rotation(ee_poses):
    R0 = ee_poses[0].rotation
    for k, pose in enumerate(ee_poses[1:], start=1):
        drift = rotation_angle(R0.T @ pose.rotation)
        if drift >= ROTATION_DRIFT_TOL:
            raise AssumptionViolationError(
                f"end-effector rotation of pose {k} differs from pose 0 by {drift:.3g} rad; "
                "one reconstructed cloud needs a constant orientation"
            )
    return R0


def _reconstruct(profiles, ee_poses, hand_eye, mode):
    profiles, ee_poses = list(profiles), list(ee_poses)
    if len(profiles) != len(ee_poses):
        raise InvalidArgumentError(f"{len(profiles)} profiles but {len(ee_poses)} poses")
    if not profiles:
        return ReconstructedCloud(PointCloud.empty("B", with_intensity=True), np.eye(3), mode)
    R_be = _common_rotation(ee_poses)
    chunks, inten = [], []
    for prof, pose in zip(profiles, ee_poses):
        if len(prof):
            chunks.append(apply(compose(pose, hand_eye), prof.points))
            inten.append(prof.intensity if prof.intensity is not None else np.ones(len(prof)))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    i = np.concatenate(inten) if inten else np.zeros(0)
    return ReconstructedCloud(PointCloud(pts, i, "B"), R_be, mode)


def reconstruct_true(profiles, ee_poses, hand_eye):
    return _reconstruct(profiles, ee_poses, hand_eye, TRUE_HAND_EYE)


def reconstruct_rotation_only(profiles, ee_poses, hand_eye_rotation):
    """Reconstruct with the flange-centred, sensor-oriented frame (translation unknown)."""
    H = RigidTransform(as_rotation(hand_eye_rotation), np.zeros(3))
    return _reconstruct(profiles, ee_poses, H, ROTATION_ONLY)


def reconstruct_record(record, hand_eye_rotation, hand_eye=None):
    """Convenience wrapper over a :class:`~profilecal.scan_sim.DatasetRecord`."""
    if hand_eye is not None:
        return reconstruct_true(record.profiles, record.ee_poses(), hand_eye)
    return reconstruct_rotation_only(record.profiles, record.ee_poses(), hand_eye_rotation)


def offset_residual(true_cloud, rot_only_cloud, hand_eye_translation):
    """Max deviation from ``Pi = Pi' + R_be @ o_es`` over matching points (mm)."""
    if len(true_cloud) != len(rot_only_cloud):
        raise InvalidArgumentError("clouds must have equal point counts")
    if not len(true_cloud):
        return 0.0
    shift = true_cloud.ee_rotation @ np.asarray(hand_eye_translation, dtype=float)
    d = true_cloud.cloud.points - (rot_only_cloud.cloud.points + shift)
    return float(np.max(np.linalg.norm(d, axis=1)))


def save_reconstruction(recon, path):
    R = " ".join(f"{v:.17g}" for v in recon.ee_rotation.ravel())
    return save_cloud(recon.cloud, path, comments=(f"mode {recon.mode}", f"ee_rotation {R}"))


def load_reconstruction(path):
    """Read a cloud written by :func:`save_reconstruction`."""
    cloud = load_cloud(path)
    mode, R = ROTATION_ONLY, None
    rest = []
    for c in cloud.comments:
        key, _, val = c.partition(" ")
        if key == "mode":
            mode = val.strip()
        elif key == "ee_rotation":
            R = as_rotation(np.array([float(v) for v in val.split()]).reshape(3, 3))
        else:
            rest.append(c)
    if R is None:
        raise InvalidArgumentError(f"{path}: missing 'ee_rotation' comment")
    cloud = PointCloud(cloud.points, cloud.intensity, cloud.frame, tuple(rest))
    return ReconstructedCloud(cloud, R, mode)
