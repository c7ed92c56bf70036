"""Rotations, rigid transforms and rotation-axis extraction.

Rotations are plain ``(3, 3)`` float arrays and points are ``(3,)`` or
``(N, 3)`` arrays. :class:`RigidTransform` bundles a rotation and a
translation and behaves like the 4x4 homogeneous matrix it represents.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotationError, InvalidArgumentError

ANGLE_EPS = 1e-8
ORTHO_TOL = 1e-9
UNIT_TOL = 1e-12


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def hat(w):
    """Skew-symmetric matrix such that ``hat(w) @ v == cross(w, v)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormality_residual(R):
    R = np.asarray(R, dtype=float)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def nearest_rotation(M):
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return orthonormality_residual(R) <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def as_rotation(R):
    """Validate ``R`` as a rotation, re-projecting tiny orthonormality drift."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidArgumentError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    if orthonormality_residual(R) > ORTHO_TOL:
        if orthonormality_residual(R) > 1e-3 or np.linalg.det(R) <= 0:
            raise InvalidArgumentError("matrix is not a rotation")
        R = nearest_rotation(R)
    if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise InvalidArgumentError("rotation must have determinant +1")
    return R


def unit_axis(axis):
    a = np.asarray(axis, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)) or abs(np.linalg.norm(a) - 1.0) > UNIT_TOL:
        raise InvalidArgumentError(f"axis must be unit norm, got |a| = {np.linalg.norm(a)!r}")
    return a


def normalize(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidArgumentError("cannot normalize a zero vector")
    return v / n


def rot_from_axis_angle(axis, angle):
    """Rodrigues' formula for a rotation of ``angle`` radians about a unit ``axis``."""
    a = unit_axis(axis)
    K = hat(a)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotx(angle):
    return rot_from_axis_angle([1.0, 0.0, 0.0], angle)


def roty(angle):
    return rot_from_axis_angle([0.0, 1.0, 0.0], angle)


def rotz(angle):
    return rot_from_axis_angle([0.0, 0.0, 1.0], angle)


def _canonical_sign(a):
    for c in a:
        if abs(c) > 1e-12:
            return a if c > 0 else -a
    return a


def axis_of(R, angle_eps=ANGLE_EPS):
    """Return ``(axis, angle)`` of a rotation, with ``angle`` in ``(0, pi]``.

    Raises :class:`DegenerateRotationError` when the angle is at most
    ``angle_eps``, since the axis of the identity is undefined. At a half
    turn the axis sign is canonicalized so that its first nonzero component
    is positive.
    """
    R = as_rotation(R)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w) / 2.0
    angle = math.atan2(s, c)
    if angle <= angle_eps:
        raise DegenerateRotationError(f"rotation angle {angle:.3g} rad is too small to define an axis")
    if angle < math.pi / 2:
        axis = w / (2.0 * s)
    else:
        # sin(angle) loses precision near pi; read the axis off (R + I) / 2 = a a^T (+ sin term)
        B = (R + R.T) / 2.0 - c * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(B[k, k])
        if s > 1e-12:
            if np.dot(axis, w) < 0:
                axis = -axis
        else:
            axis = _canonical_sign(axis)
        axis = axis / np.linalg.norm(axis)
    if math.pi - angle <= 1e-12:
        axis = _canonical_sign(axis)
    return axis, angle


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(np.linalg.norm(w) / 2.0, c)


def rotation_exp(w):
    """Rotation matrix of the rotation vector ``w`` (axis times angle)."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    if th < 1e-12:
        return np.eye(3) + hat(w)
    return rot_from_axis_angle(w / th, th)


def rotation_log(R):
    """Rotation vector (axis times angle); zero for the identity."""
    angle = rotation_angle(R)
    if angle <= ANGLE_EPS:
        R = np.asarray(R, dtype=float)
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    axis, angle = axis_of(R)
    return axis * angle


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion ``p -> R p + t``; a 4x4 homogeneous matrix in disguise."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _freeze(as_rotation(self.rotation)))
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, H):
        H = np.asarray(H, dtype=float)
        if H.shape != (4, 4) or not np.allclose(H[3], [0, 0, 0, 1]):
            raise InvalidArgumentError("expected a 4x4 homogeneous matrix")
        return cls(H[:3, :3], H[:3, 3])

    @classmethod
    def from_translation(cls, x, y=None, z=None):
        t = [x, y, z] if y is not None else x
        return cls(np.eye(3), t)

    def matrix(self):
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return compose(self, other)
        return apply(self, other)

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        R = np.asarray(d["rotation"], dtype=float)
        if R.size != 9:
            raise InvalidArgumentError("rotation must have 9 entries")
        return cls(R.reshape(3, 3), d["translation"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def almost_equal(self, other, rtol_rot=1e-9, atol_trans=1e-9):
        return (
            np.max(np.abs(self.rotation - other.rotation)) <= rtol_rot
            and np.max(np.abs(self.translation - other.translation)) <= atol_trans
        )


def translate(x, y, z):
    return RigidTransform(np.eye(3), [x, y, z])


def compose(H1, H2):
    """``H1 @ H2``: first apply ``H2``, then ``H1``."""
    R = H1.rotation @ H2.rotation
    t = H1.rotation @ H2.translation + H1.translation
    return RigidTransform(R, t)


def invert(H):
    return H.inverse()


def apply(H, p):
    """Apply ``H`` to a point ``(3,)`` or to a stack of points ``(N, 3)``."""
    p = np.asarray(p, dtype=float)
    return p @ H.rotation.T + H.translation


def transform_delta(H1, H2):
    """Rotation angle (rad) and translation distance between two transforms."""
    dR = H1.rotation.T @ H2.rotation
    return rotation_angle(dR), float(np.linalg.norm(H1.translation - H2.translation))
