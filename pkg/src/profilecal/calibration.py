"""Least-squares hand-eye translation and its observability analysis.

Each reconstructed cloud ``i`` contributes the relation

    o_C = o_C'_i + R_be_i @ o_es

between the true target origin ``o_C`` (base frame), the origin ``o_C'_i``
registered in the rotation-only cloud and the constant flange rotation
``R_be_i`` of that cloud. Stacking the clouds gives ``A x = b`` with block
rows ``[I | -R_be_i]``, ``x = [o_C; o_es]`` and ``b_i = o_C'_i``.

``A`` has six columns but each block has rank three and shares the identity
block, so one cloud fixes only three directions and two clouds leave the
common rotation axis unobservable. Three clouds whose relative rotation axes
are not parallel make ``A`` full column rank.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import DegenerateRotationError, InvalidArgumentError, RankConditionError, SingularSystemError
from .geometry import as_rotation, axis_of

OK = "ok"
TOO_FEW_CLOUDS = "too_few_clouds"
IDENTICAL_ROTATIONS = "identical_rotations"
PARALLEL_AXES = "parallel_axes"
NEAR_SINGULAR = "near_singular"

RANK_TOL = 1e-9
AXIS_PARALLEL_TOL = 1e-3
IDENTICAL_TOL = 1e-9
CONDITION_WARN = 1e6


@dataclass(frozen=True)
class CalibObservation:
    """Registered target origin of one rotation-only cloud and its flange rotation."""

    registered_origin: np.ndarray
    ee_rotation: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.registered_origin, dtype=float).reshape(-1)
        if o.shape != (3,) or not np.all(np.isfinite(o)):
            raise InvalidArgumentError("registered_origin must be a finite 3-vector")
        object.__setattr__(self, "registered_origin", o)
        object.__setattr__(self, "ee_rotation", as_rotation(self.ee_rotation))


@dataclass(frozen=True)
class CalibSystem:
    A: np.ndarray
    b: np.ndarray
    rotations: tuple

    @property
    def m(self):
        return len(self.rotations)


@dataclass(frozen=True)
class RankDiagnosis:
    """Observability verdict for a set of flange rotations.

    ``min_relative_axis_angle`` and ``max_relative_axis_angle`` are the
    smallest and largest angles (rad, as undirected lines) between the axes
    of ``R_1^T R_i``, ``i >= 2``; both are ``nan`` when fewer than two such
    axes exist. ``condition_number`` is that of ``A``. The verdict is ``ok``
    exactly when ``numeric_rank == 6``.
    """

    verdict: str
    min_relative_axis_angle: float
    numeric_rank: int
    max_relative_axis_angle: float = math.nan
    condition_number: float = math.inf
    message: str = ""

    @property
    def ok(self):
        return self.verdict == OK

    @property
    def ill_conditioned(self):
        return self.condition_number > CONDITION_WARN

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "numeric_rank": self.numeric_rank,
            "min_relative_axis_angle": _json_float(self.min_relative_axis_angle),
            "max_relative_axis_angle": _json_float(self.max_relative_axis_angle),
            "condition_number": _json_float(self.condition_number),
            "message": self.message,
        }


@dataclass
class CalibResult:
    hand_eye_translation: np.ndarray
    target_origin: np.ndarray
    residual_norm: float
    per_observation_residuals: list
    condition_number: float
    diagnosis: RankDiagnosis | None = field(default=None, repr=False)

    def errors(self, truth):
        """Signed per-axis error of the hand-eye translation against ``truth``."""
        return self.hand_eye_translation - np.asarray(truth, dtype=float)

    def to_dict(self):
        d = {
            "hand_eye_translation": self.hand_eye_translation.tolist(),
            "target_origin": self.target_origin.tolist(),
            "residual_norm": self.residual_norm,
            "per_observation_residuals": list(self.per_observation_residuals),
            "condition_number": _json_float(self.condition_number),
        }
        if self.diagnosis is not None:
            d["diagnosis"] = self.diagnosis.to_dict()
        return d

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def report(self, truth=None):
        """Plain-text summary; per-axis deltas are added when ``truth`` is known."""
        x, y, z = self.hand_eye_translation
        lines = [
            f"hand-eye translation  x={x:.4f}  y={y:.4f}  z={z:.4f}  mm",
            "target origin        " + "  ".join(f"{v:.4f}" for v in self.target_origin) + "  mm",
            f"residual norm        {self.residual_norm:.6g} mm",
            f"condition number     {self.condition_number:.6g}",
        ]
        if truth is not None:
            dx, dy, dz = np.abs(self.errors(truth))
            lines.append(f"|error|              dx={dx:.4f}  dy={dy:.4f}  dz={dz:.4f}  mm")
        return "\n".join(lines)


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _as_observations(obs):
    out = []
    for o in obs:
        if isinstance(o, CalibObservation):
            out.append(o)
        else:
            origin, R = o
            out.append(CalibObservation(origin, R))
    return out


def build_system(observations):
    """Stack ``[I | -R_be_i] x = o_C'_i`` for every observation."""
    obs = _as_observations(observations)
    if not obs:
        raise InvalidArgumentError("at least one observation is required")
    m = len(obs)
    A = np.zeros((3 * m, 6))
    b = np.zeros(3 * m)
    for i, o in enumerate(obs):
        A[3 * i:3 * i + 3, :3] = np.eye(3)
        A[3 * i:3 * i + 3, 3:] = -o.ee_rotation
        b[3 * i:3 * i + 3] = o.registered_origin
    return CalibSystem(A, b, tuple(o.ee_rotation for o in obs))


def _system_for(rotations):
    return build_system([CalibObservation(np.zeros(3), R) for R in rotations])


def _numeric_rank(A, rank_tol=RANK_TOL):
    s = np.linalg.svd(A, compute_uv=False)
    if not len(s) or s[0] == 0:
        return 0, math.inf
    rank = int(np.sum(s > rank_tol * s[0]))
    cond = s[0] / s[-1] if len(s) == A.shape[1] and s[-1] > 0 else math.inf
    return rank, float(cond)


def relative_axes(rotations):
    """Axes of ``R_1^T R_i`` for ``i >= 2``; raises for a near-identity relative rotation."""
    R1 = rotations[0]
    return [axis_of(R1.T @ R)[0] for R in rotations[1:]]


def _line_angle(a, b):
    return math.acos(min(1.0, abs(float(np.dot(a, b)))))


def check_rank_conditions(rotations, axis_parallel_tol=AXIS_PARALLEL_TOL, rank_tol=RANK_TOL):
    """Classify a set of flange rotations by the observability of the hand-eye translation.

    Checks, in order: fewer than three clouds, a pair of identical rotations
    (within 1e-9), and relative axes (rotation 1 as reference) that are all
    parallel within ``axis_parallel_tol``. The numeric rank of ``A`` counts
    singular values above ``rank_tol * sigma_max``. A rank short of six that
    none of the structural checks explains is reported as ``near_singular``.
    """
    rotations = [as_rotation(R) for R in rotations]
    m = len(rotations)
    if m == 0:
        return RankDiagnosis(TOO_FEW_CLOUDS, math.nan, 0, message="no rotations given")
    rank, cond = _numeric_rank(_system_for(rotations).A, rank_tol)

    identical = any(
        np.max(np.abs(Ri - Rj)) <= IDENTICAL_TOL for Ri, Rj in itertools.combinations(rotations, 2)
    )
    angles = []
    if not identical and m >= 3:
        axes = relative_axes(rotations)
        angles = [_line_angle(a, b) for a, b in itertools.combinations(axes, 2)]
    lo = min(angles) if angles else math.nan
    hi = max(angles) if angles else math.nan

    if m < 3:
        verdict, msg = TOO_FEW_CLOUDS, f"{m} cloud(s) given; at least 3 with distinct rotations are needed"
    elif identical:
        verdict, msg = IDENTICAL_ROTATIONS, "two clouds share the same end-effector rotation"
    elif hi <= axis_parallel_tol:
        verdict, msg = PARALLEL_AXES, (
            f"relative rotation axes are parallel (largest spread {hi:.3g} rad "
            f"<= {axis_parallel_tol:g}); the common axis is unobservable"
        )
    elif rank < 6:
        verdict, msg = NEAR_SINGULAR, f"numeric rank {rank} < 6 at relative tolerance {rank_tol:g}"
    else:
        verdict, msg = OK, ""
    if verdict == OK and cond > CONDITION_WARN:
        msg = f"condition number {cond:.3g} exceeds {CONDITION_WARN:g}"
    return RankDiagnosis(verdict, lo, rank, hi, cond, msg)


def nullspace_vector_m2(R1, R2, k=1.0):
    """Null vector ``k [R1 a; a]`` of the two-cloud system, ``a`` the axis of ``R1^T R2``.

    ``R1^T R2 a = a`` gives ``R2 a = R1 a``, so each block row
    ``R1 a - R_i a`` vanishes. Only a common factor ``k`` on both halves
    keeps the vector in the null space.
    """
    R1, R2 = as_rotation(R1), as_rotation(R2)
    try:
        a, _ = axis_of(R1.T @ R2)
    except DegenerateRotationError as exc:
        raise DegenerateRotationError("R1 and R2 coincide; the relative axis is undefined") from exc
    if k == 0:
        raise InvalidArgumentError("k must be nonzero")
    return k * np.concatenate([R1 @ a, a])


def solve_translation(system, rank_tol=RANK_TOL):
    """Least-squares ``x = [o_C; o_es]`` by column-pivoted QR.

    Raises :class:`~profilecal.errors.SingularSystemError` when ``A`` is not
    numerically full column rank.
    """
    A, b = system.A, system.b
    Q, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag[0] > 0 else 0
    if rank < 6:
        diagnosis = check_rank_conditions(system.rotations, rank_tol=rank_tol)
        raise SingularSystemError(
            f"calibration system has rank {rank} < 6 ({diagnosis.verdict})", diagnosis
        )
    x = np.empty(6)
    x[piv] = solve_triangular(R, Q.T @ b)
    return _result(system, x)


def solve_normal_equations(system):
    """Reference solution ``(A^T A)^{-1} A^T b``; squares the condition number."""
    A, b = system.A, system.b
    return _result(system, np.linalg.solve(A.T @ A, A.T @ b))


def _result(system, x):
    A, b = system.A, system.b
    r = A @ x - b
    per_obs = np.linalg.norm(r.reshape(-1, 3), axis=1)
    s = np.linalg.svd(A, compute_uv=False)
    return CalibResult(
        hand_eye_translation=x[3:].copy(),
        target_origin=x[:3].copy(),
        residual_norm=float(np.linalg.norm(r)),
        per_observation_residuals=per_obs.tolist(),
        condition_number=float(s[0] / s[-1]) if s[-1] > 0 else math.inf,
    )


def calibrate(observations, axis_parallel_tol=AXIS_PARALLEL_TOL, rank_tol=RANK_TOL):
    """Check observability, then solve for the hand-eye translation."""
    obs = _as_observations(observations)
    diagnosis = check_rank_conditions([o.ee_rotation for o in obs], axis_parallel_tol, rank_tol)
    if not diagnosis.ok:
        raise RankConditionError(f"rank condition not met: {diagnosis.verdict}; {diagnosis.message}", diagnosis)
    if diagnosis.ill_conditioned:
        warnings.warn(f"near-singular calibration system: {diagnosis.message}", RuntimeWarning, stacklevel=2)
    result = solve_translation(build_system(obs), rank_tol)
    result.diagnosis = diagnosis
    return result
