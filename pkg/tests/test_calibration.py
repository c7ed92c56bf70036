import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from profilecal.calibration import (
    IDENTICAL_ROTATIONS,
    NEAR_SINGULAR,
    OK,
    PARALLEL_AXES,
    TOO_FEW_CLOUDS,
    CalibObservation,
    build_system,
    calibrate,
    check_rank_conditions,
    nullspace_vector_m2,
    relative_axes,
    solve_normal_equations,
    solve_translation,
)
from profilecal.errors import DegenerateRotationError, InvalidArgumentError, RankConditionError, SingularSystemError
from profilecal.geometry import rot_from_axis_angle, rotx, roty, rotz

from conftest import random_axis, random_rotation

O_C = np.array([100.0, 200.0, 300.0])
O_ES = np.array([907.5, 97.0, 40.0])
THREE = [np.eye(3), rotx(math.radians(30)), roty(math.radians(30))]


def forward(rotations, o_c=O_C, o_es=O_ES):
    """Registered origins a calibration would see for the given flange rotations."""
    return [CalibObservation(o_c - R @ o_es, R) for R in rotations]


def numeric_rank(rotations):
    return check_rank_conditions(rotations).numeric_rank


# --- system assembly -------------------------------------------------------------------

def test_single_identity_block():
    sys_ = build_system(forward([np.eye(3)]))
    np.testing.assert_array_equal(sys_.A, np.hstack([np.eye(3), -np.eye(3)]))
    assert sys_.m == 1


def test_two_observation_shapes():
    sys_ = build_system(forward(THREE[:2]))
    assert sys_.A.shape == (6, 6) and sys_.b.shape == (6,)


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_forward_generated_system_is_consistent(seed, m):
    rng = np.random.default_rng(seed)
    o_c, o_es = rng.uniform(-1000, 1000, 3), rng.uniform(-1000, 1000, 3)
    sys_ = build_system(forward([random_rotation(rng) for _ in range(m)], o_c, o_es))
    np.testing.assert_allclose(sys_.A @ np.concatenate([o_c, o_es]), sys_.b, atol=1e-9)


def test_build_accepts_tuples_and_rejects_empty():
    sys_ = build_system([(O_C, np.eye(3))])
    np.testing.assert_array_equal(sys_.b, O_C)
    with pytest.raises(InvalidArgumentError):
        build_system([])
    with pytest.raises(InvalidArgumentError):
        CalibObservation([1, 2], np.eye(3))
    with pytest.raises(InvalidArgumentError):
        CalibObservation(O_C, 2 * np.eye(3))


# --- rank conditions -------------------------------------------------------------------

def test_single_cloud_diagnosis():
    d = check_rank_conditions([np.eye(3)])
    assert d.verdict == TOO_FEW_CLOUDS and d.numeric_rank == 3 and not d.ok


def test_two_cloud_diagnosis():
    d = check_rank_conditions([np.eye(3), rotz(math.radians(30))])
    assert d.verdict == TOO_FEW_CLOUDS and d.numeric_rank == 5


def test_three_non_parallel_is_ok():
    d = check_rank_conditions(THREE)
    assert d.verdict == OK and d.numeric_rank == 6 and d.ok
    assert d.min_relative_axis_angle == pytest.approx(math.pi / 2)


def test_coaxial_triple_is_parallel():
    d = check_rank_conditions([np.eye(3), rotz(math.radians(10)), rotz(math.radians(20))])
    assert d.verdict == PARALLEL_AXES and d.numeric_rank <= 5
    assert d.max_relative_axis_angle < 1e-12


def test_identical_pair_detected():
    d = check_rank_conditions([np.eye(3), rotx(0.5), rotx(0.5), roty(0.3)])
    assert d.verdict == IDENTICAL_ROTATIONS


def test_no_rotations():
    assert check_rank_conditions([]).verdict == TOO_FEW_CLOUDS


def test_near_singular_verdict():
    # relative axes 2e-3 rad apart pass the parallel test but a stricter rank cutoff rejects them
    R = _tilted_triple(2e-3)
    d = check_rank_conditions(R, rank_tol=1e-2)
    assert d.verdict == NEAR_SINGULAR and d.numeric_rank < 6
    assert check_rank_conditions(R).verdict == OK


def _tilted_triple(sep):
    return [np.eye(3), rotz(0.3), rot_from_axis_angle([math.sin(sep), 0, math.cos(sep)], 0.6)]


def test_ill_conditioned_stays_ok_with_message():
    d = check_rank_conditions(_tilted_triple(1e-6), axis_parallel_tol=1e-9)
    assert d.verdict == OK and d.numeric_rank == 6
    assert d.ill_conditioned and "condition number" in d.message
    assert not check_rank_conditions(_tilted_triple(1e-2)).ill_conditioned


@given(st.integers(0, 2**32 - 1))
def test_one_cloud_has_rank_three(seed):
    assert numeric_rank([random_rotation(np.random.default_rng(seed))]) == 3


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 3.0))
def test_two_clouds_null_vector(seed, k):
    rng = np.random.default_rng(seed)
    R1, R2 = random_rotation(rng), random_rotation(rng)
    A = build_system(forward([R1, R2])).A
    v = nullspace_vector_m2(R1, R2, k)
    assert numeric_rank([R1, R2]) <= 5
    assert np.linalg.norm(A @ v) < 1e-9 and np.linalg.norm(v) > 0


@given(st.integers(0, 2**32 - 1))
def test_three_clouds_full_rank(seed):
    rng = np.random.default_rng(seed)
    Rs = [random_rotation(rng) for _ in range(3)]
    a2, a3 = relative_axes(Rs)
    if math.acos(min(1.0, abs(a2 @ a3))) > 1e-3:
        assert numeric_rank(Rs) == 6
        assert check_rank_conditions(Rs).verdict == OK


@given(st.integers(0, 2**32 - 1), st.integers(3, 6))
def test_shared_relative_axis_is_rank_deficient(seed, m):
    rng = np.random.default_rng(seed)
    R1, a = random_rotation(rng), random_axis(rng)
    Rs = [R1] + [R1 @ rot_from_axis_angle(a, rng.uniform(0.2, 3.0)) for _ in range(m - 1)]
    d = check_rank_conditions(Rs)
    assert d.numeric_rank <= 5 and d.verdict in (PARALLEL_AXES, IDENTICAL_ROTATIONS)


def test_null_vector_for_z_rotation():
    v = nullspace_vector_m2(np.eye(3), rotz(0.7))
    np.testing.assert_allclose(v, [0, 0, 1, 0, 0, 1], atol=1e-15)
    A = build_system(forward([np.eye(3), rotz(0.7)])).A
    assert np.linalg.norm(A @ v) < 1e-12


def test_null_vector_errors():
    R = rotx(0.4)
    with pytest.raises(DegenerateRotationError):
        nullspace_vector_m2(R, R)
    with pytest.raises(InvalidArgumentError):
        nullspace_vector_m2(np.eye(3), R, k=0)


# --- solving ------------------------------------------------------------------------------

def test_exact_recovery():
    r = solve_translation(build_system(forward(THREE)))
    np.testing.assert_allclose(r.hand_eye_translation, O_ES, atol=1e-9)
    np.testing.assert_allclose(r.target_origin, O_C, atol=1e-9)
    assert r.residual_norm < 1e-9
    assert all(x >= 0 for x in r.per_observation_residuals)


def test_identical_rotations_are_singular():
    with pytest.raises(SingularSystemError) as info:
        solve_translation(build_system(forward([rotx(0.3)] * 3)))
    assert info.value.diagnosis.verdict == IDENTICAL_ROTATIONS


def test_noise_averages_out():
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        Rs = [random_rotation(rng) for _ in range(10)]
        obs = [CalibObservation(o.registered_origin + rng.normal(0, 0.1, 3), o.ee_rotation) for o in forward(Rs)]
        errs.append(np.abs(solve_translation(build_system(obs)).hand_eye_translation - O_ES))
    assert np.all(np.mean(errs, axis=0) < 0.2)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_row_scaling_invariance(seed, s):
    rng = np.random.default_rng(seed)
    Rs = [random_rotation(rng) for _ in range(5)]
    obs = [CalibObservation(o.registered_origin + rng.normal(0, 1.0, 3), o.ee_rotation) for o in forward(Rs)]
    sys_ = build_system(obs)
    x = solve_translation(sys_)
    scaled = type(sys_)(sys_.A * s, sys_.b * s, sys_.rotations)
    y = solve_translation(scaled)
    np.testing.assert_allclose(y.hand_eye_translation, x.hand_eye_translation, atol=1e-9, rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_qr_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    Rs = [random_rotation(rng) for _ in range(int(rng.integers(3, 11)))]
    obs = [CalibObservation(rng.uniform(-1e3, 1e3, 3), R) for R in Rs]
    sys_ = build_system(obs)
    a, b = solve_translation(sys_), solve_normal_equations(sys_)
    np.testing.assert_allclose(a.hand_eye_translation, b.hand_eye_translation, atol=1e-8)
    np.testing.assert_allclose(a.target_origin, b.target_origin, atol=1e-8)


def test_calibrate_refuses_two_clouds():
    with pytest.raises(RankConditionError) as info:
        calibrate(forward(THREE[:2]))
    assert info.value.diagnosis.verdict == TOO_FEW_CLOUDS


def test_calibrate_refuses_parallel_axes():
    with pytest.raises(RankConditionError):
        calibrate(forward([np.eye(3), rotz(0.2), rotz(0.5)]))


def test_calibrate_warns_when_ill_conditioned():
    with pytest.warns(RuntimeWarning, match="condition number"):
        r = calibrate(forward(_tilted_triple(1e-6)), axis_parallel_tol=1e-9)
    assert r.diagnosis.ill_conditioned
    np.testing.assert_allclose(r.hand_eye_translation, O_ES, atol=1e-4)


def test_result_serialization_and_report():
    r = calibrate(forward(THREE))
    d = json.loads(r.to_json())
    assert d["diagnosis"]["verdict"] == OK
    np.testing.assert_allclose(d["hand_eye_translation"], O_ES)
    text = r.report(O_ES)
    assert "x=907.5000" in text and "dx=0.0000" in text
