import json
import math

import numpy as np
import pytest

from profilecal.errors import InvalidArgumentError, RankConditionError, StageError
from profilecal.geometry import RigidTransform, rotz
from profilecal.harness import (
    ExperimentConfig,
    SweepReport,
    calibration_csv,
    default_config,
    derived_seed,
    load_config,
    perturbed_rotation,
    run_calibration,
    run_cloud_count_sweep,
    run_once,
    run_rotation_perturbation_sweep,
    save_config,
)

from conftest import small_config


@pytest.fixture(scope="module")
def exact_cfg():
    return small_config(noise=False)


@pytest.fixture(scope="module")
def noisy_cfg():
    return small_config(noise=True, m=4)


# --- configuration ------------------------------------------------------------------------

def test_default_config_shape():
    cfg = default_config()
    assert cfg.m == 10 and cfg.repetitions == 20
    np.testing.assert_array_equal(cfg.hand_eye.translation, [907.5, 97.0, 40.0])
    assert cfg.sensor.sigma_z == 0.1 and cfg.ee_jitter == 0.05
    assert default_config(noise=False).sensor.sigma_z == 0.0


def test_config_round_trip(tmp_path):
    cfg = default_config(target="flat_logo")
    back = load_config(save_config(cfg, tmp_path / "c.json"))
    assert back.to_dict() == cfg.to_dict()
    assert back.registration.binarize


def test_config_validation():
    d = default_config().to_dict()
    bad = dict(d, trajectories=[{"start": [0, 0, 0]}])
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig.from_dict(bad)
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig.from_dict({k: v for k, v in d.items() if k != "hand_eye"})
    with pytest.raises(InvalidArgumentError):
        default_config().replace(colour="red")
    with pytest.raises(InvalidArgumentError):
        default_config().replace(repetitions=0)


def test_with_clouds_keeps_prefix():
    cfg = default_config()
    sub = cfg.with_clouds(4)
    assert sub.m == 4 and cfg.m == 10
    assert sub.trajectories == cfg.trajectories[:4]


def test_derived_seeds():
    assert derived_seed(3, 1) == derived_seed(3, 1)
    assert len({derived_seed(3, r) for r in range(50)}) == 50
    assert derived_seed(3, 0) != derived_seed(4, 0)


# --- reports -------------------------------------------------------------------------------

def test_calibration_csv_layout():
    rows = [("a", [1.0, 2.0, 3.0], [0.1, -0.2, 0.3]), ("b", [3.0, 2.0, 1.0], [-0.3, 0.2, -0.1])]
    lines = calibration_csv(rows).splitlines()
    assert lines[0] == "dataset,x,y,z,dx,dy,dz"
    assert lines[1] == "a,1.000000,2.000000,3.000000,0.100000,0.200000,0.300000"
    assert lines[3] == "mean,2.000000,2.000000,2.000000,0.200000,0.200000,0.200000"
    sd = np.std([0.1, 0.3], ddof=1)
    assert lines[4].split(",")[4] == f"{sd:.6f}"


def test_calibration_csv_failed_rows_excluded_from_stats():
    rows = [("ok", [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]), ("bad", None, None)]
    lines = calibration_csv(rows).splitlines()
    assert lines[2] == "bad,nan,nan,nan,nan,nan,nan"
    assert lines[3].startswith("mean,1.000000") and lines[4] == "sd" + ",0.000000" * 6


def test_sweep_report_csv():
    r = SweepReport("angle_deg", [{"value": 2.0, "dx": 0.1, "dy": 0.2, "dz": 0.3, "mean_error": 0.4,
                                   "n_failed": 1}])
    assert r.to_csv().splitlines() == ["angle_deg,dx,dy,dz,mean_error,n_failed",
                                       "2.0,0.100000,0.200000,0.300000,0.400000,1"]
    assert r.row(2.0)["n_failed"] == 1
    with pytest.raises(KeyError):
        r.row(5.0)


def test_perturbed_rotation():
    R = perturbed_rotation(np.eye(3), 10.0)
    np.testing.assert_allclose(R, rotz(math.radians(10)), atol=1e-15)
    np.testing.assert_array_equal(perturbed_rotation(rotz(0.3), 0.0), rotz(0.3))


# --- runs ----------------------------------------------------------------------------------------

def test_noise_free_run_recovers_hand_eye(exact_cfg, tmp_path):
    results, text = run_calibration(exact_cfg, tmp_path, seed=0)
    assert np.all(np.abs(results[0].errors) < 1e-2)
    for name in ("calibration.csv", "report.txt", "result.json", "dataset/manifest.json", "clouds/cloud_02.ply"):
        assert (tmp_path / name).exists(), name
    assert (tmp_path / "calibration.csv").read_text() == text
    saved = json.loads((tmp_path / "result.json").read_text())
    assert len(saved["registrations"]) == 3


def test_two_clouds_abort_citing_rank(exact_cfg):
    with pytest.raises(StageError) as info:
        run_calibration(exact_cfg.with_clouds(2))
    assert isinstance(info.value.cause, RankConditionError)
    assert "too_few_clouds" in str(info.value)


def test_stage_errors_are_tagged(exact_cfg):
    # target moved out of every field of view: nothing to register
    lost = exact_cfg.replace(target_pose=RigidTransform(np.eye(3), [5000.0, 0, 0]))
    with pytest.raises(StageError) as info:
        run_once(lost)
    assert info.value.stage.startswith("register")


def test_failed_repetitions_become_failed_rows(exact_cfg):
    lost = exact_cfg.replace(target_pose=RigidTransform(np.eye(3), [5000.0, 0, 0]))
    report = run_rotation_perturbation_sweep(lost, [0.0, 1.0], repetitions=2)
    assert [r["n_failed"] for r in report.rows] == [2, 2]
    assert all(math.isnan(r["mean_error"]) for r in report.rows)
    assert len(report.details) == 4


def test_zero_perturbation_equals_baseline(noisy_cfg):
    report = run_rotation_perturbation_sweep(noisy_cfg, [0.0, 2.0], repetitions=1, seed=5)
    base = run_once(noisy_cfg, derived_seed(5, 0))
    assert report.row(0.0)["mean_error"] == pytest.approx(float(np.linalg.norm(base.errors)), abs=1e-12)
    assert len(report.rows) == 2


def test_count_sweep_full_count_matches_full_run(noisy_cfg, tmp_path):
    report = run_cloud_count_sweep(noisy_cfg, [3, 4], repetitions=1, seed=5, out_dir=tmp_path)
    base = run_once(noisy_cfg, derived_seed(5, 0))
    np.testing.assert_allclose(report.details[-1]["error"], base.errors, atol=1e-12)
    assert (tmp_path / "sweep_count.csv").exists() and (tmp_path / "sweep_count_details.csv").exists()


def test_count_sweep_rejects_bad_counts(noisy_cfg):
    with pytest.raises(RankConditionError):
        run_cloud_count_sweep(noisy_cfg, [2, 3])
    with pytest.raises(InvalidArgumentError):
        run_cloud_count_sweep(noisy_cfg, [3, 11])


def test_runs_are_deterministic(noisy_cfg):
    _, a = run_calibration(noisy_cfg, seed=9, repetitions=2)
    _, b = run_calibration(noisy_cfg, seed=9, repetitions=2)
    assert a == b
