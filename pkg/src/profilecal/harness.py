"""Experiment configuration, end-to-end runs and parameter sweeps.

A run simulates a dataset, reconstructs every trajectory with the
rotation-only frame, localizes the target in each cloud and solves for the
hand-eye translation. Sweeps repeat runs over derived seeds and collect
per-axis errors against the simulated ground truth.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibObservation, calibrate, check_rank_conditions
from .errors import InvalidArgumentError, RankConditionError, StageError
from .geometry import RigidTransform, as_rotation, rot_from_axis_angle, rotz, unit_axis
from .reconstruct import reconstruct_rotation_only, save_reconstruction
from .registration import RegistrationParams, localize_target
from .scan_sim import (
    FIXTURE_HAND_EYE_ROTATION,
    FIXTURE_HAND_EYE_TRANSLATION,
    ScanScene,
    SensorModel,
    acquire_dataset,
    interpolate_trajectory,
    plan_trajectories,
    save_dataset,
)
from .targets import synth_target, target_model_cloud

CALIB_HEADER = ["dataset", "x", "y", "z", "dx", "dy", "dz"]
SWEEP_COLUMNS = ["dx", "dy", "dz", "mean_error", "n_failed"]


# --- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run, serializable to a single JSON file.

    ``trajectories`` holds one dict per reconstructed cloud with keys
    ``start``, ``end`` (end-effector positions, mm), ``steps`` and
    ``rotation`` (the constant end-effector rotation).
    """

    target: dict
    target_pose: RigidTransform
    hand_eye: RigidTransform
    sensor: SensorModel
    trajectories: list
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    ee_jitter: float = 0.0
    model_density: float = 5.0
    model_seed: int = 7
    seed: int = 0
    repetitions: int = 20
    axis_parallel_tol: float = 1e-3
    rank_tol: float = 1e-9

    def __post_init__(self):
        if not self.trajectories:
            raise InvalidArgumentError("config needs at least one trajectory")
        for t in self.trajectories:
            missing = {"start", "end", "steps", "rotation"} - set(t)
            if missing:
                raise InvalidArgumentError(f"trajectory entry is missing {sorted(missing)}")
        if "kind" not in self.target:
            raise InvalidArgumentError("target needs a 'kind'")
        if self.repetitions < 1:
            raise InvalidArgumentError("repetitions must be >= 1")
        if self.ee_jitter < 0:
            raise InvalidArgumentError("ee_jitter must be non-negative")

    @property
    def m(self):
        return len(self.trajectories)

    def rotations(self):
        return [as_rotation(t["rotation"]) for t in self.trajectories]

    def with_clouds(self, k):
        """Copy keeping only the first ``k`` trajectories."""
        cfg = copy.copy(self)
        cfg.trajectories = list(self.trajectories[:k])
        return cfg

    def replace(self, **changes):
        cfg = copy.copy(self)
        for k, v in changes.items():
            if not hasattr(cfg, k):
                raise InvalidArgumentError(f"unknown config field {k!r}")
            setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg

    def to_dict(self):
        return {
            "target": self.target,
            "target_pose": self.target_pose.to_dict(),
            "hand_eye": self.hand_eye.to_dict(),
            "sensor": self.sensor.to_dict(),
            "trajectories": [
                {
                    "start": list(map(float, t["start"])),
                    "end": list(map(float, t["end"])),
                    "steps": int(t["steps"]),
                    "rotation": np.asarray(t["rotation"], dtype=float).tolist(),
                }
                for t in self.trajectories
            ],
            "registration": self.registration.__dict__.copy(),
            "ee_jitter": self.ee_jitter,
            "model_density": self.model_density,
            "model_seed": self.model_seed,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "axis_parallel_tol": self.axis_parallel_tol,
            "rank_tol": self.rank_tol,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            return cls(
                target=d.pop("target"),
                target_pose=RigidTransform.from_dict(d.pop("target_pose")),
                hand_eye=RigidTransform.from_dict(d.pop("hand_eye")),
                sensor=SensorModel(**d.pop("sensor")),
                trajectories=d.pop("trajectories"),
                registration=RegistrationParams.from_dict(d.pop("registration", {})),
                **d,
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"invalid experiment config: {exc}") from None


def save_config(config, path):
    Path(path).write_text(config.to_json())
    return Path(path)


def load_config(path):
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def default_config(target="step_block", noise=True, views_deg=None, seed=0, repetitions=20):
    """Reference scene: the fixture hand-eye, the target 1.1 m in front of the robot.

    ``noise=True`` uses ``sigma_z = 0.1`` mm, ``sigma_x = 0.02`` mm and a
    0.05 mm end-effector jitter; ``noise=False`` makes every stage exact.
    """
    hand_eye = RigidTransform(FIXTURE_HAND_EYE_ROTATION, FIXTURE_HAND_EYE_TRANSLATION)
    target_pose = RigidTransform(rotz(math.radians(25.0)), [1100.0, -200.0, 250.0])
    tgt = {"kind": target, "params": {}}
    # sor_stddev_mult = 1 trims a band along every step edge, which lets the
    # remaining patches slide; 3 still removes isolated points
    reg = RegistrationParams(sor_stddev_mult=3.0)
    if target == "flat_logo":
        tgt["params"] = {"size": 64, "dpi": 25.4 / 1.5}
        reg = reg.replace(binarize=True)
    sensor = SensorModel() if noise else SensorModel().noiseless()
    scene = ScanScene(synth_target(target, **tgt["params"]), target_pose, hand_eye)
    trajs = plan_trajectories(scene, views_deg)
    return ExperimentConfig(
        target=tgt,
        target_pose=target_pose,
        hand_eye=hand_eye,
        sensor=sensor,
        trajectories=[
            {"start": t.ee_positions[0].tolist(), "end": t.ee_positions[-1].tolist(),
             "steps": len(t) - 1, "rotation": t.ee_rotation.tolist()}
            for t in trajs
        ],
        registration=reg,
        ee_jitter=0.05 if noise else 0.0,
        seed=seed,
        repetitions=repetitions,
    )


# --- pipeline stages ------------------------------------------------------------------

def derived_seed(seed, repetition):
    """Seed of one repetition, independent across repetitions."""
    return int(np.random.SeedSequence([int(seed), int(repetition)]).generate_state(1)[0])


def build_scene(config):
    target = synth_target(config.target["kind"], **config.target.get("params", {}))
    return ScanScene(target, config.target_pose, config.hand_eye, dict(config.target))


def build_trajectories(config):
    return [
        interpolate_trajectory(t["start"], t["end"], t["steps"], as_rotation(t["rotation"]))
        for t in config.trajectories
    ]


_MODEL_CACHE = {}


def build_model(config, scene=None):
    """Model cloud of the target in frame C (cached per target and sampling)."""
    key = (json.dumps(config.target, sort_keys=True), config.model_density, config.model_seed)
    if key not in _MODEL_CACHE:
        scene = scene or build_scene(config)
        _MODEL_CACHE[key] = target_model_cloud(scene.target, config.model_density, config.model_seed)
    return _MODEL_CACHE[key]


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def simulate(config, seed=None):
    seed = config.seed if seed is None else seed
    scene = _stage("simulate", build_scene, config)
    return _stage("simulate", acquire_dataset, scene, build_trajectories(config), config.sensor, seed,
                  config.ee_jitter)


def reconstruct_dataset(dataset, hand_eye_rotation):
    return [
        _stage("reconstruct", reconstruct_rotation_only, rec.profiles, rec.ee_poses(), hand_eye_rotation)
        for rec in dataset.records
    ]


def register_clouds(recons, model, params, seed=0):
    """Localize the target in each reconstructed cloud; RANSAC draws from per-cloud streams."""
    out = []
    for i, rc in enumerate(recons):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1000 + i]))
        out.append(_stage(f"register:{i}", localize_target, rc, model, params, rng))
    return out


def observations_from(recons, registrations):
    return [CalibObservation(r.transform.translation, rc.ee_rotation) for rc, r in zip(recons, registrations)]


def _precheck_rank(config, rotations=None):
    diag = check_rank_conditions(rotations or config.rotations(), config.axis_parallel_tol, config.rank_tol)
    if not diag.ok:
        raise StageError("calibrate", RankConditionError(
            f"rank condition not met: {diag.verdict}; {diag.message}", diag))
    return diag


@dataclass
class RunResult:
    seed: int
    calibration: object
    registrations: list
    truth: np.ndarray

    @property
    def errors(self):
        return self.calibration.hand_eye_translation - self.truth

    def to_dict(self):
        return {
            "seed": self.seed,
            "ground_truth": self.truth.tolist(),
            "error": self.errors.tolist(),
            "calibration": self.calibration.to_dict(),
            "registrations": [r.to_dict() for r in self.registrations],
        }


def _calibrate_registered(config, recons, regs):
    return _stage("calibrate", calibrate, observations_from(recons, regs), config.axis_parallel_tol,
                  config.rank_tol)


def run_once(config, seed=None, hand_eye_rotation=None, out_dir=None):
    """Simulate, reconstruct, register and calibrate one dataset.

    ``hand_eye_rotation`` overrides the rotation used for reconstruction (the
    simulator always uses the true one). With ``out_dir`` the dataset, the
    reconstructed clouds and ``result.json`` are written there.
    """
    seed = config.seed if seed is None else int(seed)
    _precheck_rank(config)
    R_es = config.hand_eye.rotation if hand_eye_rotation is None else as_rotation(hand_eye_rotation)
    ds = simulate(config, seed)
    recons = reconstruct_dataset(ds, R_es)
    model = _stage("register", build_model, config, ds.scene)
    regs = register_clouds(recons, model, config.registration, seed)
    calib = _calibrate_registered(config, recons, regs)
    result = RunResult(seed, calib, regs, np.array(config.hand_eye.translation))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out / "dataset")
        (out / "clouds").mkdir(exist_ok=True)
        for i, rc in enumerate(recons):
            save_reconstruction(rc, out / "clouds" / f"cloud_{i:02d}.ply")
        (out / "result.json").write_text(json.dumps(result.to_dict(), indent=2))
    return result


# --- reports ------------------------------------------------------------------------------

def _fmt(v):
    return "nan" if not math.isfinite(v) else f"{v:.6f}"


def calibration_csv(rows):
    """Table of ``(name, o_es estimate, |error|)`` rows plus mean and sd footers.

    ``rows`` holds ``(name, estimate, error)`` tuples; failed datasets carry
    ``None`` estimates and are written with ``nan`` values but left out of
    the footer statistics.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CALIB_HEADER)
    good = []
    for name, est, err in rows:
        if est is None:
            w.writerow([name] + ["nan"] * 6)
            continue
        vals = list(est) + list(np.abs(err))
        good.append(vals)
        w.writerow([name] + [_fmt(v) for v in vals])
    if good:
        arr = np.array(good)
        sd = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
        w.writerow(["mean"] + [_fmt(v) for v in arr.mean(axis=0)])
        w.writerow(["sd"] + [_fmt(v) for v in sd])
    return buf.getvalue()


@dataclass
class SweepReport:
    """One row per sweep value: mean ``|error|`` per axis and mean error norm (mm)."""

    variable: str
    rows: list
    details: list = field(default_factory=list)

    def row(self, value):
        for r in self.rows:
            if r["value"] == value:
                return r
        raise KeyError(value)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.variable] + SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([r["value"]] + [_fmt(r[k]) for k in SWEEP_COLUMNS[:-1]] + [r["n_failed"]])
        return buf.getvalue()

    def details_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.variable, "repetition", "seed", "x", "y", "z", "dx", "dy", "dz", "status"])
        for d in self.details:
            est = d["estimate"] if d["estimate"] is not None else [math.nan] * 3
            err = d["error"] if d["error"] is not None else [math.nan] * 3
            w.writerow([d["value"], d["repetition"], d["seed"]] + [_fmt(v) for v in est]
                       + [_fmt(abs(v)) for v in err] + [d["status"]])
        return buf.getvalue()

    def write(self, out_dir, name):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.csv").write_text(self.to_csv())
        (out / f"{name}_details.csv").write_text(self.details_csv())


def _summarize(variable, values, details):
    rows = []
    for v in values:
        errs = [np.asarray(d["error"]) for d in details if d["value"] == v and d["error"] is not None]
        n_failed = sum(1 for d in details if d["value"] == v and d["error"] is None)
        if errs:
            E = np.array(errs)
            dx, dy, dz = np.abs(E).mean(axis=0)
            mean_err = float(np.linalg.norm(E, axis=1).mean())
        else:
            dx = dy = dz = mean_err = math.nan
        rows.append({"value": v, "dx": float(dx), "dy": float(dy), "dz": float(dz),
                     "mean_error": mean_err, "n_failed": n_failed})
    return SweepReport(variable, rows, details)


def _detail(value, rep, seed, calib=None, truth=None, status="ok"):
    if calib is None:
        return {"value": value, "repetition": rep, "seed": seed, "estimate": None, "error": None,
                "status": status}
    est = calib.hand_eye_translation
    return {"value": value, "repetition": rep, "seed": seed, "estimate": est.tolist(),
            "error": (est - truth).tolist(), "status": status}


def _failure_status(exc):
    return f"failed: {exc}".replace("\n", " ")


# --- runs -----------------------------------------------------------------------------------

def run_calibration(config, out_dir=None, seed=None, repetitions=1):
    """End-to-end calibration of one or more simulated datasets.

    With ``repetitions == 1`` the dataset uses ``seed`` (default
    ``config.seed``) and a stage failure propagates as
    :class:`~profilecal.errors.StageError`. With more repetitions each uses
    :func:`derived_seed`; failures become ``nan`` rows. Returns the list of
    :class:`RunResult` (``None`` for failed repetitions) and the CSV text,
    which is also written to ``out_dir/calibration.csv``.
    """
    seed = config.seed if seed is None else int(seed)
    _precheck_rank(config)
    truth = np.array(config.hand_eye.translation)
    results, rows = [], []
    for rep in range(repetitions):
        s = seed if repetitions == 1 else derived_seed(seed, rep)
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) if repetitions == 1 else Path(out_dir) / f"rep_{rep:03d}"
        name = f"seed_{s}"
        try:
            res = run_once(config, s, out_dir=sub)
        except StageError as exc:
            if repetitions == 1 or isinstance(exc.cause, RankConditionError):
                raise
            results.append(None)
            rows.append((name, None, None))
            continue
        results.append(res)
        rows.append((name, res.calibration.hand_eye_translation, res.errors))
    text = calibration_csv(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "calibration.csv").write_text(text)
        if repetitions == 1:
            (Path(out_dir) / "report.txt").write_text(results[0].calibration.report(truth) + "\n")
    return results, text


def perturbed_rotation(R_es, angle_deg, axis=(0.0, 0.0, 1.0)):
    """``R_es`` followed by a rotation of ``angle_deg`` about ``axis`` in the sensor frame."""
    return as_rotation(R_es) @ rot_from_axis_angle(unit_axis(axis), math.radians(angle_deg))


def run_rotation_perturbation_sweep(config, angles, repetitions=None, seed=None, axis=(0.0, 0.0, 1.0),
                                    out_dir=None):
    """Calibrate with a hand-eye rotation perturbed by each angle (degrees).

    The simulator always scans with the true rotation; only reconstruction
    uses the perturbed one. Every repetition scans one dataset that all
    angles share.
    """
    angles = [float(a) for a in angles]
    if not angles:
        raise InvalidArgumentError("at least one angle is required")
    repetitions = config.repetitions if repetitions is None else int(repetitions)
    seed = config.seed if seed is None else int(seed)
    _precheck_rank(config)
    truth = np.array(config.hand_eye.translation)
    model = _stage("register", build_model, config)
    details = []
    for rep in range(repetitions):
        s = derived_seed(seed, rep)
        try:
            ds = simulate(config, s)
        except StageError as exc:
            details += [_detail(a, rep, s, status=_failure_status(exc)) for a in angles]
            continue
        for a in angles:
            try:
                recons = reconstruct_dataset(ds, perturbed_rotation(config.hand_eye.rotation, a, axis))
                regs = register_clouds(recons, model, config.registration, s)
                calib = _calibrate_registered(config, recons, regs)
                details.append(_detail(a, rep, s, calib, truth))
            except StageError as exc:
                details.append(_detail(a, rep, s, status=_failure_status(exc)))
    report = _summarize("angle_deg", angles, details)
    if out_dir is not None:
        report.write(out_dir, "sweep_rot")
    return report


def run_cloud_count_sweep(config, counts, repetitions=None, seed=None, out_dir=None):
    """Calibrate with the first ``k`` clouds for each ``k`` in ``counts``.

    Each repetition registers every cloud once; the calibrations for the
    different counts reuse those registrations.
    """
    counts = [int(k) for k in counts]
    if not counts:
        raise InvalidArgumentError("at least one count is required")
    bad = [k for k in counts if k < 3]
    if bad:
        raise RankConditionError(f"cloud counts {bad} are below the minimum of 3")
    if max(counts) > config.m:
        raise InvalidArgumentError(f"count {max(counts)} exceeds the {config.m} configured trajectories")
    repetitions = config.repetitions if repetitions is None else int(repetitions)
    seed = config.seed if seed is None else int(seed)
    for k in counts:
        _precheck_rank(config, config.rotations()[:k])
    truth = np.array(config.hand_eye.translation)
    sub = config.with_clouds(max(counts))
    model = _stage("register", build_model, config)
    details = []
    for rep in range(repetitions):
        s = derived_seed(seed, rep)
        try:
            ds = simulate(sub, s)
            recons = reconstruct_dataset(ds, config.hand_eye.rotation)
            regs = register_clouds(recons, model, config.registration, s)
        except StageError as exc:
            details += [_detail(k, rep, s, status=_failure_status(exc)) for k in counts]
            continue
        for k in counts:
            try:
                calib = _calibrate_registered(config, recons[:k], regs[:k])
                details.append(_detail(k, rep, s, calib, truth))
            except StageError as exc:
                details.append(_detail(k, rep, s, status=_failure_status(exc)))
    report = _summarize("count", counts, details)
    if out_dir is not None:
        report.write(out_dir, "sweep_count")
    return report
