"""Command-line interface: ``profilecal <subcommand> [options]``.

Exit status is 0 on success, 2 when the calibration is refused because the
rank condition fails, and 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import CalibObservation, calibrate
from .errors import ProfileCalError, RankConditionError, StageError
from .geometry import RigidTransform, as_rotation
from .harness import (
    build_model,
    calibration_csv,
    default_config,
    load_config,
    register_clouds,
    reconstruct_dataset,
    run_calibration,
    run_cloud_count_sweep,
    run_rotation_perturbation_sweep,
    save_config,
    simulate,
)
from .reconstruct import load_reconstruction, save_reconstruction
from .scan_sim import load_dataset, save_dataset

EXIT_OK, EXIT_ERROR, EXIT_RANK = 0, 1, 2


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "repetitions", None) is not None:
        cfg = cfg.replace(repetitions=args.repetitions)
    return cfg


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_default_config(args):
    cfg = default_config(target=args.target, noise=not args.noise_free)
    path = save_config(cfg, _out(args) / "config.json")
    print(path)


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args)
    ds = simulate(cfg)
    save_dataset(ds, out / "dataset")
    save_config(cfg, out / "config.json")
    n = sum(len(p) for r in ds.records for p in r.profiles)
    print(f"simulated {len(ds.records)} clouds, {n} points -> {out / 'dataset'}")


def cmd_reconstruct(args):
    out = _out(args)
    ds = load_dataset(args.dataset)
    if args.config:
        R_es = load_config(args.config).hand_eye.rotation
    else:
        R_es = as_rotation(ds.manifest["hand_eye_true"]["rotation"])
    clouds = out / "clouds"
    clouds.mkdir(exist_ok=True)
    for i, rc in enumerate(reconstruct_dataset(ds, R_es)):
        save_reconstruction(rc, clouds / f"cloud_{i:02d}.ply")
    print(f"wrote {len(ds.records)} rotation-only clouds -> {clouds}")


def cmd_register(args):
    cfg = _config(args)
    out = _out(args)
    paths = sorted(Path(args.clouds).glob("*.ply"))
    if not paths:
        raise ProfileCalError(f"no .ply clouds in {args.clouds}")
    recons = [load_reconstruction(p) for p in paths]
    regs = register_clouds(recons, build_model(cfg), cfg.registration, cfg.seed)
    entries = [
        {"cloud": p.name, "ee_rotation": rc.ee_rotation.tolist(), **r.to_dict()}
        for p, rc, r in zip(paths, recons, regs)
    ]
    (out / "registrations.json").write_text(json.dumps(entries, indent=2))
    print(f"registered {len(entries)} clouds -> {out / 'registrations.json'}")


def _calibrate_from_registrations(args, cfg, out):
    entries = json.loads(Path(args.registrations).read_text())
    obs = [
        CalibObservation(RigidTransform.from_dict(e["transform"]).translation, e["ee_rotation"])
        for e in entries
    ]
    try:
        result = calibrate(obs, cfg.axis_parallel_tol, cfg.rank_tol)
    except ProfileCalError as exc:
        raise StageError("calibrate", exc) from exc
    truth = np.array(cfg.hand_eye.translation)
    (out / "result.json").write_text(result.to_json())
    (out / "calibration.csv").write_text(
        calibration_csv([(Path(args.registrations).stem, result.hand_eye_translation, result.errors(truth))])
    )
    print(result.report(truth))


def cmd_calibrate(args):
    cfg = _config(args)
    out = _out(args)
    if args.registrations:
        _calibrate_from_registrations(args, cfg, out)
        return
    reps = args.repetitions or 1
    results, text = run_calibration(cfg, out, cfg.seed, reps)
    if reps == 1:
        print(results[0].calibration.report(cfg.hand_eye.translation))
    else:
        print(text, end="")


def cmd_sweep_rot(args):
    cfg = _config(args)
    report = run_rotation_perturbation_sweep(cfg, _floats(args.angles), cfg.repetitions, cfg.seed,
                                             _floats(args.axis), _out(args))
    print(report.to_csv(), end="")


def cmd_sweep_count(args):
    cfg = _config(args)
    counts = _ints(args.counts) if args.counts else list(range(3, cfg.m + 1))
    report = run_cloud_count_sweep(cfg, counts, cfg.repetitions, cfg.seed, _out(args))
    print(report.to_csv(), end="")


def build_parser():
    parser = argparse.ArgumentParser(prog="profilecal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, seed=True, reps=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="experiment config JSON (default: built-in scene)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        if reps:
            p.add_argument("--repetitions", type=int, help="override the number of repetitions")
        p.set_defaults(func=fn)
        return p

    p = add("default-config", cmd_default_config, "write the built-in experiment config", seed=False)
    p.add_argument("--target", default="step_block", choices=["step_block", "wedge", "flat_logo"])
    p.add_argument("--noise-free", action="store_true")
    add("simulate", cmd_simulate, "simulate a scan dataset")
    p = add("reconstruct", cmd_reconstruct, "rotation-only reconstruction of a dataset", seed=False)
    p.add_argument("--dataset", type=Path, required=True)
    p = add("register", cmd_register, "localize the target in reconstructed clouds")
    p.add_argument("--clouds", type=Path, required=True)
    p = add("calibrate", cmd_calibrate, "end-to-end calibration (or from a registrations file)", reps=True)
    p.add_argument("--registrations", type=Path, help="registrations.json written by 'register'")
    p = add("sweep-rot", cmd_sweep_rot, "hand-eye rotation perturbation sweep", reps=True)
    p.add_argument("--angles", default="0,0.5,1,2,5,10", help="comma-separated angles in degrees")
    p.add_argument("--axis", default="0,0,1", help="perturbation axis in the sensor frame")
    p = add("sweep-count", cmd_sweep_count, "cloud-count sweep", reps=True)
    p.add_argument("--counts", help="comma-separated cloud counts (default 3..m)")
    return parser


def _is_rank_error(exc):
    return isinstance(exc, RankConditionError) or (
        isinstance(exc, StageError) and isinstance(exc.cause, RankConditionError)
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ProfileCalError, OSError, ValueError, KeyError) as exc:
        print(f"profilecal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RANK if _is_rank_error(exc) else EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
