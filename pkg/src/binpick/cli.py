"""Command-line front end: ``binpick <command> [options]``.

Every command is a pure function of its input files, flags and seed.  Each
output is accompanied by a JSON manifest holding the tool version, the
resolved configuration, the seeds and sha256 digests of inputs and outputs.

Exit status: 0 success, 2 usage error, 3 I/O or file-format error,
4 degenerate data.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DegenerateDataError, ModelFormatError, SceneCapacityError
from .features import SVM_COLUMNS, read_dataset
from .geometry import GripperModel, write_point_cloud
from .learn import (
    ConfusionMatrix,
    LinearSVMDiscriminator,
    RandomForestDiscriminator,
    derive_seeds,
    dumps_model,
    format_report,
    load_model,
)
from .oracle import OracleConfig, generate_dataset, simulate_pick
from .pipeline import PipelineConfig, detect_objects, plan_pick, swept_discriminator
from .plan import box_grasp_database, read_grasp_db, write_grasp_db
from .scene import SensorConfig, capture, gen_scene, read_scene, write_scene
from .shapes import ObjectModel

EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 2, 3, 4


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _manifest(path, args, seeds, inputs, outputs, extra=None) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    data = {
        "tool": "binpick",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        data.update(extra)
    _dump_json(path, data)


def _side_manifest(out) -> Path:
    return Path(str(out) + ".manifest.json")


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: no such file")
    return p


def _out_file(path) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise InputError(f"{p.parent}: output directory does not exist")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{path}: cannot create output directory ({exc})") from exc
    return p


def _load(reader, path, *a):
    try:
        return reader(_need_file(path), *a)
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise InputError(f"{path}: malformed file ({exc})") from exc


def _pipeline_config(args, part: ObjectModel) -> PipelineConfig:
    sensor = SensorConfig(resolution=args.resolution, noise_sigma=args.noise)
    return PipelineConfig(part=part, n_objects=getattr(args, "objects", 9), sensor=sensor)


# commands ------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.objects < 1:
        raise UsageError("--objects must be at least 1")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    out = _out_dir(args.out)
    part = ObjectModel.box(*args.part)
    seeds = derive_seeds(args.seed, args.count)
    files = []
    for k, s in enumerate(seeds):
        scene = gen_scene(part, args.objects, tuple(args.bin_size), args.wall_height, seed=s)
        path = out / f"scene_{k}.json"
        write_scene(path, scene)
        files.append(path)
    _manifest(out / "manifest.json", args, {"master": args.seed, "scenes": seeds}, [], files)
    print(f"wrote {len(files)} scene(s) to {out}")
    return 0


def cmd_capture(args) -> int:
    scene = _load(read_scene, args.scene)
    out = _out_file(args.out)
    sensor = SensorConfig(resolution=args.resolution, noise_sigma=args.noise)
    cloud = capture(scene, sensor, seed=args.seed)
    write_point_cloud(out, cloud)
    _manifest(_side_manifest(out), args, {"capture": args.seed}, [args.scene], [out])
    print(f"captured {len(cloud)} points")
    return 0


def cmd_grasp_db(args) -> int:
    out = _out_file(args.out)
    part = ObjectModel.box(*args.part)
    db = box_grasp_database(part, GripperModel())
    write_grasp_db(out, db, part)
    _manifest(_side_manifest(out), args, {}, [], [out])
    print(f"wrote {len(db)} grasp entries")
    return 0


def cmd_dataset(args) -> int:
    if (args.scenes is None) == (args.trials is None):
        raise UsageError("give exactly one of --scenes or --trials")
    out = _out_file(args.out)
    oracle_cfg = OracleConfig(args.push_clearance, math.radians(args.contact_angle))
    inputs = []
    if args.scenes is not None:
        paths = sorted(Path(args.scenes).glob("scene_*.json"),
                       key=lambda p: int(p.stem.split("_")[-1]))
        if not paths:
            raise UsageError(f"{args.scenes}: no scene_<k>.json files")
        scenes = [_load(read_scene, p) for p in paths]
        cfg = _pipeline_config(args, scenes[0].objects[0].model)
        ds = generate_dataset(len(scenes), cfg, oracle_cfg, args.seed, scenes=scenes)
        inputs = paths
    else:
        if args.trials < 1:
            raise UsageError("--trials must be at least 1")
        cfg = _pipeline_config(args, ObjectModel.box(*args.part))
        ds = generate_dataset(args.trials, cfg, oracle_cfg, args.seed)
    ds.write(out)
    balance = ds.balance()
    _manifest(_side_manifest(out), args, {"master": args.seed,
                                          "trials": [r["seed"] for r in ds.records]},
              inputs, [out], {"class_balance": balance, "trials": ds.records,
                              "pipeline": cfg.describe()})
    print(json.dumps(balance, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    data = _load(read_dataset, args.dataset)
    out = _out_file(args.out)
    y, svm, hist = data
    if args.algo == "svm":
        model = LinearSVMDiscriminator(C=args.C, epochs=args.epochs, random_state=args.seed)
        model.fit(svm, y)
    else:
        model = RandomForestDiscriminator(args.trees, args.depth, args.ratio,
                                          random_state=args.seed, n_jobs=args.n_jobs)
        model.fit(hist, y)
    Path(out).write_text(dumps_model(model))
    _manifest(_side_manifest(out), args, {"train": args.seed}, [args.dataset], [out])
    print(f"trained {args.algo} on {len(y)} rows")
    return 0


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_eval(args) -> int:
    if (args.counts is None) == (args.model is None):
        raise UsageError("give either --counts or --model with --dataset")
    out = _out_dir(args.out)
    inputs, files = [], []
    if args.counts is not None:
        cm = ConfusionMatrix(*args.counts)
    else:
        if args.dataset is None:
            raise UsageError("--model needs --dataset")
        model = _load(load_model, args.model)
        y, svm, hist = _load(read_dataset, args.dataset)
        X = svm if isinstance(model, LinearSVMDiscriminator) else hist
        try:
            pred = model.predict(X)
        except ValueError as exc:
            raise InputError(f"{args.model} does not fit {args.dataset}: {exc}") from exc
        cm = ConfusionMatrix.from_labels(y, pred)
        inputs = [args.model, args.dataset]
        scatter = out / "scatter.csv"
        _write_rows(scatter, [["label", *SVM_COLUMNS, "predicted"]]
                    + [[f"{int(a):+d}", repr(float(s[0])), repr(float(s[1])), f"{int(p):+d}"]
                       for a, s, p in zip(y, svm, pred)])
        files.append(scatter)
    report = format_report(cm)
    (out / "report.txt").write_text(report)
    _write_rows(out / "confusion.csv",
                [["actual", "identified_success", "identified_failure"], *cm.as_rows()])
    files = [out / "report.txt", out / "confusion.csv"] + files
    rates = {k: (None if isinstance(v, float) and math.isnan(v) else v)
             for k, v in cm.rates().items()}
    _manifest(out / "manifest.json", args, {}, inputs, files, {"rates": rates})
    sys.stdout.write(report)
    return 0


def _pose_dict(pose) -> dict:
    return {"position": pose.position.tolist(), "quaternion_xyzw": pose.as_quat().tolist()}


def cmd_pick(args) -> int:
    scene = _load(read_scene, args.scene)
    db, part = _load(read_grasp_db, args.grasp_db)
    model = _load(load_model, args.model)
    out = _out_file(args.out)
    cfg = _pipeline_config(args, part)
    capture_seed, noise_seed = derive_seeds(args.seed, 2)
    cloud = capture(scene, cfg.sensor, capture_seed)
    detections, report = detect_objects(scene, cloud, cfg, noise_seed)
    disc = swept_discriminator(model, cfg.binning)
    sel = plan_pick(scene, cloud, detections, db, cfg, disc, args.alpha, args.beta, "execution")
    trace = {"detection": report, "tiers": sel.trace, "tier_sizes": sel.tier_sizes,
             "candidates": len(db) * len(detections)}
    if sel.abstained:
        trace["decision"] = "abstain"
    else:
        c = sel.chosen
        outcome = simulate_pick(scene, c, cfg.gripper, OracleConfig())
        trace["decision"] = "pick"
        trace["chosen"] = {"object": c.object_index, "entry": c.entry_index,
                           "stability": c.stability, "selection_index": sel.score,
                           "pose": _pose_dict(c.pose)}
        trace["oracle"] = {"success": outcome.success, "reason": outcome.reason.value}
    _dump_json(out, trace)
    _manifest(_side_manifest(out), args, {"master": args.seed, "capture": capture_seed,
                                          "pose_noise": noise_seed},
              [args.scene, args.model, args.grasp_db], [out])
    print(trace["decision"])
    return 0


# argument parsing --------------------------------------------------------------

DEFAULT_PART = (0.06, 0.03, 0.025)


def _sensor_flags(p):
    p.add_argument("--noise", type=float, default=0.0005, help="range noise sigma (m)")
    p.add_argument("--resolution", type=float, default=0.004, help="angular step (rad)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binpick", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"binpick {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("gen", cmd_gen, "generate random bin scenes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--objects", type=int, default=9)
    p.add_argument("--bin-size", type=float, nargs=2, default=[0.3, 0.3])
    p.add_argument("--wall-height", type=float, default=0.1)
    p.add_argument("--part", type=float, nargs=3, default=list(DEFAULT_PART))
    p.add_argument("--out", required=True, help="output directory")

    p = command("capture", cmd_capture, "ray-cast a point cloud of a scene")
    p.add_argument("--scene", required=True)
    _sensor_flags(p)
    p.add_argument("--out", required=True, help="point cloud file")

    p = command("grasp-db", cmd_grasp_db, "build the grasp database of a box part")
    p.add_argument("--part", type=float, nargs=3, default=list(DEFAULT_PART))
    p.add_argument("--out", required=True)

    p = command("dataset", cmd_dataset, "oracle-labelled training data")
    p.add_argument("--scenes", help="directory of scene_<k>.json files")
    p.add_argument("--trials", type=int, help="generate this many scenes instead")
    p.add_argument("--objects", type=int, default=9)
    p.add_argument("--part", type=float, nargs=3, default=list(DEFAULT_PART))
    p.add_argument("--push-clearance", type=float, default=0.015)
    p.add_argument("--contact-angle", type=float, default=60.0, help="degrees")
    _sensor_flags(p)
    p.add_argument("--out", required=True, help="dataset CSV")

    p = command("train", cmd_train, "train a discriminator")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algo", choices=["svm", "forest"], required=True)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--n-jobs", type=int, default=None)
    p.add_argument("--out", required=True, help="model file")

    p = command("eval", cmd_eval, "confusion matrix and rates")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--counts", type=int, nargs=4,
                   metavar=("SS", "SF", "FS", "FF"),
                   help="actual x identified counts instead of a model")
    p.add_argument("--out", required=True, help="report directory")

    p = command("pick", cmd_pick, "select one grasp in a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--grasp-db", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    _sensor_flags(p)
    p.add_argument("--out", required=True, help="decision trace JSON")
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def _explicit_dests(sub, argv) -> set:
    given = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(action.dest)
    return given


def _apply_config(parser, args, argv) -> None:
    """Merge ``--config`` values; disagreeing with an explicit flag is an error."""
    if not args.config:
        return
    try:
        values = json.loads(_need_file(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.config}: invalid JSON ({exc})") from exc
    if not isinstance(values, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    sub = _subparser(parser, args.command)
    known = {a.dest for a in sub._actions} - {"help", "config", "func"}
    explicit = _explicit_dests(sub, argv)
    for key, value in sorted(values.items()):
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        if dest in explicit and getattr(args, dest) != value:
            raise UsageError(f"--{key} given on the command line conflicts with {args.config}")
        setattr(args, dest, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(parser, args, argv)
        return args.func(args)
    except (UsageError, ConfigError, SceneCapacityError) as exc:
        print(f"binpick: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateDataError as exc:
        print(f"binpick: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, ModelFormatError, OSError) as exc:
        print(f"binpick: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
