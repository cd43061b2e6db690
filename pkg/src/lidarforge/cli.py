"""Command line interface.

Subcommands:

* ``forge``    build an out-of-distribution split from scans + meshes
* ``project``  debug range-image projection of a single scan (PGM)
* ``score``    compute anomaly scores from feature tensor files
* ``eval``     evaluate score files against label files

Randomized behavior is keyed to a single master seed; forge writes to
a temporary directory and renames it into place on success, so a
failed run never leaves a partial dataset.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import insertion, losses, metrics, scoring
from .errors import LidarForgeError, ValidationError
from .insertion import ForgeParams, SplitPolicy
from .mesh_bank import MeshBank, ReflectivityCatalog, load_target_heights
from .range_projection import project, write_pgm
from .scan_io import SensorConfig, read_labels, read_scan

BUNDLED_SENSORS = {
    "semantickitti": "sensor_semantickitti.cfg",
    "semanticposs": "sensor_semanticposs.cfg",
    "nuscenes": "sensor_nuscenes.cfg",
}

# per dataset style: anomaly label id, single-split surfaces, multi-split surfaces
STYLE_PRESETS = {
    "kitti": (2, (40,), (40, 44, 48, 49)),
    "poss": (2, (22,), (22,)),
    "nuscenes": (100, (24,), (24, 25, 26)),
}


def _load_sensor(name_or_path: str) -> SensorConfig:
    if Path(name_or_path).exists():
        return SensorConfig.from_file(name_or_path)
    if name_or_path in BUNDLED_SENSORS:
        with resources.as_file(resources.files("lidarforge.data")
                               / BUNDLED_SENSORS[name_or_path]) as p:
            return SensorConfig.from_file(p)
    raise ValidationError(
        f"sensor {name_or_path!r} is neither a file nor one of {sorted(BUNDLED_SENSORS)}")


def _build_policy(args) -> SplitPolicy:
    anomaly_label, single_surfaces, multi_surfaces = STYLE_PRESETS[args.style]
    surfaces = single_surfaces if args.policy == "single" else multi_surfaces
    if args.surface_classes:
        surfaces = tuple(int(t) for t in args.surface_classes.split(","))
    if args.anomaly_label is not None:
        anomaly_label = args.anomaly_label
    kwargs = {}
    if args.max_radius is not None:
        kwargs["max_radius"] = args.max_radius
    ctor = SplitPolicy.single if args.policy == "single" else SplitPolicy.multi
    return ctor(surface_classes=surfaces, anomaly_label=anomaly_label, **kwargs)


def cmd_forge(args) -> int:
    if not 0 <= args.seed < 2**64:
        raise ValidationError(f"--seed must be an unsigned 64-bit value, got {args.seed}")
    out_dir = Path(args.out)
    if out_dir.exists():
        raise ValidationError(f"output directory {out_dir} already exists")
    for name in ("scans", "labels", "meshes"):
        if not Path(getattr(args, name)).is_dir():
            raise ValidationError(f"--{name} directory {getattr(args, name)!r} does not exist")

    sensor = _load_sensor(args.sensor)
    policy = _build_policy(args)
    catalog = ReflectivityCatalog.from_file(args.catalog) if args.catalog \
        else ReflectivityCatalog.default()
    heights = load_target_heights(args.heights)
    bank = MeshBank(args.meshes, catalog)
    params = ForgeParams(
        object_points=args.object_points,
        noise_scale=args.noise_scale,
        normal_neighbors=args.neighbors,
        normalization=args.normalization,
    )

    pairs = insertion.discover_pairs(args.scans, args.labels)
    if not pairs:
        raise ValidationError(f"no .bin scans found under {args.scans}")

    echo = {
        "seed": args.seed,
        "policy": policy.kind,
        "anomaly_ratio": policy.anomaly_ratio,
        "surface_classes": ",".join(str(c) for c in sorted(policy.surface_classes)),
        "anomaly_label": policy.anomaly_label,
        "max_radius": policy.max_radius,
        "count_distribution": ",".join(f"{p:g}" for p in policy.count_distribution),
        "sensor_beams": sensor.beams,
        "sensor_width": sensor.width,
        "sensor_fov_up_deg": sensor.fov_up_deg,
        "sensor_fov_down_deg": sensor.fov_down_deg,
        "style": args.style,
        "object_points": params.object_points,
        "noise_scale": params.noise_scale,
        "normal_neighbors": params.normal_neighbors,
        "normalization": params.normalization,
    }

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=out_dir.name + ".tmp.", dir=out_dir.parent))
    try:
        summary = insertion.forge_split(
            pairs, tmp, policy, sensor, bank, heights, args.seed, params,
            workers=args.workers, config_echo=echo)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"forged {summary.scan_count} scans -> {out_dir}")
    print(f"  anomaly scans: {summary.anomaly_scan_count}"
          f" ({summary.anomaly_scan_count / max(summary.scan_count, 1):.2%})")
    print(f"  objects inserted: {summary.object_count}")
    print(f"  anomaly points: {summary.anomaly_point_count}")
    if summary.skipped:
        print(f"  skipped scans: {len(summary.skipped)} (see manifest)")
    return 0


def cmd_project(args) -> int:
    sensor = _load_sensor(args.sensor)
    cloud = read_scan(args.scan)
    img = project(cloud, sensor)
    write_pgm(img, args.out)
    filled = int(img.filled.sum())
    finite = img.ranges[img.filled]
    print(f"projected {cloud.count} points onto {img.height}x{img.width}")
    print(f"  filled cells: {filled} ({filled / (img.height * img.width):.2%})")
    if filled:
        print(f"  range min/max: {finite.min():.3f} / {finite.max():.3f} m")
    print(f"  wrote {args.out}")
    return 0


def _feature_pairs(features_dir: Path):
    pairs = []
    for sem in sorted(features_dir.glob("*.sem.ftr")):
        stem = sem.name[: -len(".sem.ftr")]
        cont = features_dir / f"{stem}.cont.ftr"
        if not cont.exists():
            raise ValidationError(f"missing contrastive features for {stem!r}: {cont}")
        pairs.append((stem, sem, cont))
    if not pairs:
        raise ValidationError(f"no *.sem.ftr feature files under {features_dir}")
    return pairs


def cmd_score(args) -> int:
    features_dir = Path(args.features)
    if not features_dir.is_dir():
        raise ValidationError(f"--features directory {features_dir} does not exist")
    proto = scoring.read_tensor(args.prototypes).astype(np.float64)
    bank = scoring.PrototypeBank(prototypes=proto, weights=np.ones(proto.shape[0]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    weights = losses.LossWeights(temperature=args.temperature, radius=args.radius)

    for stem, sem_path, cont_path in _feature_pairs(features_dir):
        feats = scoring.FeatureSet(
            semantic=scoring.read_tensor(sem_path).astype(np.float64),
            contrastive=scoring.read_tensor(cont_path).astype(np.float64),
        )
        scores = scoring.compute_scores(feats, bank, radius=args.radius, metric=args.metric)
        scoring.write_scores(out_dir / stem, scores, which=args.score)

        if args.losses:
            _print_losses(stem, feats, bank, args, weights)
    print(f"scored {len(list(out_dir.glob('*.scores')))} scans -> {out_dir}")
    return 0


def _print_losses(stem: str, feats: scoring.FeatureSet, bank: scoring.PrototypeBank,
                  args, weights: losses.LossWeights) -> None:
    """Debug output: forward loss values for one scan.

    Labels must hold class indices below C; points at or above C are
    excluded from the losses (they are not inlier training points).
    """
    label_path = Path(args.labels) / f"{stem}.label"
    y = read_labels(label_path).class_ids.astype(np.int64)
    if y.shape[0] != feats.count:
        raise ValidationError(f"{stem}: {y.shape[0]} labels vs {feats.count} feature rows")
    c = feats.num_classes
    keep = y < c
    sem, cont, y = feats.semantic[keep], feats.contrastive[keep], y[keep]
    if y.size == 0:
        print(f"{stem}\tno inlier-labeled points, losses skipped")
        return
    ce, _ = losses.loss_ce(sem, y)
    lovasz, _ = losses.loss_lovasz(sem, y)
    prot, _, _ = losses.loss_prototype(sem, y, bank)
    means, _ = losses.mean_class_features(cont, y, c)
    cont_loss, _ = losses.loss_contrastive(means, bank, weights.temperature)
    obj, _ = losses.loss_objectosphere(cont, np.ones(y.shape[0], dtype=bool), weights.radius)
    shead, chead = losses.loss_heads(ce, lovasz, prot, cont_loss, obj, weights)
    print(f"{stem}\tce={ce:.6f}\tlovasz={lovasz:.6f}\tprototype={prot:.6f}"
          f"\tcontrastive={cont_loss:.6f}\tobjectosphere={obj:.6f}"
          f"\tsemantic_head={shead:.6f}\tcontrastive_head={chead:.6f}")


def _collect_eval(args):
    scores_dir = Path(args.scores)
    labels_dir = Path(args.labels)
    scans_dir = Path(args.scans) if args.scans else None
    per_scan = []
    for score_path in sorted(scores_dir.glob("*.scores")):
        stem = score_path.stem
        label_path = labels_dir / f"{stem}.label"
        if not label_path.exists():
            raise ValidationError(f"missing labels for {stem!r}: {label_path}")
        scores = scoring.read_scores(score_path)
        truth = read_labels(label_path).class_ids == args.anomaly_label
        if truth.shape[0] != scores.shape[0]:
            raise ValidationError(
                f"{stem}: {scores.shape[0]} scores vs {truth.shape[0]} labels")
        ranges = None
        if scans_dir is not None:
            cloud = read_scan(scans_dir / f"{stem}.bin")
            if cloud.count != scores.shape[0]:
                raise ValidationError(f"{stem}: scan size does not match scores")
            ranges = np.linalg.norm(cloud.xyz.astype(np.float64), axis=1)
        per_scan.append((stem, scores, truth, ranges))
    if not per_scan:
        raise ValidationError(f"no *.scores files under {scores_dir}")
    return per_scan


def cmd_eval(args) -> int:
    per_scan = _collect_eval(args)
    scores = np.concatenate([s for _, s, _, _ in per_scan])
    truth = np.concatenate([t for _, _, t, _ in per_scan])
    ranges = None
    if all(r is not None for _, _, _, r in per_scan):
        ranges = np.concatenate([r for _, _, _, r in per_scan])
    pair = metrics.EvalPair(scores, truth, ranges)

    lines = ["metric               value", "-" * 27]
    kv = {
        "auroc": metrics.auroc(pair),
        "fpr_at_95tpr": metrics.fpr_at_tpr(pair, 0.95),
        "ap": metrics.average_precision(pair),
    }
    if ranges is not None:
        for key, value in metrics.range_binned_ap(pair).items():
            kv[f"ap_bin_{key}"] = value
    for key, value in kv.items():
        shown = "undefined" if value is None else f"{value:.6f}"
        lines.append(f"{key:<20} {shown}")
    lines.append("")
    for key, value in kv.items():
        lines.append(f"{key} = {'undefined' if value is None else f'{value:.9f}'}")

    if args.per_scan:
        lines.append("")
        for stem, s, t, _ in per_scan:
            try:
                value = metrics.auroc(metrics.EvalPair(s, t))
                lines.append(f"scan {stem} auroc = {value:.6f}")
            except LidarForgeError as exc:
                lines.append(f"scan {stem} auroc = undefined ({exc})")

    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidarforge", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    forge = sub.add_parser("forge", help="forge an out-of-distribution split")
    forge.add_argument("--scans", required=True, help="directory of <stem>.bin scans")
    forge.add_argument("--labels", required=True, help="directory of <stem>.label files")
    forge.add_argument("--meshes", required=True, help="root of category/*.off mesh folders")
    forge.add_argument("--out", required=True, help="output dataset directory (must not exist)")
    forge.add_argument("--sensor", required=True,
                       help=f"sensor config path or one of {sorted(BUNDLED_SENSORS)}")
    forge.add_argument("--policy", choices=("single", "multi"), required=True)
    forge.add_argument("--seed", type=int, default=0, help="master seed (uint64)")
    forge.add_argument("--style", choices=sorted(STYLE_PRESETS), default="kitti")
    forge.add_argument("--surface-classes", default="",
                       help="comma-separated class ids overriding the style preset")
    forge.add_argument("--anomaly-label", type=int, default=None)
    forge.add_argument("--max-radius", type=float, default=None)
    forge.add_argument("--catalog", default=None, help="reflectivity config (default: bundled)")
    forge.add_argument("--heights", default=None, help="target-height config (default: bundled)")
    forge.add_argument("--object-points", type=int, default=50_000)
    forge.add_argument("--noise-scale", type=float, default=0.05)
    forge.add_argument("--neighbors", type=int, default=10)
    forge.add_argument("--normalization", choices=("mean", "max"), default="mean")
    forge.add_argument("--workers", type=int, default=1)
    forge.set_defaults(func=cmd_forge)

    proj = sub.add_parser("project", help="project one scan to a PGM range image")
    proj.add_argument("--scan", required=True)
    proj.add_argument("--sensor", required=True)
    proj.add_argument("--out", required=True, help="output .pgm path")
    proj.set_defaults(func=cmd_project)

    score = sub.add_parser("score", help="compute anomaly scores from feature files")
    score.add_argument("--features", required=True,
                       help="directory of <stem>.sem.ftr / <stem>.cont.ftr tensor files")
    score.add_argument("--prototypes", required=True, help="prototype tensor file (C x C)")
    score.add_argument("--out", required=True)
    score.add_argument("--radius", type=float, default=scoring.DEFAULT_NORM_THRESHOLD)
    score.add_argument("--metric", choices=("cosine", "dot"), default="cosine")
    score.add_argument("--score", choices=("fused", "sem", "cont", "cos", "ent"),
                       default="fused", help="which score channel to write")
    score.add_argument("--losses", action="store_true",
                       help="also print forward loss values (needs --labels)")
    score.add_argument("--labels", default=None,
                       help="directory of <stem>.label files with class indices, for --losses")
    score.add_argument("--temperature", type=float, default=0.1)
    score.set_defaults(func=cmd_score)

    ev = sub.add_parser("eval", help="evaluate score files against labels")
    ev.add_argument("--scores", required=True, help="directory of <stem>.scores files")
    ev.add_argument("--labels", required=True, help="directory of <stem>.label files")
    ev.add_argument("--scans", default=None,
                    help="directory of <stem>.bin scans; enables range-binned AP")
    ev.add_argument("--anomaly-label", type=int, default=2)
    ev.add_argument("--per-scan", action="store_true")
    ev.add_argument("--out", default=None, help="also write the report to this file")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "losses", False) and not args.labels:
        print("error: --losses requires --labels", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except LidarForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
