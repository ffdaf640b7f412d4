"""Command-line entry point.

Subcommands: `run` (hierarchical pipeline), `baseline` (random or brute-force
recall series), `synth` (fixture generation), `extract` (built-in features
from an image directory), `gt` (ground-truth matrix only), `iou` (mask warp
and IoU for a registration file). All subcommands are deterministic under a
fixed seed; UNDERLOC_SEED overrides the default seed when --seed is absent.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, maskops, matching, synth
from .dataio import (
    DatasetError,
    DescriptorSet,
    load_manifest,
    load_mask,
    load_pgm,
    resize_policy,
    write_descriptors,
    write_keypoints,
)
from .geometry import DEFAULT_CHI_PX, DEFAULT_SEED, load_registrations

_SEED_ENV = "UNDERLOC_SEED"


def _default_seed() -> int:
    env = os.environ.get(_SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"error: {_SEED_ENV}={env!r} is not an integer")
    return DEFAULT_SEED


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--query", required=True, help="query manifest path")
    p.add_argument("--database", required=True, help="database manifest path")
    p.add_argument("-K", type=int, default=10, dest="k", help="top-K candidates (default 10)")
    p.add_argument("--chi", type=float, default=DEFAULT_CHI_PX,
                   help="reprojection error threshold in pixels (default 10)")
    p.add_argument("--trials", type=int, default=100, help="random-baseline trials per query")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 42)")
    p.add_argument("--threads", type=int, default=1, help="parallel worker cap")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--self-match", action="store_true",
                   help="allow a query to match its own image id")
    p.add_argument("--use-builtin-features", action="store_true",
                   help="extract built-in features from images/<id>.pgm instead of loading files")
    p.add_argument("--distance-3d", action="store_true",
                   help="include depth in ground-truth distances")
    p.add_argument("--inlier-only-error", action="store_true",
                   help="compute reprojection error over the RANSAC consensus only")
    p.add_argument("--correspondences", default=None,
                   help="precomputed correspondence file (ULC1) replacing the built-in matcher")
    p.add_argument("--ratio", type=float, default=0.8, help="Lowe ratio threshold")
    p.add_argument("--max-keypoints", type=int, default=512,
                   help="built-in detector keypoint budget")
    p.add_argument("--patch-size", type=int, default=16,
                   help="built-in descriptor patch side in pixels")


def _config_from_args(args, baseline=None) -> evaluation.RunConfig:
    return evaluation.RunConfig(
        query_manifest=args.query,
        database_manifest=args.database,
        k=args.k,
        chi=args.chi,
        n_trials=args.trials,
        seed=args.seed if args.seed is not None else _default_seed(),
        threads=args.threads,
        output_dir=args.out,
        baseline=baseline,
        self_match_allowed=args.self_match,
        use_builtin_features=args.use_builtin_features,
        distance_3d=args.distance_3d,
        inlier_only_error=args.inlier_only_error,
        correspondence_file=args.correspondences,
        ratio=args.ratio,
        max_keypoints=args.max_keypoints,
        patch_size=args.patch_size,
    )


def cmd_run(args) -> int:
    try:
        config = _config_from_args(args, baseline=args.baseline)
        run = evaluation.run_pipeline(config)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"{len(run.registrations)} queries registered, {len(run.accepted)} accepted; "
        f"outputs in {config.output_dir}"
    )
    return 0


def cmd_baseline(args) -> int:
    try:
        config = _config_from_args(args, baseline=args.kind)
        run = evaluation.run_pipeline(config)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    series = run.metrics["recall_at_k"][args.kind]
    print(f"{args.kind} recall@{len(series)}: {series[-1]:.3f}; outputs in {config.output_dir}")
    return 0


def cmd_synth(args) -> int:
    try:
        perturbation = synth.Perturbation(
            brightness_gain=args.brightness_gain,
            additive_noise_sigma=args.noise_sigma,
            haze_strength=args.haze,
        )
        survey = synth.generate_survey(
            seed=args.seed if args.seed is not None else _default_seed(),
            pattern=args.pattern,
            n_views=args.views,
            overlap_fraction=args.overlap,
            perturbation=perturbation,
            n_passes=args.passes,
            yaw_jitter_deg=args.yaw_jitter,
            scale_jitter=args.scale_jitter,
        )
        manifests = synth.write_dataset(survey, args.out)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for pass_index, path in sorted(manifests.items()):
        print(f"pass{pass_index}: {path}")
    return 0


def cmd_extract(args) -> int:
    try:
        image_dir = Path(args.images)
        if not image_dir.is_dir():
            raise OSError(f"image directory not found: {image_dir}")
        paths = sorted(image_dir.glob("*.pgm"))
        if not paths:
            raise OSError(f"no .pgm images in {image_dir}")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        ids, rows, kp_sets = [], [], []
        for path in paths:
            img = load_pgm(path)
            if args.resize:
                new_w, new_h = resize_policy(img.shape[1], img.shape[0])
                if (new_w, new_h) != (img.shape[1], img.shape[0]):
                    img = _box_resize(img, new_w, new_h)
            image_id = path.stem
            ids.append(image_id)
            rows.append(matching.extract_global(img))
            kp_sets.append(
                matching.extract_features(
                    img, image_id,
                    max_keypoints=args.max_keypoints, patch_size=args.patch_size,
                )
            )
        write_descriptors(out_dir / "descriptors.uld1",
                          DescriptorSet(image_ids=ids, values=np.vstack(rows)))
        write_keypoints(out_dir / "keypoints.ulk1", kp_sets)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"extracted {len(ids)} images -> {out_dir}")
    return 0


def _box_resize(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Area-weighted downscale via the same integral-image pooling the global
    descriptor uses."""
    h, w = img.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = img.astype(np.float64).cumsum(axis=0).cumsum(axis=1)
    row_edges = (np.arange(new_h + 1) * h) // new_h
    col_edges = (np.arange(new_w + 1) * w) // new_w
    r0, r1 = row_edges[:-1], row_edges[1:]
    c0, c1 = col_edges[:-1], col_edges[1:]
    sums = (
        integral[np.ix_(r1, c1)] - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)] + integral[np.ix_(r0, c0)]
    )
    areas = np.outer(r1 - r0, c1 - c0)
    return np.clip(np.floor(sums / areas + 0.5), 0, 255).astype(np.uint8)


def cmd_gt(args) -> int:
    try:
        qm = load_manifest(args.query)
        dm = load_manifest(args.database)
        gt = evaluation.build_ground_truth(
            [r.position for r in qm.records],
            [r.position for r in dm.records],
            qm.localization_radius_m,
            use_3d=args.distance_3d,
        )
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "radius_m": gt.radius_m,
            "query_ids": [r.image_id for r in qm.records],
            "database_ids": [r.image_id for r in dm.records],
            "labels": [[int(v) for v in row] for row in gt.labels],
        }
        out.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"ground truth {gt.labels.shape[0]}x{gt.labels.shape[1]} -> {out}")
    return 0


def cmd_iou(args) -> int:
    try:
        qm = load_manifest(args.query)
        dm = load_manifest(args.database)
        results = load_registrations(args.registrations)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["query_image_id,database_image_id,iou"]
        n = 0
        for res in results:
            if res.status != "accepted" or res.homography is None:
                continue
            q_rec = qm.records[qm.index_of(res.query_image_id)]
            d_rec = dm.records[dm.index_of(res.database_image_id)]
            if q_rec.mask_path is None or d_rec.mask_path is None:
                continue
            overlay = maskops.make_overlay(
                load_mask(dm.root / d_rec.mask_path),
                load_mask(qm.root / q_rec.mask_path),
                res.homography,
            )
            lines.append(
                f"{res.query_image_id},{res.database_image_id},{repr(float(overlay.iou))}"
            )
            maskops.write_overlay(
                overlay, out_dir / f"{res.query_image_id}__{res.database_image_id}.ppm"
            )
            n += 1
        (out_dir / "iou.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except (DatasetError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{n} overlays -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="underloc",
        description="Hierarchical place recognition and registration benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the hierarchical pipeline")
    _add_run_flags(p_run)
    p_run.add_argument("--baseline", choices=["random", "bruteforce"], default=None,
                       help="also compute a baseline recall series")
    p_run.set_defaults(func=cmd_run)

    p_base = sub.add_parser("baseline", help="run a baseline alongside the pipeline metrics")
    _add_run_flags(p_base)
    p_base.add_argument("--kind", choices=["random", "bruteforce"], required=True)
    p_base.set_defaults(func=cmd_baseline)

    p_synth = sub.add_parser("synth", help="generate a synthetic survey dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--pattern", choices=[synth.PATTERN_LAWNMOWER, synth.PATTERN_TRANSECT],
                         default=synth.PATTERN_LAWNMOWER)
    p_synth.add_argument("--views", type=int, default=20, help="views per pass")
    p_synth.add_argument("--passes", type=int, default=2)
    p_synth.add_argument("--overlap", type=float, default=0.5)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--brightness-gain", type=float, default=1.0)
    p_synth.add_argument("--noise-sigma", type=float, default=0.0)
    p_synth.add_argument("--haze", type=float, default=0.0)
    p_synth.add_argument("--yaw-jitter", type=float, default=0.0, help="degrees")
    p_synth.add_argument("--scale-jitter", type=float, default=0.0)
    p_synth.set_defaults(func=cmd_synth)

    p_extract = sub.add_parser("extract", help="built-in global+local features from images")
    p_extract.add_argument("--images", required=True, help="directory of .pgm images")
    p_extract.add_argument("--out", required=True)
    p_extract.add_argument("--resize", action="store_true",
                           help="apply the fit-within-640x480 policy first")
    p_extract.add_argument("--max-keypoints", type=int, default=512)
    p_extract.add_argument("--patch-size", type=int, default=16)
    p_extract.set_defaults(func=cmd_extract)

    p_gt = sub.add_parser("gt", help="ground-truth matrix only")
    p_gt.add_argument("--query", required=True)
    p_gt.add_argument("--database", required=True)
    p_gt.add_argument("--out", required=True)
    p_gt.add_argument("--distance-3d", action="store_true")
    p_gt.set_defaults(func=cmd_gt)

    p_iou = sub.add_parser("iou", help="mask warp + IoU for a registration file")
    p_iou.add_argument("--query", required=True)
    p_iou.add_argument("--database", required=True)
    p_iou.add_argument("--registrations", required=True)
    p_iou.add_argument("--out", required=True)
    p_iou.set_defaults(func=cmd_iou)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
