"""Benchmark evaluation: GPS-radius ground truth, Recall@K, precision-recall,
random and brute-force baselines, and the full hierarchical pipeline run with
cost accounting.

Queries with no positive database image are excluded from recall
denominators. Geodetic positions are projected to a local ENU plane about
the dataset centroid (equirectangular with latitude-corrected longitude
scale), which stays within 0.1% of great-circle distances at survey scales.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import maskops
from .dataio import (
    ConsistencyError,
    DatasetManifest,
    GeoPosition,
    KeypointSet,
    load_manifest,
    load_mask,
    load_pgm,
)
from .geometry import (
    DEFAULT_CHI_PX,
    DEFAULT_SEED,
    DegenerateGeometryError,
    InsufficientMatchesError,
    RegistrationResult,
    STATUS_REJECTED_DEGENERATE,
    STATUS_REJECTED_INSUFFICIENT,
    derive_pair_seed,
    estimate_homography,
    filter_by_threshold,
    reprojection_error,
    write_registrations,
)
from .matching import (
    CorrespondenceSet,
    RerankedMatch,
    extract_features,
    extract_global,
    load_correspondences,
    match_keypoints,
    matcher_from_table,
    rerank,
)
from .retrieval import CandidateSet, SimilarityMatrix, compute_similarity, full_ranking, top_k

MEAN_EARTH_RADIUS_M = 6371008.8

Matcher = Callable[[KeypointSet, KeypointSet], CorrespondenceSet]


@dataclass
class GroundTruthMatrix:
    """labels[j, i] is true iff database image j and query image i are within
    the localization radius (strict <)."""

    labels: np.ndarray  # (|D|, |Q|) bool
    radius_m: float

    @property
    def n_database(self) -> int:
        return self.labels.shape[0]

    @property
    def n_queries(self) -> int:
        return self.labels.shape[1]

    def positives_per_query(self) -> np.ndarray:
        return self.labels.sum(axis=0)


@dataclass
class RecallCurve:
    """Recall@K for K = 1..K_max; values[k-1] is Recall@K."""

    values: np.ndarray

    def at(self, k: int) -> float:
        return float(self.values[k - 1])

    @property
    def k_max(self) -> int:
        return len(self.values)


@dataclass
class PRCurve:
    """(threshold, precision, recall) over descending confidence thresholds,
    restricted to queries that have at least one positive."""

    points: list[tuple[float, float, float]]
    no_positives: bool = False


@dataclass
class CostCounters:
    global_descriptor_comparisons: int = 0
    local_match_invocations: int = 0
    wall_time_s: dict[str, float] = field(default_factory=dict)


def _local_xyz(
    positions: Sequence[GeoPosition], use_3d: bool, origin: Optional[tuple[float, float]] = None
) -> np.ndarray:
    conventions = {p.convention for p in positions}
    if len(conventions) > 1:
        raise ConsistencyError("mixed coordinate conventions across positions")
    if conventions == {"geodetic"}:
        lat = np.array([p.latitude for p in positions])
        lon = np.array([p.longitude for p in positions])
        lat0, lon0 = origin if origin is not None else (lat.mean(), lon.mean())
        x = np.radians(lon - lon0) * math.cos(math.radians(lat0)) * MEAN_EARTH_RADIUS_M
        y = np.radians(lat - lat0) * MEAN_EARTH_RADIUS_M
        z = np.array([p.depth if p.depth is not None else 0.0 for p in positions])
    else:
        x = np.array([p.x for p in positions])
        y = np.array([p.y for p in positions])
        z = np.zeros(len(positions))
    if not use_3d:
        z = np.zeros_like(z)
    return np.column_stack([x, y, z])


def build_ground_truth(
    query_positions: Sequence[GeoPosition],
    database_positions: Sequence[GeoPosition],
    radius_m: float,
    *,
    use_3d: bool = False,
) -> GroundTruthMatrix:
    """Boolean |D| x |Q| matrix of "same place" labels from positions.

    Both sides must share one coordinate convention. Depth contributes only
    when use_3d is set.
    """
    if radius_m <= 0:
        raise ValueError(f"radius must be > 0, got {radius_m}")
    all_positions = list(query_positions) + list(database_positions)
    conventions = {p.convention for p in all_positions}
    if len(conventions) > 1:
        raise ConsistencyError("query and database sides use different coordinate conventions")
    origin = None
    if conventions == {"geodetic"}:
        origin = (
            float(np.mean([p.latitude for p in all_positions])),
            float(np.mean([p.longitude for p in all_positions])),
        )
    q = _local_xyz(query_positions, use_3d, origin)
    d = _local_xyz(database_positions, use_3d, origin)
    diff = d[:, None, :] - q[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    return GroundTruthMatrix(labels=dist < radius_m, radius_m=radius_m)


def _first_hit_ranks(
    rankings: Sequence[np.ndarray], gt: GroundTruthMatrix, k_max: int
) -> tuple[np.ndarray, int]:
    """0-based rank of the first positive per positive query (k_max if none
    within the ranking), plus the positive-query count."""
    positive_queries = np.nonzero(gt.positives_per_query() > 0)[0]
    first_hits = []
    for qi in positive_queries:
        ranking = np.asarray(rankings[qi])
        if len(ranking) < min(k_max, gt.n_database):
            raise ValueError(
                f"query {qi}: ranking of length {len(ranking)} shorter than K_max={k_max}"
            )
        hits = np.nonzero(gt.labels[ranking[:k_max], qi])[0]
        first_hits.append(int(hits[0]) if hits.size else k_max)
    return np.array(first_hits, dtype=np.int64), len(positive_queries)


def recall_at_k(
    rankings: Sequence[np.ndarray], gt: GroundTruthMatrix, k_max: int
) -> RecallCurve:
    """Recall@K = fraction of positive queries whose top-K contains a true
    label, for K = 1..K_max."""
    first_hits, n_positive = _first_hit_ranks(rankings, gt, k_max)
    if n_positive == 0:
        return RecallCurve(values=np.zeros(k_max))
    hit_at = np.bincount(first_hits[first_hits < k_max], minlength=k_max)
    return RecallCurve(values=np.cumsum(hit_at) / n_positive)


def pr_curve(
    best_matches: Sequence[tuple[int, float]],
    gt: GroundTruthMatrix,
) -> PRCurve:
    """Precision-recall sweep over the per-query best matches.

    Thresholds run over the distinct scores descending; at each threshold the
    predictions are the best matches scoring >= it. Queries with no positive
    are excluded (they can never be a TP and do not count as predictions), so
    precision at the loosest threshold is (#correct best matches) / |Q+|.
    """
    positive_mask = gt.positives_per_query() > 0
    scores, correct = [], []
    for qi, (db_index, score) in enumerate(best_matches):
        if not positive_mask[qi]:
            continue
        scores.append(score)
        correct.append(bool(gt.labels[db_index, qi]))
    if not scores:
        return PRCurve(points=[], no_positives=True)
    scores_arr = np.array(scores)
    correct_arr = np.array(correct)
    n_positive = int(positive_mask.sum())
    points = []
    for threshold in sorted(set(scores), reverse=True):
        predicted = scores_arr >= threshold
        tp = int((predicted & correct_arr).sum())
        fp = int((predicted & ~correct_arr).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_positive
        points.append((float(threshold), precision, recall))
    return PRCurve(points=points)


def random_baseline(
    gt: GroundTruthMatrix,
    k_max: int,
    n_trials: int = 100,
    seed: int = DEFAULT_SEED,
) -> RecallCurve:
    """Monte Carlo random guesser: per query and trial, draw K distinct
    database indices uniformly; Recall@K = hit events / (|Q+| * n_trials).

    Each trial draws one random permutation whose length-K prefixes are the
    K-subsets, so the curve is monotone by construction and each K's draw is
    uniform.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    rng = np.random.default_rng(seed)
    k_max = min(k_max, gt.n_database)
    n_positive = int((gt.positives_per_query() > 0).sum())
    if n_positive == 0:
        return RecallCurve(values=np.zeros(k_max))
    hit_counts = np.zeros(k_max, dtype=np.int64)
    for qi in range(gt.n_queries):
        labels = gt.labels[:, qi]
        draws = np.argsort(rng.random((n_trials, gt.n_database)), axis=1)[:, :k_max]
        if not labels.any():
            continue
        hits = labels[draws]
        hit_counts += np.cumsum(hits, axis=1).astype(bool).sum(axis=0)
    return RecallCurve(values=hit_counts / (n_positive * n_trials))


def brute_force_baseline(
    query_keypoints: Sequence[KeypointSet],
    database_keypoints: Sequence[KeypointSet],
    matcher: Matcher = match_keypoints,
) -> tuple[list[np.ndarray], np.ndarray, CostCounters]:
    """Exhaustive local matching over every query-database pair.

    Returns per-query rankings by descending inlier count (ties by ascending
    database index), the inlier-count table, and counters recording exactly
    |Q| * |D| matcher invocations.
    """
    n_q, n_d = len(query_keypoints), len(database_keypoints)
    counters = CostCounters()
    t0 = time.perf_counter()
    counts = np.zeros((n_q, n_d), dtype=np.int64)
    for qi, q_kps in enumerate(query_keypoints):
        for di, d_kps in enumerate(database_keypoints):
            counts[qi, di] = len(matcher(q_kps, d_kps))
            counters.local_match_invocations += 1
    rankings = [
        np.lexsort((np.arange(n_d), -counts[qi])).astype(np.int64) for qi in range(n_q)
    ]
    counters.wall_time_s["brute_force_matching"] = time.perf_counter() - t0
    return rankings, counts, counters


def hierarchical_match(
    similarity: SimilarityMatrix,
    query_keypoints: Sequence[KeypointSet],
    database_keypoints: Sequence[KeypointSet],
    k: int,
    *,
    matcher: Matcher = match_keypoints,
    exclude: Optional[dict[int, set[int]]] = None,
    threads: int = 1,
) -> tuple[list[RerankedMatch], list[CorrespondenceSet], list[CandidateSet], CostCounters]:
    """Top-K retrieval then local matching and inlier-count reranking.

    Returns the best match, its correspondence set, and the candidate set per
    query, plus counters: |Q| * |D| descriptor comparisons and
    |Q| * min(K, |D|) matcher invocations. Parallel scheduling never changes
    the output; results are keyed by query index.
    """
    n_q = similarity.n_queries
    counters = CostCounters()
    counters.global_descriptor_comparisons = n_q * similarity.n_database
    t0 = time.perf_counter()

    def one_query(qi: int):
        banned = exclude.get(qi, set()) if exclude else set()
        cands = top_k(similarity, qi, k, exclude=banned)
        corrs = [matcher(query_keypoints[qi], database_keypoints[j]) for j in cands.database_indices]
        best = rerank(cands, corrs)
        best_pos = cands.database_indices.index(best.database_index)
        return best, corrs[best_pos], cands, len(corrs)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_query, range(n_q)))
    else:
        results = [one_query(qi) for qi in range(n_q)]

    best_matches = [r[0] for r in results]
    best_corrs = [r[1] for r in results]
    candidate_sets = [r[2] for r in results]
    counters.local_match_invocations = sum(r[3] for r in results)
    counters.wall_time_s["hierarchical_matching"] = time.perf_counter() - t0
    return best_matches, best_corrs, candidate_sets, counters


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Resolved configuration for one pipeline run."""

    query_manifest: str
    database_manifest: str
    k: int = 10
    chi: float = DEFAULT_CHI_PX
    n_trials: int = 100
    seed: int = DEFAULT_SEED
    threads: int = 1
    output_dir: Optional[str] = None
    baseline: Optional[str] = None  # None | "random" | "bruteforce"
    self_match_allowed: bool = False
    use_builtin_features: bool = False
    distance_3d: bool = False
    inlier_only_error: bool = False
    # externally produced correspondences ("ULC1") bypass the built-in matcher
    correspondence_file: Optional[str] = None
    # built-in feature stack knobs
    ratio: float = 0.8
    max_keypoints: int = 512
    patch_size: int = 16

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.chi <= 0:
            raise ValueError(f"chi must be > 0, got {self.chi}")
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.baseline not in (None, "random", "bruteforce"):
            raise ValueError(f"unknown baseline '{self.baseline}'")
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.max_keypoints < 1:
            raise ValueError(f"max_keypoints must be >= 1, got {self.max_keypoints}")

    def echo(self) -> dict:
        return {
            "query_manifest": str(self.query_manifest),
            "database_manifest": str(self.database_manifest),
            "k": self.k,
            "chi": self.chi,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": None if self.output_dir is None else str(self.output_dir),
            "baseline": self.baseline,
            "self_match_allowed": self.self_match_allowed,
            "use_builtin_features": self.use_builtin_features,
            "distance_3d": self.distance_3d,
            "inlier_only_error": self.inlier_only_error,
            "correspondence_file": (
                None if self.correspondence_file is None else str(self.correspondence_file)
            ),
            "ratio": self.ratio,
            "max_keypoints": self.max_keypoints,
            "patch_size": self.patch_size,
        }


@dataclass
class PipelineRun:
    config: RunConfig
    registrations: list[RegistrationResult]
    accepted: list[RegistrationResult]
    best_matches: list[RerankedMatch]
    rankings: list[np.ndarray]
    ground_truth: GroundTruthMatrix
    recall: RecallCurve
    pr: PRCurve
    counters: CostCounters
    metrics: dict
    ious: list[tuple[str, str, float]] = field(default_factory=list)
    baseline_recall: Optional[RecallCurve] = None


def _side_features(
    manifest: DatasetManifest, config: "RunConfig"
) -> tuple[np.ndarray, list[KeypointSet]]:
    """Descriptor matrix and keypoint list in manifest order."""
    if config.use_builtin_features:
        rows, kps = [], []
        for rec in manifest.records:
            image_path = manifest.root / "images" / f"{rec.image_id}.pgm"
            if not image_path.is_file():
                raise ConsistencyError(
                    f"image '{rec.image_id}': builtin features requested but {image_path} missing"
                )
            img = load_pgm(image_path)
            rows.append(extract_global(img))
            kps.append(
                extract_features(
                    img, rec.image_id,
                    max_keypoints=config.max_keypoints, patch_size=config.patch_size,
                )
            )
        return np.vstack(rows), kps
    if manifest.descriptors is None:
        raise ConsistencyError(
            f"manifest '{manifest.name}': no descriptor file and builtin features not requested"
        )
    if manifest.keypoints is None:
        raise ConsistencyError(
            f"manifest '{manifest.name}': no keypoint file and builtin features not requested"
        )
    id_to_row = {image_id: i for i, image_id in enumerate(manifest.descriptors.image_ids)}
    rows = []
    kps = []
    for rec in manifest.records:
        if rec.image_id not in id_to_row:
            raise ConsistencyError(f"image '{rec.image_id}': no descriptor in descriptor file")
        if rec.image_id not in manifest.keypoints:
            raise ConsistencyError(f"image '{rec.image_id}': no keypoints in keypoint file")
        rows.append(manifest.descriptors.values[id_to_row[rec.image_id]])
        kps.append(manifest.keypoints[rec.image_id])
    return np.vstack(rows), kps


def _float_csv(value: float) -> str:
    return repr(float(value))


def run_pipeline(config: RunConfig) -> PipelineRun:
    """Retrieval -> top-K -> matching -> rerank -> homography -> error filter
    -> optional mask IoU, with metrics and invocation counters.

    Per-pair failures are recorded as rejected statuses, never aborted. With
    an output directory set, writes metrics.json, recall.csv, pr.csv,
    registrations.jsonl, iou.csv, overlay PPMs, and timings.json; everything
    except timings.json is byte-stable under a fixed config and seed.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    qm = load_manifest(config.query_manifest)
    dm = load_manifest(config.database_manifest)
    q_desc, q_kps = _side_features(qm, config)
    d_desc, d_kps = _side_features(dm, config)
    timings["load_and_features"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    similarity = compute_similarity(q_desc, d_desc)
    timings["retrieval"] = time.perf_counter() - t1

    exclude: dict[int, set[int]] = {}
    if not config.self_match_allowed:
        for qi, rec in enumerate(qm.records):
            try:
                exclude[qi] = {dm.index_of(rec.image_id)}
            except KeyError:
                pass

    if config.correspondence_file is not None:
        matcher: Matcher = matcher_from_table(load_correspondences(config.correspondence_file))
    else:
        matcher = partial(match_keypoints, ratio=config.ratio)
    best_matches, best_corrs, _, counters = hierarchical_match(
        similarity, q_kps, d_kps, config.k, matcher=matcher,
        exclude=exclude, threads=config.threads,
    )
    counters.wall_time_s.update(timings)

    t2 = time.perf_counter()
    registrations: list[RegistrationResult] = []
    for best, corr in zip(best_matches, best_corrs):
        qid = qm.records[best.query_index].image_id
        did = dm.records[best.database_index].image_id
        try:
            est = estimate_homography(corr, seed=derive_pair_seed(config.seed, qid, did))
            subset = est.consensus if config.inlier_only_error else None
            err = reprojection_error(est.homography, corr, subset=subset)
            registrations.append(
                RegistrationResult(
                    query_image_id=qid,
                    database_image_id=did,
                    homography=est.homography,
                    reprojection_error_px=err,
                    inlier_count=best.inlier_count,
                    status="pending",
                )
            )
        except InsufficientMatchesError:
            registrations.append(
                RegistrationResult(qid, did, None, None, best.inlier_count,
                                   STATUS_REJECTED_INSUFFICIENT)
            )
        except DegenerateGeometryError:
            registrations.append(
                RegistrationResult(qid, did, None, None, best.inlier_count,
                                   STATUS_REJECTED_DEGENERATE)
            )
    accepted = filter_by_threshold(registrations, config.chi)
    counters.wall_time_s["registration"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    gt = build_ground_truth(
        [r.position for r in qm.records],
        [r.position for r in dm.records],
        qm.localization_radius_m,
        use_3d=config.distance_3d,
    )
    if not config.self_match_allowed:
        for qi, banned in exclude.items():
            for j in banned:
                gt.labels[j, qi] = False
    rankings = [full_ranking(similarity, qi, exclude=exclude.get(qi, ())) for qi in range(len(qm))]
    # Self-exclusion shortens rankings by one; the curve stops where they do.
    k_max = min(config.k, min((len(r) for r in rankings), default=0))
    recall = recall_at_k(rankings, gt, k_max)
    pr = pr_curve([(m.database_index, float(m.inlier_count)) for m in best_matches], gt)

    accepted_correct = sum(
        1
        for res in accepted
        if gt.labels[dm.index_of(res.database_image_id), qm.index_of(res.query_image_id)]
    )
    chi_precision = accepted_correct / len(accepted) if accepted else None

    baseline_recall: Optional[RecallCurve] = None
    if config.baseline == "random":
        baseline_recall = random_baseline(gt, k_max, n_trials=config.n_trials, seed=config.seed)
    elif config.baseline == "bruteforce":
        bf_rankings, _, bf_counters = brute_force_baseline(q_kps, d_kps)
        baseline_recall = recall_at_k(bf_rankings, gt, k_max)
        counters.wall_time_s.update(bf_counters.wall_time_s)
        counters.wall_time_s["bruteforce_invocations"] = float(
            bf_counters.local_match_invocations
        )
    timings["metrics"] = time.perf_counter() - t3

    ious: list[tuple[str, str, float]] = []
    overlays: list[tuple[str, maskops.WarpedOverlay]] = []
    for res in accepted:
        q_rec = qm.records[qm.index_of(res.query_image_id)]
        d_rec = dm.records[dm.index_of(res.database_image_id)]
        if q_rec.mask_path is None or d_rec.mask_path is None:
            continue
        q_mask = load_mask(qm.root / q_rec.mask_path)
        d_mask = load_mask(dm.root / d_rec.mask_path)
        for mask, rec in ((q_mask, q_rec), (d_mask, d_rec)):
            if (mask.width_px, mask.height_px) != (rec.width_px, rec.height_px):
                raise ConsistencyError(
                    f"image '{rec.image_id}': mask is {mask.width_px}x{mask.height_px}, "
                    f"manifest says {rec.width_px}x{rec.height_px}"
                )
        overlay = maskops.make_overlay(d_mask, q_mask, res.homography)
        ious.append((res.query_image_id, res.database_image_id, overlay.iou))
        overlays.append((f"{res.query_image_id}__{res.database_image_id}.ppm", overlay))

    metrics = {
        "config": config.echo(),
        "n_queries": len(qm),
        "n_database": len(dm),
        "n_queries_with_positives": int((gt.positives_per_query() > 0).sum()),
        "counters": {
            "global_descriptor_comparisons": counters.global_descriptor_comparisons,
            "local_match_invocations": counters.local_match_invocations,
        },
        "recall_at_k": {
            "k": list(range(1, recall.k_max + 1)),
            "retrieval": [float(v) for v in recall.values],
        },
        "pr_curve": [[t, p, r] for t, p, r in pr.points],
        "pr_no_positives": pr.no_positives,
        "chi_filtered_precision": chi_precision,
        "accepted_pairs": len(accepted),
        "iou": {f"{q}__{d}": v for q, d, v in ious},
    }
    if baseline_recall is not None:
        metrics["recall_at_k"][config.baseline] = [float(v) for v in baseline_recall.values]

    run = PipelineRun(
        config=config,
        registrations=registrations,
        accepted=accepted,
        best_matches=best_matches,
        rankings=rankings,
        ground_truth=gt,
        recall=recall,
        pr=pr,
        counters=counters,
        metrics=metrics,
        ious=ious,
        baseline_recall=baseline_recall,
    )
    if config.output_dir is not None:
        _emit_artifacts(run, overlays, timings)
    return run


def _emit_artifacts(
    run: PipelineRun, overlays: list[tuple[str, maskops.WarpedOverlay]], timings: dict[str, float]
) -> None:
    out = Path(run.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(run.metrics, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    write_registrations(out / "registrations.jsonl", run.registrations)

    lines = ["series,k,recall"]
    for k, v in zip(run.metrics["recall_at_k"]["k"], run.metrics["recall_at_k"]["retrieval"]):
        lines.append(f"retrieval,{k},{_float_csv(v)}")
    if run.baseline_recall is not None:
        for k, v in zip(
            run.metrics["recall_at_k"]["k"], run.metrics["recall_at_k"][run.config.baseline]
        ):
            lines.append(f"{run.config.baseline},{k},{_float_csv(v)}")
    (out / "recall.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    pr_lines = ["threshold,precision,recall"]
    for t, p, r in run.pr.points:
        pr_lines.append(f"{_float_csv(t)},{_float_csv(p)},{_float_csv(r)}")
    (out / "pr.csv").write_text("\n".join(pr_lines) + "\n", encoding="utf-8")

    iou_lines = ["query_image_id,database_image_id,iou"]
    for q, d, v in run.ious:
        iou_lines.append(f"{q},{d},{_float_csv(v)}")
    (out / "iou.csv").write_text("\n".join(iou_lines) + "\n", encoding="utf-8")

    if overlays:
        overlay_dir = out / "overlays"
        overlay_dir.mkdir(exist_ok=True)
        for name, overlay in overlays:
            maskops.write_overlay(overlay, overlay_dir / name)

    all_timings = dict(run.counters.wall_time_s)
    all_timings.update(timings)
    (out / "timings.json").write_text(
        json.dumps(all_timings, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
