import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from underloc.dataio import ConsistencyError, GeoPosition, KeypointSet
from underloc.evaluation import (
    CostCounters,
    GroundTruthMatrix,
    MEAN_EARTH_RADIUS_M,
    brute_force_baseline,
    build_ground_truth,
    hierarchical_match,
    pr_curve,
    random_baseline,
    recall_at_k,
)
from underloc.matching import CorrespondenceSet, match_keypoints
from underloc.retrieval import compute_similarity


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle oracle, independent of the ENU projection under test."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * MEAN_EARTH_RADIUS_M * math.asin(math.sqrt(a))


def hypergeometric_recall(n_database, n_positive, k):
    """Closed-form P(>=1 positive among K draws without replacement)."""
    if k >= n_database - n_positive + 1:
        return 1.0
    return 1.0 - math.comb(n_database - n_positive, k) / math.comb(n_database, k)


def local(x, y):
    return GeoPosition(x=x, y=y)


def gt_from(labels):
    return GroundTruthMatrix(labels=np.asarray(labels, dtype=bool), radius_m=1.0)


class TestBuildGroundTruth:
    def test_identical_positions_true(self):
        gt = build_ground_truth([local(1.0, 2.0)], [local(1.0, 2.0)], radius_m=0.001)
        assert gt.labels[0, 0]

    def test_strict_inequality_3_4_5(self):
        q, d = [local(0.0, 0.0)], [local(3.0, 4.0)]
        assert not build_ground_truth(q, d, radius_m=5.0).labels[0, 0]
        assert build_ground_truth(q, d, radius_m=5.01).labels[0, 0]

    def test_geodetic_vs_haversine_oracle(self):
        q = [GeoPosition(latitude=0.0, longitude=10.0)]
        d = [GeoPosition(latitude=0.001, longitude=10.0)]
        oracle = haversine_m(0.0, 10.0, 0.001, 10.0)
        assert not build_ground_truth(q, d, radius_m=100.0).labels[0, 0]
        assert build_ground_truth(q, d, radius_m=120.0).labels[0, 0]
        assert 100.0 < oracle < 120.0

    @given(
        lat0=st.floats(-60, 60),
        dlat=st.floats(-0.004, 0.004),
        dlon=st.floats(-0.004, 0.004),
    )
    @settings(max_examples=100)
    def test_enu_within_point1_percent_of_haversine(self, lat0, dlat, dlon):
        lon0 = 15.0
        oracle = haversine_m(lat0, lon0, lat0 + dlat, lon0 + dlon)
        if oracle < 1.0:  # sub-meter differences are dominated by rounding
            return
        q = [GeoPosition(latitude=lat0, longitude=lon0)]
        d = [GeoPosition(latitude=lat0 + dlat, longitude=lon0 + dlon)]
        for radius in (oracle * 0.999, oracle * 1.001):
            # strict < against a radius bracketing the oracle: the projected
            # distance must sit within 0.1% of the oracle
            below = build_ground_truth(q, d, radius_m=radius).labels[0, 0]
            if radius < oracle * (1 - 0.001):
                assert not below
            if radius > oracle * (1 + 0.001):
                assert below

    def test_mixed_conventions_error(self):
        with pytest.raises(ConsistencyError, match="convention"):
            build_ground_truth(
                [local(0.0, 0.0)], [GeoPosition(latitude=0.0, longitude=0.0)], radius_m=1.0
            )

    def test_depth_3d_flag(self):
        q = [GeoPosition(latitude=0.0, longitude=0.0, depth=0.0)]
        d = [GeoPosition(latitude=0.0, longitude=0.0, depth=30.0)]
        assert build_ground_truth(q, d, radius_m=5.0).labels[0, 0]
        assert not build_ground_truth(q, d, radius_m=5.0, use_3d=True).labels[0, 0]

    def test_radius_positive(self):
        with pytest.raises(ValueError):
            build_ground_truth([local(0, 0)], [local(0, 0)], radius_m=0.0)


class TestRecallAtK:
    def test_rank_one_hits(self):
        gt = gt_from([[True, True], [False, False]])
        rankings = [np.array([0, 1]), np.array([0, 1])]
        assert recall_at_k(rankings, gt, 2).at(1) == 1.0

    def test_hits_at_ranks_2_and_4(self):
        # query 0 hits at rank 2, query 1 at rank 4
        labels = np.zeros((4, 2), dtype=bool)
        labels[1, 0] = True
        labels[3, 1] = True
        rankings = [np.array([0, 1, 2, 3]), np.array([0, 1, 2, 3])]
        curve = recall_at_k(rankings, gt_from(labels), 4)
        assert np.allclose(curve.values, [0.0, 0.5, 0.5, 1.0])

    def test_exhaustive_k(self):
        rng = np.random.default_rng(0)
        labels = np.zeros((6, 4), dtype=bool)
        for q in range(4):
            labels[rng.integers(0, 6), q] = True
        rankings = [rng.permutation(6) for _ in range(4)]
        assert recall_at_k(rankings, gt_from(labels), 6).at(6) == 1.0

    def test_zero_positive_queries_excluded(self):
        labels = np.zeros((3, 2), dtype=bool)
        labels[0, 0] = True  # query 1 has no positives
        rankings = [np.array([0, 1, 2]), np.array([0, 1, 2])]
        assert recall_at_k(rankings, gt_from(labels), 1).at(1) == 1.0

    def test_short_ranking_rejected(self):
        gt = gt_from([[True], [False], [False]])
        with pytest.raises(ValueError, match="shorter"):
            recall_at_k([np.array([0])], gt, 3)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_monotone_nondecreasing(self, seed):
        rng = np.random.default_rng(seed)
        n_d, n_q = int(rng.integers(2, 20)), int(rng.integers(1, 8))
        labels = rng.random((n_d, n_q)) < 0.3
        rankings = [rng.permutation(n_d) for _ in range(n_q)]
        curve = recall_at_k(rankings, gt_from(labels), n_d)
        assert np.all(np.diff(curve.values) >= 0)
        assert np.all((curve.values >= 0) & (curve.values <= 1))


class TestPRCurve:
    def test_all_correct_precision_one(self):
        gt = gt_from([[True, False], [False, True]])
        curve = pr_curve([(0, 3.0), (1, 7.0)], gt)
        assert all(p == 1.0 for _, p, _ in curve.points)
        assert curve.points[-1][2] == 1.0

    def test_two_point_sweep(self):
        # both queries have positives; best match correct only for query 0
        gt = gt_from([[True, True], [False, False]])
        curve = pr_curve([(0, 9.0), (1, 5.0)], gt)
        assert curve.points[0] == (9.0, 1.0, 0.5)
        assert curve.points[1][1] == 0.5

    def test_no_positives_flagged(self):
        gt = gt_from([[False], [False]])
        curve = pr_curve([(0, 1.0)], gt)
        assert curve.no_positives and curve.points == []

    def test_loosest_threshold_precision(self):
        rng = np.random.default_rng(1)
        n_d, n_q = 10, 6
        labels = rng.random((n_d, n_q)) < 0.4
        best = [(int(rng.integers(0, n_d)), float(rng.random())) for _ in range(n_q)]
        curve = pr_curve(best, gt_from(labels))
        positive_queries = [q for q in range(n_q) if labels[:, q].any()]
        correct = sum(1 for q in positive_queries if labels[best[q][0], q])
        assert curve.points[-1][1] == pytest.approx(correct / len(positive_queries))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_bounds_and_recall_monotone(self, seed):
        rng = np.random.default_rng(seed)
        n_d, n_q = int(rng.integers(2, 12)), int(rng.integers(1, 8))
        labels = rng.random((n_d, n_q)) < 0.4
        best = [(int(rng.integers(0, n_d)), float(rng.random())) for _ in range(n_q)]
        curve = pr_curve(best, gt_from(labels))
        recalls = [r for _, _, r in curve.points]
        assert all(0 <= p <= 1 and 0 <= r <= 1 for _, p, r in curve.points)
        # thresholds descend, so recall never decreases along the sweep
        assert all(r2 >= r1 for r1, r2 in zip(recalls, recalls[1:]))


class TestRandomBaseline:
    def test_all_true_one(self):
        gt = gt_from(np.ones((5, 3)))
        assert np.all(random_baseline(gt, 5, n_trials=20, seed=0).values == 1.0)

    def test_all_false_zero(self):
        gt = gt_from(np.zeros((5, 3)))
        assert np.all(random_baseline(gt, 5, n_trials=20, seed=0).values == 0.0)

    def test_within_3_sigma_of_hypergeometric(self):
        n_d, g, n_q, n = 60, 3, 30, 200
        rng = np.random.default_rng(2)
        labels = np.zeros((n_d, n_q), dtype=bool)
        for q in range(n_q):
            labels[rng.choice(n_d, g, replace=False), q] = True
        curve = random_baseline(gt_from(labels), 10, n_trials=n, seed=7)
        for k in (1, 5, 10):
            p = hypergeometric_recall(n_d, g, k)
            sigma = math.sqrt(p * (1 - p) / (n_q * n))
            assert abs(curve.at(k) - p) <= 3 * sigma

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(3)
        labels = rng.random((20, 5)) < 0.2
        a = random_baseline(gt_from(labels), 8, n_trials=50, seed=11)
        b = random_baseline(gt_from(labels), 8, n_trials=50, seed=11)
        assert np.array_equal(a.values, b.values)

    def test_monotone(self):
        rng = np.random.default_rng(4)
        labels = rng.random((30, 8)) < 0.15
        curve = random_baseline(gt_from(labels), 12, n_trials=40, seed=5)
        assert np.all(np.diff(curve.values) >= 0)


def stub_keypoints(image_id, n=0):
    return KeypointSet(
        image_id=image_id,
        points=np.empty((0, 2), dtype=np.float32),
        descriptors=np.empty((0, 4), dtype=np.float32),
        width=4,
    )


def counting_matcher(counts):
    """Matcher stub returning a correspondence set whose length is looked up
    in a (query_id, database_id) -> n table."""

    def matcher(q, d):
        n = counts.get((q.image_id, d.image_id), 0)
        pts = np.zeros((n, 2), dtype=np.float32)
        return CorrespondenceSet(q.image_id, d.image_id, pts, pts)

    return matcher


class TestBruteForceBaseline:
    def test_invocation_count_3x4(self):
        qs = [stub_keypoints(f"q{i}") for i in range(3)]
        ds = [stub_keypoints(f"d{j}") for j in range(4)]
        _, _, counters = brute_force_baseline(qs, ds, matcher=counting_matcher({}))
        assert counters.local_match_invocations == 12

    def test_identical_sets_rank_first(self):
        rng = np.random.default_rng(5)
        base_desc = rng.normal(size=(6, 8)).astype(np.float32)
        base_pts = rng.uniform(10, 90, size=(6, 2)).astype(np.float32)

        def kp(image_id, jitter):
            return KeypointSet(
                image_id=image_id,
                points=base_pts,
                descriptors=(base_desc + jitter).astype(np.float32),
                width=8,
            )

        qs = [kp("q0", 0.0)]
        ds = [kp("d_far", 5.0), kp("d_same", 0.0), kp("d_off", 2.5)]
        rankings, counts, _ = brute_force_baseline(qs, ds, matcher=match_keypoints)
        assert rankings[0][0] == 1
        assert counts[0, 1] == 6

    def test_tie_break_ascending_index(self):
        qs = [stub_keypoints("q0")]
        ds = [stub_keypoints(f"d{j}") for j in range(3)]
        rankings, _, _ = brute_force_baseline(qs, ds, matcher=counting_matcher({}))
        assert rankings[0].tolist() == [0, 1, 2]


class TestHierarchicalMatch:
    def test_counters_and_best_selection(self):
        rng = np.random.default_rng(6)
        q_desc = rng.normal(size=(2, 4)).astype(np.float32)
        d_desc = rng.normal(size=(7, 4)).astype(np.float32)
        similarity = compute_similarity(q_desc, d_desc)
        qs = [stub_keypoints(f"q{i}") for i in range(2)]
        ds = [stub_keypoints(f"d{j}") for j in range(7)]
        counts = {("q0", "d3"): 9, ("q1", "d5"): 4}
        best, corrs, cands, counters = hierarchical_match(
            similarity, qs, ds, k=3, matcher=counting_matcher(counts)
        )
        assert counters.local_match_invocations == 2 * 3
        assert counters.global_descriptor_comparisons == 2 * 7
        for qi, b in enumerate(best):
            top = cands[qi].database_indices
            winner = max(
                top,
                key=lambda j: (counts.get((f"q{qi}", f"d{j}"), 0), -top.index(j)),
            )
            expected = counts.get((f"q{qi}", f"d{winner}"), 0)
            assert b.inlier_count == expected
        assert all(len(c) == b.inlier_count for c, b in zip(corrs, best))

    def test_invocation_ratio_structure(self):
        rng = np.random.default_rng(7)
        n_q, n_d, k = 3, 50, 5
        similarity = compute_similarity(
            rng.normal(size=(n_q, 4)).astype(np.float32),
            rng.normal(size=(n_d, 4)).astype(np.float32),
        )
        qs = [stub_keypoints(f"q{i}") for i in range(n_q)]
        ds = [stub_keypoints(f"d{j}") for j in range(n_d)]
        _, _, _, hier = hierarchical_match(similarity, qs, ds, k=k,
                                           matcher=counting_matcher({}))
        _, _, brute = brute_force_baseline(qs, ds, matcher=counting_matcher({}))
        assert brute.local_match_invocations / hier.local_match_invocations == n_d / k

    def test_threads_do_not_change_output(self):
        rng = np.random.default_rng(8)
        similarity = compute_similarity(
            rng.normal(size=(5, 4)).astype(np.float32),
            rng.normal(size=(9, 4)).astype(np.float32),
        )
        qs = [stub_keypoints(f"q{i}") for i in range(5)]
        ds = [stub_keypoints(f"d{j}") for j in range(9)]
        counts = {(f"q{i}", f"d{j}"): int(rng.integers(0, 6)) for i in range(5) for j in range(9)}
        best1, _, _, _ = hierarchical_match(similarity, qs, ds, k=4,
                                            matcher=counting_matcher(counts), threads=1)
        best4, _, _, _ = hierarchical_match(similarity, qs, ds, k=4,
                                            matcher=counting_matcher(counts), threads=4)
        assert best1 == best4
