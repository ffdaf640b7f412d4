import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from underloc.dataio import BinaryMask
from underloc.geometry import Homography
from underloc.maskops import make_overlay, mask_iou, merge_masks, warp_mask, write_overlay


def mask_from(bits):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(width_px=bits.shape[1], height_px=bits.shape[0], bits=bits)


def random_mask(rng, w=16, h=16, p=0.5):
    return mask_from(rng.random((h, w)) < p)


def translation(dx, dy):
    m = np.eye(3)
    m[0, 2] = dx
    m[1, 2] = dy
    return Homography(m)


class TestMergeMasks:
    def test_disjoint_popcounts_add(self):
        a = np.zeros((4, 4), dtype=bool)
        a[0, :] = True  # popcount 4... widen to 5
        a[1, 0] = True
        b = np.zeros((4, 4), dtype=bool)
        b[2:4, 1:4] = True  # 6... adjust to 7
        b[1, 3] = True
        ma, mb = mask_from(a), mask_from(b)
        assert ma.popcount == 5 and mb.popcount == 7
        assert merge_masks([ma, mb]).popcount == 12

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        m = random_mask(rng)
        assert merge_masks([m, m]) == m

    def test_empty_list_uses_dims(self):
        m = merge_masks([], dims=(5, 3))
        assert (m.width_px, m.height_px) == (5, 3)
        assert m.popcount == 0

    def test_empty_list_requires_dims(self):
        with pytest.raises(ValueError):
            merge_masks([])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            merge_masks([mask_from(np.zeros((2, 2))), mask_from(np.zeros((3, 3)))])

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_commutative_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_mask(rng, 8, 8) for _ in range(3))
        assert merge_masks([a, b]) == merge_masks([b, a])
        assert merge_masks([merge_masks([a, b]), c]) == merge_masks([a, merge_masks([b, c])])


class TestWarpMask:
    def test_identity_bit_exact(self):
        rng = np.random.default_rng(1)
        m = random_mask(rng, 20, 14)
        warped = warp_mask(m, Homography.identity(), (20, 14))
        assert warped == m

    def test_pure_translation_shifts_against_offset(self):
        # single true pixel at (x=12, y=5); H maps database -> query as
        # q = d + (10, 0), so output pixel (2, 5) samples query (12.5, 5.5)
        bits = np.zeros((10, 20), dtype=bool)
        bits[5, 12] = True
        warped = warp_mask(mask_from(bits), translation(10.0, 0.0), (20, 10))
        expected = np.zeros((10, 20), dtype=bool)
        expected[5, 2] = True
        assert np.array_equal(warped.bits, expected)
        # the 10-px band that mapped outside the query mask stays false
        assert not warped.bits[:, 10:].any()

    def test_scale_disk_area(self):
        # centered disk, H = 2x uniform scale database->query: the warped
        # disk shrinks to half radius, quarter area
        size = 200
        yy, xx = np.mgrid[0:size, 0:size]
        disk = (xx + 0.5 - 100) ** 2 + (yy + 0.5 - 100) ** 2 <= 60.0**2
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        warped = warp_mask(mask_from(disk), h, (size, size))
        analytic = np.pi * 30.0**2
        assert abs(warped.popcount - analytic) / analytic <= 0.05

    def test_round_trip_iou(self):
        rng = np.random.default_rng(2)
        size = 100
        bits = np.zeros((size, size), dtype=bool)
        bits[30:70, 25:75] = rng.random((40, 50)) < 0.6  # >= 20 px from border
        m = mask_from(bits)
        h = Homography(
            np.array([[0.98, -0.05, 3.0], [0.05, 0.98, -2.0], [0.0, 0.0, 1.0]])
        )
        there = warp_mask(m, h.inverse(), (size, size))
        back = warp_mask(there, h, (size, size))
        assert mask_iou(back, m) >= 0.95

    def test_out_of_bounds_false(self):
        m = mask_from(np.ones((4, 4), dtype=bool))
        warped = warp_mask(m, translation(100.0, 100.0), (4, 4))
        assert warped.popcount == 0


class TestMaskIoU:
    def test_identical(self):
        rng = np.random.default_rng(3)
        m = random_mask(rng)
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        a[0] = True
        b = np.zeros((4, 4), dtype=bool)
        b[2] = True
        assert mask_iou(mask_from(a), mask_from(b)) == 0.0

    def test_subset_quarter(self):
        a = np.zeros((20, 20), dtype=bool)
        a[0:5, 0:5] = True  # 25 px
        b = np.zeros((20, 20), dtype=bool)
        b[0:10, 0:10] = True  # 100 px
        assert mask_iou(mask_from(a), mask_from(b)) == 0.25

    def test_empty_union_zero(self):
        z = mask_from(np.zeros((3, 3)))
        assert mask_iou(z, z) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mask_iou(mask_from(np.zeros((2, 2))), mask_from(np.zeros((3, 2))))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_mask(rng, 12, 9), random_mask(rng, 12, 9)
        iou = mask_iou(a, b)
        assert iou == mask_iou(b, a)
        assert 0.0 <= iou <= 1.0


class TestOverlay:
    def test_overlay_ppm(self, tmp_path):
        rng = np.random.default_rng(4)
        db, q = random_mask(rng, 10, 8), random_mask(rng, 10, 8)
        overlay = make_overlay(db, q, Homography.identity())
        assert overlay.iou == mask_iou(db, q)
        path = tmp_path / "o.ppm"
        write_overlay(overlay, path)
        data = path.read_bytes()
        assert data.startswith(b"P6\n10 8\n255\n")
        assert len(data) == len(b"P6\n10 8\n255\n") + 10 * 8 * 3
