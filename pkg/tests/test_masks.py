"""Mask algebra against brute-force oracles."""

import numpy as np
import pytest

from adaptvos.masks import (
    distance_transform,
    erode,
    iou,
    load_mask,
    save_mask,
    select_negatives,
    select_positives,
    threshold_minus_negatives,
)


def _brute_erode(mask, size):
    r = size // 2
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or not mask[yy, xx]:
                        ok = False
                        break
                if not ok:
                    break
            out[y, x] = ok
    return out


def _brute_edt(mask):
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    out = np.full((h, w), np.inf)
    if ys.size == 0:
        return out
    yy, xx = np.mgrid[0:h, 0:w]
    for fy, fx in zip(ys, xs):
        out = np.minimum(out, np.sqrt((yy - fy) ** 2.0 + (xx - fx) ** 2.0))
    return out


class TestErode:
    def test_size_one_identity(self):
        gen = np.random.default_rng(0)
        mask = gen.uniform(size=(9, 9)) > 0.5
        np.testing.assert_array_equal(erode(mask, 1), mask)

    def test_empty_stays_empty(self):
        assert not erode(np.zeros((6, 6), dtype=bool), 3).any()

    def test_full_5x5_size3_keeps_interior(self):
        out = erode(np.ones((5, 5), dtype=bool), 3)
        expected = np.zeros((5, 5), dtype=bool)
        expected[1:4, 1:4] = True
        np.testing.assert_array_equal(out, expected)

    def test_matches_brute_force(self):
        gen = np.random.default_rng(1)
        for _ in range(20):
            mask = gen.uniform(size=(12, 15)) > 0.35
            for size in (1, 3, 5):
                np.testing.assert_array_equal(erode(mask, size), _brute_erode(mask, size))

    def test_result_subset_of_input(self):
        gen = np.random.default_rng(2)
        for _ in range(10):
            mask = gen.uniform(size=(10, 10)) > 0.3
            eroded = erode(mask, 3)
            assert not (eroded & ~mask).any()

    def test_even_size_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            erode(np.ones((3, 3), dtype=bool), 2)
        with pytest.raises(ValueError, match="odd"):
            erode(np.ones((3, 3), dtype=bool), -1)


class TestDistanceTransform:
    def test_single_pixel(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        dt = distance_transform(mask)
        assert abs(dt[0, 0] - 2 * np.sqrt(2)) < 1e-12
        assert dt[2, 2] == 0.0

    def test_all_foreground_zero(self):
        np.testing.assert_array_equal(distance_transform(np.ones((4, 6), dtype=bool)),
                                      np.zeros((4, 6)))

    def test_empty_is_infinite(self):
        assert np.all(np.isinf(distance_transform(np.zeros((3, 3), dtype=bool))))

    def test_matches_brute_force_random(self):
        gen = np.random.default_rng(3)
        for density in (0.01, 0.1, 0.5):
            for _ in range(5):
                mask = gen.uniform(size=(64, 64)) < density
                got = distance_transform(mask)
                want = _brute_edt(mask)
                np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    def test_lipschitz_across_neighbors(self):
        gen = np.random.default_rng(4)
        mask = gen.uniform(size=(32, 32)) < 0.05
        mask[16, 16] = True
        dt = distance_transform(mask)
        assert np.all(np.abs(np.diff(dt, axis=0)) <= 1.0 + 1e-12)
        assert np.all(np.abs(np.diff(dt, axis=1)) <= 1.0 + 1e-12)

    def test_zero_exactly_on_foreground(self):
        gen = np.random.default_rng(5)
        mask = gen.uniform(size=(20, 20)) < 0.2
        dt = distance_transform(mask)
        np.testing.assert_array_equal(dt == 0.0, mask)


class TestSelections:
    def test_negatives_strict_and_infinite(self):
        dt = np.array([[0.0, 5.0], [np.inf, 4.0]])
        np.testing.assert_array_equal(select_negatives(dt, 4.0),
                                      [[False, True], [True, False]])
        assert not select_negatives(dt, np.inf).any()

    def test_negatives_all_zero_distance(self):
        dt = np.zeros((3, 3))
        assert not select_negatives(dt, 0.0).any()

    def test_negatives_elementwise_oracle(self):
        gen = np.random.default_rng(6)
        dt = distance_transform(gen.uniform(size=(40, 40)) < 0.02)
        d = 8.0
        got = select_negatives(dt, d)
        for y in range(40):
            for x in range(40):
                assert got[y, x] == (dt[y, x] > d)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            select_negatives(np.zeros((2, 2)), -1.0)

    def test_positives_rules(self):
        prob = np.array([[0.98, 0.98], [0.5, 0.99]])
        negatives = np.array([[False, True], [False, False]])
        got = select_positives(prob, 0.97, negatives)
        np.testing.assert_array_equal(got, [[True, False], [False, True]])

    def test_positives_alpha_near_one_empty(self):
        prob = np.full((4, 4), 0.999999)
        assert not select_positives(prob, 1.0 - 1e-9, np.zeros((4, 4), bool)).any()

    def test_positives_disjoint_from_negatives(self):
        gen = np.random.default_rng(7)
        prob = gen.uniform(size=(16, 16))
        negatives = gen.uniform(size=(16, 16)) > 0.5
        pos = select_positives(prob, 0.6, negatives)
        assert not (pos & negatives).any()

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            select_positives(np.zeros((2, 2)), 1.0, np.zeros((2, 2), bool))

    def test_threshold_strict_at_half(self):
        prob = np.full((3, 3), 0.5)
        assert not threshold_minus_negatives(prob).any()

    def test_threshold_removes_hard_negatives(self):
        prob = np.array([[0.9, 0.9]])
        negatives = np.array([[True, False]])
        np.testing.assert_array_equal(threshold_minus_negatives(prob, negatives),
                                      [[False, True]])


class TestIoU:
    def test_identical_nonempty(self):
        mask = np.eye(4, dtype=bool)
        assert iou(mask, mask) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert iou(a, b) == 0.0

    def test_partial_overlap_cell_count(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0:2, 0:2] = True
        b[1:3, 1:3] = True
        assert abs(iou(a, b) - 1.0 / 7.0) < 1e-15

    def test_both_empty_is_one(self):
        assert iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0

    def test_symmetric(self):
        gen = np.random.default_rng(8)
        a = gen.uniform(size=(8, 8)) > 0.5
        b = gen.uniform(size=(8, 8)) > 0.5
        assert iou(a, b) == iou(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            iou(np.zeros((2, 2), bool), np.zeros((3, 3), bool))


class TestPgmRoundTrip:
    def test_bit_exact(self, tmp_path):
        gen = np.random.default_rng(9)
        mask = gen.uniform(size=(17, 23)) > 0.4
        path = tmp_path / "m.pgm"
        save_mask(mask, path)
        np.testing.assert_array_equal(load_mask(path), mask)
        save_mask(load_mask(path), tmp_path / "m2.pgm")
        assert (tmp_path / "m.pgm").read_bytes() == (tmp_path / "m2.pgm").read_bytes()

    def test_non_binary_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 128]))
        with pytest.raises(ValueError, match="binary"):
            load_mask(path)
