import numpy as np
import pytest
from hypothesis import given, strategies as st

from handprior import geometry
from handprior.geometry import (EmptyMask, Point2D, StructuringElement, dilate,
                                erode, mask_contains, project_point_to_mask,
                                distance_ratio_gate)


def random_blob(rng, size=64, p=0.15):
    mask = rng.random((size, size)) < p
    # thicken a little so erosion has something to chew on
    return dilate(mask, 1)


def one_step_erode_oracle(mask, element=StructuringElement.CROSS4):
    """Naive single erosion step: a pixel survives iff its whole neighborhood
    (under the footprint) is foreground, with background outside the raster."""
    h, w = mask.shape
    fp = element.footprint()
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            keep = True
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if not fp[dy + 1, dx + 1]:
                        continue
                    yy, xx = y + dy, x + dx
                    if yy < 0 or xx < 0 or yy >= h or xx >= w or not mask[yy, xx]:
                        keep = False
            out[y, x] = keep
    return out


def l1_distance_map(mask):
    """Brute-force Manhattan distance from every cell to the nearest
    foreground pixel (inf if empty)."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return np.full((h, w), np.inf)
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.abs(yy[:, :, None] - ys) + np.abs(xx[:, :, None] - xs)
    return d.min(axis=2)


class TestErode:
    def test_all_foreground_3x3_one_iteration_leaves_center(self):
        mask = np.ones((3, 3), dtype=bool)
        out = erode(mask, 1)
        expected = np.zeros((3, 3), dtype=bool)
        expected[1, 1] = True
        assert (out == expected).all()

    def test_empty_mask_fixed_point(self):
        mask = np.zeros((16, 16), dtype=bool)
        assert not erode(mask, 12).any()

    def test_zero_iterations_is_copy(self):
        rng = np.random.default_rng(0)
        mask = random_blob(rng)
        out = erode(mask, 0)
        assert (out == mask).all()
        assert out is not mask

    def test_matches_sequential_single_step_oracle(self):
        rng = np.random.default_rng(1)
        mask = random_blob(rng)
        expected = mask
        for _ in range(12):
            expected = one_step_erode_oracle(expected)
        assert (erode(mask, 12) == expected).all()

    def test_result_subset_of_input(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            mask = random_blob(rng)
            assert not (erode(mask, 3) & ~mask).any()


class TestDilate:
    def test_center_pixel_becomes_plus(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        out = dilate(mask, 1)
        expected = np.zeros((5, 5), dtype=bool)
        expected[2, 2] = expected[1, 2] = expected[3, 2] = True
        expected[2, 1] = expected[2, 3] = True
        assert (out == expected).all()

    def test_all_foreground_fixed_point(self):
        mask = np.ones((8, 8), dtype=bool)
        assert dilate(mask, 20).all()

    @pytest.mark.parametrize("k", [1, 12, 75])
    def test_matches_l1_distance_oracle(self, k):
        rng = np.random.default_rng(3)
        mask = random_blob(rng)
        assert (dilate(mask, k) == (l1_distance_map(mask) <= k)).all()

    def test_input_subset_of_result(self):
        rng = np.random.default_rng(4)
        mask = random_blob(rng)
        assert (dilate(mask, 2) | ~mask).all()


class TestMorphologyProperties:
    def test_duality_on_interior_masks(self):
        rng = np.random.default_rng(5)
        for k in (1, 3):
            inner = random_blob(rng, size=32)
            mask = np.zeros((40, 40), dtype=bool)
            mask[4:36, 4:36] = inner
            lhs = dilate(~mask, k)
            rhs = ~erode(mask, k)
            assert (lhs == rhs).all()

    def test_monotonicity(self):
        rng = np.random.default_rng(6)
        m1 = random_blob(rng)
        m2 = m1 | random_blob(rng)
        for k in (1, 4):
            assert not (erode(m1, k) & ~erode(m2, k)).any()
            assert not (dilate(m1, k) & ~dilate(m2, k)).any()

    def test_iteration_composition(self):
        rng = np.random.default_rng(7)
        mask = random_blob(rng)
        assert (erode(mask, 5) == erode(erode(mask, 2), 3)).all()
        assert (dilate(mask, 5) == dilate(dilate(mask, 2), 3)).all()

    def test_square8_element(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        out = dilate(mask, 1, StructuringElement.SQUARE8)
        assert out[1:4, 1:4].all() and out.sum() == 9


class TestProjection:
    def test_point_on_foreground_is_fixed(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[3, 4] = True
        p = project_point_to_mask(Point2D(4.5, 3.5), mask)
        assert (p.x, p.y) == (4.5, 3.5)

    def test_single_candidate(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[10, 10] = True
        p = project_point_to_mask(Point2D(0.0, 0.0), mask)
        assert (p.x, p.y) == (10.5, 10.5)

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMask):
            project_point_to_mask(Point2D(1, 1), np.zeros((4, 4), dtype=bool))

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            mask = rng.random((48, 48)) < 0.05
            if not mask.any():
                mask[0, 0] = True
            q = Point2D(float(rng.uniform(-5, 53)), float(rng.uniform(-5, 53)))
            # brute-force argmin with (dist, y, x) lexicographic key
            best = min(
                ((x + 0.5 - q.x) ** 2 + (y + 0.5 - q.y) ** 2, y, x)
                for y, x in zip(*np.nonzero(mask))
            )
            p = project_point_to_mask(q, mask)
            assert (p.x, p.y) == (best[2] + 0.5, best[1] + 0.5)

    def test_tie_break_lexicographic(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[1, 3] = True  # (y=1, x=3)
        mask[3, 1] = True  # equidistant from center
        p = project_point_to_mask(Point2D(2.5, 2.5), mask)
        assert (p.x, p.y) == (3.5, 1.5)


class TestRatioGate:
    def test_identity_pair_accepts(self):
        pair = (Point2D(0, 0), Point2D(10, 0))
        assert distance_ratio_gate(pair, pair)

    def test_shrunk_projection_rejected(self):
        orig = (Point2D(0, 0), Point2D(10, 0))
        proj = (Point2D(0, 0), Point2D(2, 0))
        assert not distance_ratio_gate(orig, proj)

    def test_degenerate_original_rejected(self):
        p = Point2D(3, 3)
        assert not distance_ratio_gate((p, p), (Point2D(0, 0), Point2D(5, 0)))

    @given(st.floats(1e-3, 100), st.floats(0, 100))
    def test_symmetric_under_swap(self, d_orig, d_proj):
        orig = (Point2D(0, 0), Point2D(d_orig, 0))
        proj = (Point2D(0, 0), Point2D(d_proj, 0))
        assert distance_ratio_gate(orig, proj) == distance_ratio_gate(
            orig[::-1], proj[::-1]
        )


class TestMaskContains:
    def test_center_of_foreground_pixel(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[2, 1] = True
        assert mask_contains(mask, Point2D(1.5, 2.5))

    def test_out_of_bounds_is_background(self):
        mask = np.ones((4, 4), dtype=bool)
        assert not mask_contains(mask, Point2D(-0.5, 1.0))
        assert not mask_contains(mask, Point2D(1.0, 4.0))

    def test_fuzz_matches_grid_lookup(self):
        rng = np.random.default_rng(9)
        mask = rng.random((10, 10)) < 0.5
        for _ in range(200):
            x = float(rng.uniform(-2, 12))
            y = float(rng.uniform(-2, 12))
            ix, iy = int(np.floor(x)), int(np.floor(y))
            expected = 0 <= ix < 10 and 0 <= iy < 10 and bool(mask[iy, ix])
            assert mask_contains(mask, Point2D(x, y)) == expected


def test_mask_image_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    mask = rng.random((20, 30)) < 0.4
    path = tmp_path / "mask.png"
    geometry.save_mask(mask, path)
    assert (geometry.load_mask(path) == mask).all()
