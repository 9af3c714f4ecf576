import numpy as np
import pytest

from racmap.errors import InvalidInputError, OutOfDomainError
from racmap.shoe_data import (RawPrint, StandardShoe, _standardize_points,
                              binarize_counts, descriptive_stats, load_shoes,
                              normalize, shoes_from_csv, shoes_from_json,
                              shoes_to_csv, shoes_to_json)


def _raw(landmark_top, landmark_bottom, racs, mask_shape=(12, 12),
         right=False, print_id="p1"):
    return RawPrint(print_id=print_id, landmark_top=landmark_top,
                    landmark_bottom=landmark_bottom, rac_points=racs,
                    contact_mask=np.ones(mask_shape, dtype=bool),
                    is_right_shoe=right)


class TestStandardization:
    def test_midpoint_maps_to_origin(self):
        pts, *_ = _standardize_points([(0.0, 5.0)], (0.0, 10.0), (0.0, 0.0),
                                      False)
        assert np.allclose(pts[0], [0.0, 0.0], atol=1e-12)

    def test_right_shoe_mirrors_x(self):
        pts, *_ = _standardize_points([(2.0, 5.0)], (0.0, 10.0), (0.0, 0.0),
                                      True)
        assert pts[0][0] == pytest.approx(-0.2)
        pts_l, *_ = _standardize_points([(2.0, 5.0)], (0.0, 10.0), (0.0, 0.0),
                                        False)
        assert pts_l[0][0] == pytest.approx(0.2)

    def test_rotated_print_rac_at_midpoint(self):
        # oracle: apply translation, rotation and scaling matrices by hand
        top = np.array([7.07, 7.07])
        bottom = np.array([0.0, 0.0])
        rac = np.array([3.535, 3.535])
        mid = 0.5 * (top + bottom)
        axis = top - bottom
        length = np.hypot(*axis)
        c, s = axis[1] / length, axis[0] / length
        rot = np.array([[c, -s], [s, c]])
        expected = rot @ (rac - mid) / length
        assert np.allclose(expected, [0.0, 0.0], atol=1e-12)

        pts, *_ = _standardize_points([rac], top, bottom, False)
        assert np.allclose(pts[0], expected, atol=1e-12)

    def test_landmarks_map_to_half_unit_offsets(self):
        pts, *_ = _standardize_points([(3.0, 9.0), (1.0, 1.0)], (3.0, 9.0),
                                      (1.0, 1.0), False)
        assert np.allclose(pts[0], [0.0, 0.5], atol=1e-12)
        assert np.allclose(pts[1], [0.0, -0.5], atol=1e-12)

    def test_double_mirror_is_identity(self):
        pts_r, *_ = _standardize_points([(2.3, 4.0)], (0, 10), (0, 0), True)
        again = pts_r * np.array([-1.0, 1.0])
        pts_l, *_ = _standardize_points([(2.3, 4.0)], (0, 10), (0, 0), False)
        assert np.allclose(again, pts_l)


class TestNormalize:
    def test_rac_lands_in_center_pixel(self):
        raw = _raw((6.0, 11.0), (6.0, 1.0), [(6.0, 6.0)])
        shoe = normalize(raw, grid=(10, 10))
        assert shoe.n.sum() == 1
        r, c = map(int, np.argwhere(shoe.n)[0])
        # standardized (0,0) falls on the upper-left pixel of the center 2x2
        assert (r, c) == (4, 4)
        assert shoe.S[r, c] == 1

    def test_coincident_landmarks_rejected(self):
        with pytest.raises(InvalidInputError):
            _raw((3.0, 3.0), (3.0, 3.0), [])

    def test_out_of_domain_rac_named_in_error(self):
        # RAC far right of a narrow grid: outside after standardization
        raw = _raw((6.0, 11.5), (6.0, 0.5), [(11.5, 6.0)])
        with pytest.raises(OutOfDomainError) as err:
            normalize(raw, grid=(10, 4))
        assert err.value.point == (11.5, 6.0)

    def test_contact_forced_on_rac_pixels(self):
        raw = RawPrint(print_id="p", landmark_top=(6, 11), landmark_bottom=(6, 1),
                       rac_points=[(6.0, 6.0)],
                       contact_mask=np.zeros((12, 12), dtype=bool))
        shoe = normalize(raw, grid=(10, 10))
        assert shoe.S[shoe.n > 0].all()

    def test_s_zero_implies_n_zero_everywhere(self):
        rng = np.random.default_rng(3)
        mask = rng.random((12, 12)) < 0.6
        racs = [(float(x), float(y)) for x, y in rng.uniform(2, 10, (15, 2))]
        raw = RawPrint(print_id="p", landmark_top=(6, 11.5),
                       landmark_bottom=(6, 0.5), rac_points=racs,
                       contact_mask=mask)
        shoe = normalize(raw, grid=(20, 16))
        assert not np.any((shoe.S == 0) & (shoe.n > 0))

    def test_idempotent_on_standardized_input(self):
        # a print already in the standardized frame, scaled to the grid
        height, width = 20, 16
        rng = np.random.default_rng(4)
        mask = rng.random((height, width)) < 0.7
        racs = [(4.2, 3.7), (10.6, 12.3), (8.0, 17.5)]
        raw = RawPrint(print_id="p",
                       landmark_top=(width / 2, height),
                       landmark_bottom=(width / 2, 0.0),
                       rac_points=racs, contact_mask=mask)
        first = normalize(raw, grid=(height, width))
        # feed the standardized shoe back in the same frame
        ys, xs = np.nonzero(first.n)
        racs2 = []
        for y, x in zip(ys, xs):
            for _ in range(first.n[y, x]):
                racs2.append((x + 0.5, height - y - 0.5))
        raw2 = RawPrint(print_id="p", landmark_top=(width / 2, height),
                        landmark_bottom=(width / 2, 0.0), rac_points=racs2,
                        contact_mask=first.S[::-1].astype(bool))
        second = normalize(raw2, grid=(height, width))
        assert np.array_equal(first.n, second.n)
        assert np.array_equal(first.S, second.S)


class TestBinarize:
    def test_already_binary_unchanged(self):
        shoe = StandardShoe("s", S=np.ones((2, 2)), n=np.array([[0, 1], [1, 0]]))
        out, n_mod = binarize_counts(shoe)
        assert n_mod == 0
        assert np.array_equal(out.n, shoe.n)

    def test_single_double_count_capped(self):
        shoe = StandardShoe("s", S=np.ones((2, 2)), n=np.array([[0, 2], [1, 0]]))
        out, n_mod = binarize_counts(shoe)
        assert n_mod == 1
        assert out.n[0, 1] == 1

    def test_three_pixels_capped(self):
        shoe = StandardShoe("s", S=np.ones((2, 2)),
                            n=np.array([[2, 3], [2, 0]]))
        out, n_mod = binarize_counts(shoe)
        assert n_mod == 3
        assert np.array_equal(out.n, np.array([[1, 1], [1, 0]]))
        assert shoe.n[0, 0] == 2  # input untouched


class TestDescriptiveStats:
    def _shoe(self, sid, contact, racs, shape=(6, 6)):
        rng = np.random.default_rng(hash(sid) % 2**32)
        S = np.zeros(shape, dtype=np.uint8)
        idx = rng.choice(shape[0] * shape[1], contact, replace=False)
        S.ravel()[idx] = 1
        n = np.zeros(shape, dtype=np.int64)
        cells = rng.choice(idx, racs, replace=True)
        for c in cells:
            n.ravel()[c] += 1
        return StandardShoe(sid, S=S, n=n)

    def test_identical_shoes_have_no_correlation(self):
        shoe = self._shoe("a", 10, 3)
        twin = StandardShoe("b", S=shoe.S.copy(), n=shoe.n.copy())
        report = descriptive_stats([shoe, twin])
        assert report.spearman is None

    def test_perfectly_monotone_gives_one(self):
        shoes = [self._shoe("a", 10, 1), self._shoe("b", 20, 2),
                 self._shoe("c", 30, 3)]
        report = descriptive_stats(shoes)
        assert report.spearman == pytest.approx(1.0)

    def test_requires_two_shoes(self):
        with pytest.raises(InvalidInputError):
            descriptive_stats([self._shoe("a", 10, 2)])

    def test_cumulative_contact_counts_shoes(self):
        shoes = [self._shoe("a", 12, 2), self._shoe("b", 20, 3)]
        report = descriptive_stats(shoes)
        assert np.array_equal(report.cumulative_contact,
                              shoes[0].S.astype(int) + shoes[1].S.astype(int))


class TestIO:
    def _shoes(self):
        rng = np.random.default_rng(11)
        out = []
        for sid in ("alpha", "beta"):
            S = (rng.random((8, 6)) < 0.5).astype(np.uint8)
            n = np.where(S, rng.poisson(0.3, (8, 6)), 0)
            S[n > 0] = 1
            out.append(StandardShoe(sid, S=S, n=n))
        return out

    def test_csv_round_trip(self, tmp_path):
        shoes = self._shoes()
        path = tmp_path / "shoes.csv"
        shoes_to_csv(shoes, path)
        back = shoes_from_csv(path, grid=(8, 6))
        assert [s.shoe_id for s in back] == ["alpha", "beta"]
        for a, b in zip(shoes, back):
            assert np.array_equal(a.S, b.S)
            assert np.array_equal(a.n, b.n)

    def test_json_round_trip(self, tmp_path):
        shoes = self._shoes()
        path = tmp_path / "shoes.json"
        shoes_to_json(shoes, path)
        back = shoes_from_json(path)
        for a, b in zip(shoes, back):
            assert np.array_equal(a.S, b.S)
            assert np.array_equal(a.n, b.n)

    def test_load_dispatches_on_extension(self, tmp_path):
        shoes = self._shoes()
        shoes_to_json(shoes, tmp_path / "x.json")
        assert len(load_shoes(tmp_path / "x.json")) == 2

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(InvalidInputError):
            shoes_from_csv(path, grid=(4, 4))
