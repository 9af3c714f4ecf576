import json

import numpy as np
import pytest

from racmap.errors import InvalidInputError
from racmap.splines import (SplineSpec, basis_1d, eval_surface, quantile_knots,
                            tensor_design)


class TestBasis1d:
    def test_below_first_knot_truncated_terms_vanish(self):
        assert np.allclose(basis_1d(0.0, [1.0, 2.0]), [1, 0, 0, 0, 0, 0])

    def test_at_second_knot(self):
        assert np.allclose(basis_1d(2.0, [1.0, 2.0]), [1, 2, 4, 8, 1, 0])

    def test_above_all_knots(self):
        assert np.allclose(basis_1d(3.0, [1.0, 2.0]), [1, 3, 9, 27, 8, 1])

    def test_vector_input_gives_matrix(self):
        out = basis_1d(np.array([0.0, 3.0]), [1.0, 2.0])
        assert out.shape == (2, 6)
        assert np.allclose(out[1], [1, 3, 9, 27, 8, 1])

    def test_unsorted_knots_rejected(self):
        with pytest.raises(InvalidInputError):
            basis_1d(0.5, [2.0, 1.0])

    def test_second_derivative_continuous_at_knots(self):
        # 2nd finite differences from both sides of a knot agree to O(h^2)
        knots = np.array([0.3, 0.7])
        h = 1e-4

        def fd2(t):
            vals = np.array([basis_1d(t - h, knots), basis_1d(t, knots),
                             basis_1d(t + h, knots)])
            return (vals[0] - 2 * vals[1] + vals[2]) / h**2

        for k in knots:
            gap = 5 * h
            assert np.max(np.abs(fd2(k + gap) - fd2(k - gap))) < 50 * gap


class TestQuantileKnots:
    def test_equal_quantiles_of_1_to_100(self):
        values = np.arange(1, 101, dtype=float)

        # independent type-7 quantile: h = (n-1) q, linear interpolation
        def type7(v, q):
            v = np.sort(v)
            h = (len(v) - 1) * q
            lo = int(np.floor(h))
            return v[lo] + (h - lo) * (v[min(lo + 1, len(v) - 1)] - v[lo])

        expected = [type7(values, q) for q in (0.25, 0.5, 0.75)]
        assert np.allclose(expected, [25.75, 50.5, 75.25])
        assert np.allclose(quantile_knots(values, 3), expected)

    def test_degenerate_values_rejected(self):
        with pytest.raises(InvalidInputError):
            quantile_knots(np.full(50, 3.0), 2)

    def test_single_knot_is_median(self):
        values = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert quantile_knots(values, 1)[0] == pytest.approx(3.0)


class TestSurface:
    def _spec(self, rng=None, kx=(0.4, 0.6), ky=(0.3, 0.5, 0.8), beta=None):
        dim = (4 + len(kx)) * (4 + len(ky))
        if beta is None:
            beta = np.zeros(dim)
        return SplineSpec(knots_x=np.array(kx), knots_y=np.array(ky),
                          beta=np.asarray(beta, dtype=float))

    def test_intercept_only_is_constant_one(self):
        spec = self._spec()
        spec.beta[0] = 1.0
        for x, y in [(0.1, 0.9), (0.5, 0.5), (0.99, 0.01)]:
            assert eval_surface(spec, x, y) == pytest.approx(1.0)

    def test_zero_coefficients_give_zero(self):
        spec = self._spec()
        assert eval_surface(spec, 0.3, 0.8) == 0.0

    def test_below_all_knots_equals_bicubic_polynomial(self):
        rng = np.random.default_rng(7)
        spec = self._spec(beta=rng.normal(size=(4 + 2) * (4 + 3)))
        x, y = 0.2, 0.1  # below every knot on both axes
        ny = 4 + 3
        # oracle: direct bicubic double sum over the polynomial block
        expected = sum(spec.beta[i * ny + j] * x**i * y**j
                       for i in range(4) for j in range(4))
        assert eval_surface(spec, x, y) == pytest.approx(expected, rel=1e-12)

    def test_linear_in_coefficients(self):
        rng = np.random.default_rng(8)
        beta = rng.normal(size=(4 + 2) * (4 + 3))
        spec1 = self._spec(beta=beta)
        spec2 = self._spec(beta=2.5 * beta)
        assert eval_surface(spec2, 0.7, 0.6) == pytest.approx(
            2.5 * eval_surface(spec1, 0.7, 0.6))

    def test_design_row_matches_outer_product(self):
        kx, ky = np.array([0.4, 0.6]), np.array([0.3, 0.5, 0.8])
        row = tensor_design(0.45, 0.62, kx, ky)[0]
        outer = np.outer(basis_1d(0.45, kx), basis_1d(0.62, ky)).ravel()
        assert np.allclose(row, outer)

    def test_beta_length_validated(self):
        with pytest.raises(InvalidInputError):
            SplineSpec(knots_x=[0.5], knots_y=[0.5], beta=np.zeros(7))

    def test_json_round_trip(self):
        rng = np.random.default_rng(9)
        spec = self._spec(beta=rng.normal(size=(4 + 2) * (4 + 3)))
        restored = SplineSpec.from_json(spec.to_json())
        assert np.allclose(restored.beta, spec.beta)
        assert np.allclose(restored.knots_x, spec.knots_x)
        assert restored.centering == "none"
        assert json.loads(spec.to_json())["centering"] == "none"
