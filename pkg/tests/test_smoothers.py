import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from discreteglr import BinSmoother, LocalPolySmoother, default_bandwidth
from discreteglr.exceptions import BandwidthError
from discreteglr.oracle import bin_matrix, local_poly_matrix


class TestBinSmoother:
    def test_group_means(self):
        np.testing.assert_allclose(BinSmoother([0, 0, 1, 1]).apply([1, 2, 3, 5]), [1.5, 1.5, 4, 4])

    def test_constant_target(self):
        np.testing.assert_allclose(BinSmoother([0, 2, 1, 2, 0]).apply(np.full(5, 3.5)), 3.5)

    def test_singletons(self):
        np.testing.assert_allclose(BinSmoother([0, 1, 2]).apply([7, 8, 9]), [7, 8, 9])

    def test_centered_examples(self):
        np.testing.assert_allclose(BinSmoother([0, 0, 1, 1]).centered_apply([1, 2, 3, 5]), [-1.25, -1.25, 1.25, 1.25])
        np.testing.assert_allclose(BinSmoother([0, 1, 2]).centered_apply([7, 8, 9]), [-1, 0, 1])
        np.testing.assert_allclose(BinSmoother([0, 1, 0]).centered_apply([4, 4, 4]), 0, atol=1e-15)

    def test_empty_level_rejected(self):
        with pytest.raises(ValueError):
            BinSmoother([0, 2], k=3)

    @settings(max_examples=50)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_operator_identities(self, k, seed):
        rng = np.random.default_rng(seed)
        codes = rng.permutation(np.concatenate([np.arange(k), rng.integers(0, k, 30)]))
        s = BinSmoother(codes)
        u, v = rng.normal(size=(2, codes.size))
        np.testing.assert_allclose(s.apply(s.apply(u)), s.apply(u), atol=1e-12)
        assert np.dot(s.apply(u), v) == pytest.approx(np.dot(u, s.apply(v)), abs=1e-10)
        # centered smoother = smoother minus column-mean operator, exactly
        np.testing.assert_allclose(s.centered_apply(u), s.apply(u) - u.mean(), atol=1e-12)
        np.testing.assert_allclose(s.apply(u), bin_matrix(codes) @ u, atol=1e-12)


class TestLocalPolySmoother:
    def test_large_bandwidth_limit_is_mean(self):
        np.testing.assert_allclose(LocalPolySmoother([0.0, 1.0], bandwidth=1e6).apply([2.0, 4.0]), [3.0, 3.0], atol=1e-9)

    def test_nadaraya_watson_direct_formula(self):
        z = np.array([0.0, 1.0, 2.0])
        y = np.array([0.0, 1.0, 4.0])
        h = 0.5
        expected = []
        for z0 in z:
            w = np.exp(-0.5 * ((z - z0) / h) ** 2)
            expected.append(np.sum(w * y) / np.sum(w))
        np.testing.assert_allclose(LocalPolySmoother(z, 0, h).apply(y), expected, rtol=1e-13)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    @pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
    def test_polynomial_reproduction(self, degree, kernel, rng):
        z = np.sort(rng.uniform(-2, 2, 60))
        coef = rng.normal(size=degree + 1)
        target = np.polynomial.polynomial.polyval(z, coef)
        fitted = LocalPolySmoother(z, degree, bandwidth=0.8, kernel=kernel).apply(target)
        np.testing.assert_allclose(fitted, target, rtol=1e-8, atol=1e-8 * np.abs(target).max())

    @pytest.mark.parametrize("degree", [0, 1, 2])
    def test_matches_dense_oracle(self, degree, rng):
        z = rng.normal(size=80)
        y = rng.normal(size=80)
        s = LocalPolySmoother(z, degree, kernel="gaussian")
        np.testing.assert_allclose(s.apply(y), local_poly_matrix(z, degree) @ y, atol=1e-10)

    def test_uncached_blocks_match_cached(self, rng, monkeypatch):
        from discreteglr import smoothers

        z = rng.normal(size=50)
        y = rng.normal(size=50)
        cached = LocalPolySmoother(z, 1).apply(y)
        monkeypatch.setattr(smoothers, "WEIGHT_CACHE_MAX_N", 10)
        monkeypatch.setattr(smoothers, "_BLOCK_ELEMENTS", 200)
        s = LocalPolySmoother(z, 1)
        assert s._weights is None
        np.testing.assert_allclose(s.apply(y), cached, atol=1e-12)

    def test_bandwidth_too_small(self):
        with pytest.raises(BandwidthError, match="widen"):
            LocalPolySmoother([0.0, 1.0, 2.0, 3.0], degree=1, bandwidth=0.1, kernel="epanechnikov")

    def test_nonpositive_bandwidth(self):
        with pytest.raises(ValueError):
            LocalPolySmoother([0.0, 1.0], bandwidth=-1.0)

    def test_unknown_kernel(self):
        with pytest.raises(ValueError):
            LocalPolySmoother([0.0, 1.0], kernel="box")

    def test_centered_sums_to_zero(self, rng):
        z = rng.normal(size=40)
        out = LocalPolySmoother(z).centered_apply(rng.normal(size=40))
        assert abs(out.sum()) < 1e-12


class TestDefaultBandwidth:
    def test_formula(self):
        z = np.random.default_rng(0).normal(size=100)
        z = (z - z.mean()) / z.std(ddof=1)
        assert default_bandwidth(z) == pytest.approx(1.06 * 100 ** (-0.2), rel=1e-12)
        # frozen from exp(log(1.06) - 0.2 * log(100))
        assert default_bandwidth(z) == pytest.approx(math.exp(math.log(1.06) - 0.2 * math.log(100)), rel=1e-12)
        assert default_bandwidth(z) == pytest.approx(0.4219936, abs=1e-7)

    def test_linear_in_scale(self):
        z = np.random.default_rng(1).normal(size=100)
        assert default_bandwidth(2 * z) == pytest.approx(2 * default_bandwidth(z), rel=1e-14)

    def test_constant_column(self):
        with pytest.raises(ValueError):
            default_bandwidth(np.ones(10))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            default_bandwidth([1.0])
