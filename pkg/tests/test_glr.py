import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset, random_codes
from discreteglr import Component, HypothesisSpec, ModelSpec, run_test
from discreteglr.backfitting import Constraint
from discreteglr.exceptions import NumericalError, PerfectFitError
from discreteglr.glr import (
    Alternative,
    best_poly_projection,
    build_sigma1,
    build_sigma2,
    glr_statistic,
    indep_df,
    noncentrality,
    null_eigenvalues,
    p_value,
    sigma1_from_probs,
    sigma2_from_tables,
    sigma2_model_utility,
    theoretical_power,
)
from discreteglr.data_model import LevelStats

HW = (0.5625, 0.375, 0.0625)


def dependent_instance(seed, n=300):
    rng = np.random.default_rng(seed)
    g = rng.multivariate_normal([0, 0, 0], [[1, 0.5, 0.2], [0.5, 1, -0.3], [0.2, -0.3, 1]], n)
    x1 = np.digitize(g[:, 0], [-0.5, 0.5])
    x2 = np.digitize(g[:, 1], [-1.0, 0.0, 0.8])
    x3 = np.digitize(g[:, 2], [0.0])
    z = rng.uniform(0, 1, n)
    y = np.sin(2 * np.pi * z) + rng.normal(size=n)
    return make_dataset(y, predictors={"x1": x1, "x2": x2, "x3": x3}, continuous_covariates={"z": z})


class TestStatistic:
    def test_toy(self):
        assert glr_statistic(8.75, 2.5, 4) == pytest.approx(10.0, abs=1e-12)

    def test_equal_rss(self):
        assert glr_statistic(3.0, 3.0, 50) == 0.0

    def test_double(self):
        assert glr_statistic(2.0, 1.0, 100) == pytest.approx(100.0)

    def test_slack_clipping(self):
        assert glr_statistic(1.0 - 1e-12, 1.0, 10) == 0.0
        with pytest.raises(NumericalError):
            glr_statistic(0.5, 1.0, 10)

    def test_perfect_fit(self):
        with pytest.raises(PerfectFitError):
            glr_statistic(1.0, 0.0, 10)


class TestSigma1:
    def test_zero_block(self):
        s1 = sigma1_from_probs(HypothesisSpec.zero(["a"]), {"a": [0.5, 0.5]})
        np.testing.assert_allclose(s1, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)

    def test_poly_block(self):
        s1 = build_sigma1(HypothesisSpec((Constraint("a", 2),)), {"a": LevelStats([3, 1, 2, 2, 4])})
        np.testing.assert_array_equal(s1, np.eye(2))

    @given(st.lists(st.integers(1, 50), min_size=2, max_size=8))
    def test_zero_block_is_projector(self, counts):
        s1 = build_sigma1(HypothesisSpec.zero(["a"]), {"a": LevelStats(counts)})
        vals = np.sort(np.linalg.eigvalsh(s1))
        np.testing.assert_allclose(vals, [0.0] + [1.0] * (len(counts) - 1), atol=1e-12)
        np.testing.assert_allclose(s1 @ s1, s1, atol=1e-12)


class TestSigma2:
    def test_independent_fair_binaries(self):
        hyp = HypothesisSpec.zero(["a", "b"])
        s2 = sigma2_from_tables(hyp, {"a": np.array([0.5, 0.5]), "b": np.array([0.5, 0.5])})
        np.testing.assert_allclose(s2[:2, 2:], [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(s2[:2, :2], np.eye(2), atol=1e-15)

    def test_identical_predictor_twice(self, rng):
        x = random_codes(rng, 60, 3)
        ds = make_dataset(rng.normal(size=60), predictors={"a": x, "b": x.copy()})
        for hyp in (HypothesisSpec.zero(["a", "b"]), HypothesisSpec((Constraint("a", 1), Constraint("b", 1)))):
            s2 = build_sigma2(ds, hyp)
            m = s2.shape[0] // 2
            np.testing.assert_allclose(s2[:m, m:], np.eye(m), atol=1e-10)

    def test_equals_joint_probability_form(self):
        ds = dependent_instance(1)
        names = ["x1", "x2", "x3"]
        np.testing.assert_allclose(build_sigma2(ds, HypothesisSpec.zero(names)), sigma2_model_utility(ds, names), atol=1e-8)

    def test_sample_concentration(self, rng):
        n = 200
        pa, pb = np.array([0.2, 0.5, 0.3]), np.array([0.1, 0.4, 0.3, 0.2])
        a = rng.choice(3, n, p=pa)
        b = rng.choice(4, n, p=pb)
        ds = make_dataset(rng.normal(size=n), predictors={"a": a, "b": b})
        hyp = HypothesisSpec.zero(["a", "b"])
        sample = build_sigma2(ds, hyp)[:3, 3:]
        population = sigma2_from_tables(hyp, {"a": pa, "b": pb})[:3, 3:]
        assert np.abs(sample - population).max() < 3 / math.sqrt(n)

    def test_unit_diagonal_blocks_and_symmetry(self):
        ds = dependent_instance(2)
        hyp = HypothesisSpec((Constraint("x2", 1), Constraint("x1"), Constraint("x3")))
        s2 = build_sigma2(ds, hyp)
        np.testing.assert_allclose(s2, s2.T, atol=0)
        np.testing.assert_allclose(s2[:2, :2], np.eye(2), atol=1e-12)
        np.testing.assert_allclose(s2[2:5, 2:5], np.eye(3), atol=1e-12)


class TestEigenvalues:
    def test_identity_sigma2(self):
        s1 = sigma1_from_probs(HypothesisSpec.zero(["a"]), {"a": [0.2, 0.3, 0.5]})
        eig, s = null_eigenvalues(s1, np.eye(3))
        np.testing.assert_allclose(eig, [1.0, 1.0], atol=1e-12)
        assert s == 2

    def test_independent_population_is_corollary(self):
        rng = np.random.default_rng(3)
        ks = (3, 4, 5, 4, 3)
        marg = {f"x{i}": rng.dirichlet(np.ones(k)) for i, k in enumerate(ks)}
        hyp = HypothesisSpec.zero(list(marg))
        eig, s = null_eigenvalues(sigma1_from_probs(hyp, marg), sigma2_from_tables(hyp, marg))
        assert s == 14
        assert np.abs(eig - 1).max() < 1e-10

    def test_independent_population_with_poly_blocks(self):
        marg = {"a": np.array([0.1, 0.2, 0.3, 0.4]), "b": np.array([0.5, 0.25, 0.25])}
        hyp = HypothesisSpec((Constraint("a", 1), Constraint("b")))
        eig, s = null_eigenvalues(sigma1_from_probs(hyp, marg), sigma2_from_tables(hyp, marg))
        assert s == 4
        assert np.abs(eig - 1).max() < 1e-10

    def test_single_poly_block(self):
        eig, s = null_eigenvalues(np.eye(2), np.eye(2))
        np.testing.assert_allclose(eig, [1, 1])
        assert s == 2

    def test_psd_and_trace(self):
        ds = dependent_instance(4)
        hyp = HypothesisSpec.zero(["x1", "x2", "x3"])
        s1, s2 = build_sigma1(hyp, ds.level_stats), build_sigma2(ds, hyp)
        prod = s1 @ s2 @ s1
        assert np.linalg.eigvalsh(prod).min() > -1e-10
        eig, s = null_eigenvalues(s1, s2)
        assert np.all(eig > 0)
        assert np.trace(prod) >= eig.sum() - 1e-9
        assert s <= prod.shape[0]

    def test_order_invariance(self):
        ds = dependent_instance(5)
        a = HypothesisSpec((Constraint("x1"), Constraint("x2", 1), Constraint("x3")))
        b = HypothesisSpec((Constraint("x3"), Constraint("x1"), Constraint("x2", 1)))
        ea, _ = null_eigenvalues(build_sigma1(a, ds.level_stats), build_sigma2(ds, a))
        eb, _ = null_eigenvalues(build_sigma1(b, ds.level_stats), build_sigma2(ds, b))
        np.testing.assert_allclose(np.sort(ea), np.sort(eb), atol=1e-10)

    def test_independent_of_response_and_covariates(self, rng):
        ds = dependent_instance(6)
        hyp = HypothesisSpec.zero(["x1", "x2", "x3"])
        base = run_test(ds, None, hyp)
        permuted = run_test(ds.with_response(rng.permutation(ds.y)), None, hyp)
        other_model = ModelSpec.default(ds).with_component(Component("z", "localpoly", degree=1, bandwidth=0.3))
        remodeled = run_test(ds, other_model, hyp)
        assert base.eigenvalues == permuted.eigenvalues == remodeled.eigenvalues


class TestPValue:
    def test_chi2_1(self):
        assert p_value(10.0, [1.0]) == pytest.approx(math.erfc(math.sqrt(5.0)), abs=1e-9)
        assert p_value(10.0, [1.0]) == pytest.approx(0.001565, abs=1e-6)

    def test_zero_statistic(self):
        assert p_value(0.0, [1.0, 2.0]) == 1.0

    def test_chi2_2(self):
        assert p_value(5.9915, [1.0, 1.0]) == pytest.approx(math.exp(-5.9915 / 2), abs=1e-9)

    def test_monotone(self):
        eig = [1.7, 1.1, 0.4]
        values = [p_value(x, eig) for x in np.linspace(0, 30, 31)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


class TestIndepDf:
    def _stats(self, ks):
        return {f"x{i}": LevelStats(np.ones(k, dtype=int)) for i, k in enumerate(ks)}

    def test_all_zero(self):
        ks = (3, 4, 5, 4, 3)
        assert indep_df(HypothesisSpec.zero([f"x{i}" for i in range(5)]), self._stats(ks)) == 14

    def test_poly(self):
        assert indep_df(HypothesisSpec((Constraint("x0", 1),)), self._stats((4,))) == 2

    def test_mixed(self):
        assert indep_df(HypothesisSpec((Constraint("x0", 1), Constraint("x1"))), self._stats((4, 3))) == 4


class TestProjectionAndPower:
    def test_linear_fixed_point(self):
        support = np.arange(4.0)
        values = 2.0 + 0.5 * support
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        coef = best_poly_projection(values, probs, 1)
        assert coef[1] == pytest.approx(0.5, abs=1e-12)
        centered = values - probs @ values
        np.testing.assert_allclose(coef[0] + coef[1] * support, centered, atol=1e-12)

    def test_symmetric_quadratic_slope_zero(self):
        coef = best_poly_projection([1.0, 0.0, 1.0], [1 / 3] * 3, 1, support=[-1.0, 0.0, 1.0])
        assert coef[1] == pytest.approx(0.0, abs=1e-14)

    def test_weighted_residual_orthogonality(self):
        x = np.array([0.0, 1.0, 2.0])
        m = (x - 0.75) ** 2
        p = np.array(HW)
        coef = best_poly_projection(m - p @ m, p, 1)
        res = (m - p @ m) - (coef[0] + coef[1] * x)
        assert abs(np.sum(p * res * x)) < 1e-14
        assert abs(np.sum(p * res)) < 1e-14

    def test_null_alternative_gives_alpha(self):
        hyp = HypothesisSpec.zero(["x"])
        alt = Alternative("x", (0.0, 0.0, 0.0), HW)
        assert theoretical_power(hyp, [1.0, 1.0], [alt], 500) == 0.05
        assert theoretical_power(hyp, [1.0, 1.0], [alt], 500, mode="noncentral") == 0.05

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_hardy_weinberg_second_moment(self, beta):
        x = np.arange(3.0)
        alt = Alternative("x", tuple(beta * (x - 0.75) ** 2), HW)
        # exact enumeration over three levels
        m = beta * (x - 0.75) ** 2
        p = np.array(HW)
        enumerated = float(p @ (m - p @ m) ** 2)
        assert enumerated == pytest.approx(0.140625 * beta**2, rel=1e-14)
        assert noncentrality(HypothesisSpec.zero(["x"]), [alt]) == pytest.approx(enumerated, rel=1e-14)

    def test_projection_removes_polynomial_part(self):
        hyp = HypothesisSpec((Constraint("x", 1),))
        probs = (0.1, 0.2, 0.3, 0.4)
        linear = Alternative("x", (0.0, 0.5, 1.0, 1.5), probs)
        assert noncentrality(hyp, [linear], n=1000) == pytest.approx(0.0, abs=1e-20)
        assert theoretical_power(hyp, [1.0, 1.0], [linear], 1000) == 0.05

    def test_modes_against_monte_carlo(self):
        rng = np.random.default_rng(8)
        hyp = HypothesisSpec.zero(["x"])
        alt = Alternative("x", (0.0, 0.3, -0.2), (0.3, 0.4, 0.3))
        eig = np.array([1.0, 1.0])
        n = 60
        delta2 = noncentrality(hyp, [alt], n)
        crit = -2 * math.log(0.05)
        v = rng.standard_normal((400_000, 2))
        mix_mc = np.mean(delta2 + (v**2) @ eig > crit)
        nc_mc = np.mean(((v + [math.sqrt(delta2), 0.0]) ** 2).sum(axis=1) > crit)
        assert theoretical_power(hyp, eig, [alt], n, mode="mixture") == pytest.approx(mix_mc, abs=4e-3)
        assert theoretical_power(hyp, eig, [alt], n, mode="noncentral") == pytest.approx(nc_mc, abs=4e-3)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            theoretical_power(HypothesisSpec.zero(["x"]), [1.0], [Alternative("x", (0, 1), (0.5, 0.5))], 10, mode="x")


class TestRunTest:
    def test_toy(self, toy):
        res = run_test(toy, None, HypothesisSpec.zero(["x"]))
        assert res.lambda_n == pytest.approx(10.0, abs=1e-9)
        assert res.rss0 == pytest.approx(8.75, abs=1e-9)
        assert res.rss1 == pytest.approx(2.5, abs=1e-9)
        assert res.eigenvalues == pytest.approx((1.0,), abs=1e-12)
        assert res.df_indep == 1
        assert res.p_value == pytest.approx(0.001565402258, abs=1e-6)
        assert res.p_value == pytest.approx(res.p_value_indep, abs=1e-9)
        assert res.headline("indep") == res.p_value_indep

    def test_empty_hypothesis(self, toy):
        res = run_test(toy, None, HypothesisSpec())
        assert res.lambda_n == 0.0
        assert res.p_value == 1.0

    def test_report_dict(self, toy):
        d = run_test(toy, None, HypothesisSpec.zero(["x"])).to_dict()
        assert d["hypothesis"] == [{"variable": "x", "constraint": "zero"}]
        assert d["fit1"]["converged"]

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_result_invariants(self, seed):
        ds = dependent_instance(seed, n=120)
        res = run_test(ds, None, HypothesisSpec((Constraint("x2", 1), Constraint("x1"))))
        assert res.lambda_n >= 0
        assert 0 <= res.p_value <= 1
        assert res.rank <= 2 + 3
        assert res.df_indep == 4
