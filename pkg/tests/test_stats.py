import math

import numpy as np
import numpy.testing as npt
import pytest
import scipy.stats

from smoothcert.stats import (
    NoncentralChiSq,
    check_probability,
    hoeffding_bounds,
    hoeffding_offset,
    noncentral_chisq_cdf,
    std_normal_cdf,
    std_normal_quantile,
)

from oracles import hoeffding_offset_mp, ncx2_cdf_mp, phi_inv_mp, phi_mp


class TestProbabilityValidation:
    def test_accepts_endpoints(self):
        assert check_probability(0) == 0.0
        assert check_probability(1) == 1.0
        assert check_probability(0.25) == 0.25

    @pytest.mark.parametrize("bad", [-1e-12, 1.0000001, float("nan"), 2])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValueError):
            check_probability(bad)


class TestStdNormalCdf:
    def test_median(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_upper_tail_limit(self):
        assert std_normal_cdf(8.0) >= 1.0 - 1e-14

    def test_against_high_precision_oracle(self):
        # frozen from the mpmath erfc oracle
        npt.assert_allclose(std_normal_cdf(1.959963985), 0.9750000000268816, atol=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-8, 8, size=10_000)
        npt.assert_allclose(std_normal_cdf(x) + std_normal_cdf(-x), 1.0, atol=1e-14)

    def test_strictly_increasing(self):
        x = np.linspace(-6, 6, 5001)
        assert np.all(np.diff(std_normal_cdf(x)) > 0)


class TestStdNormalQuantile:
    def test_median(self):
        assert std_normal_quantile(0.5) == 0.0

    def test_against_high_precision_oracle(self):
        npt.assert_allclose(std_normal_quantile(0.975), 1.9599639845400542, atol=1e-9)

    def test_round_trip(self):
        assert abs(std_normal_cdf(std_normal_quantile(0.123)) - 0.123) <= 1e-12

    def test_odd_around_half(self):
        rng = np.random.default_rng(11)
        for p in rng.uniform(0.001, 0.499, size=200):
            assert std_normal_quantile(p) == pytest.approx(-std_normal_quantile(1 - p), abs=1e-12)

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.1])
    def test_rejects_closed_endpoints(self, bad):
        with pytest.raises(ValueError):
            std_normal_quantile(bad)


class TestNoncentralChiSq:
    def test_central_case_closed_form(self):
        # chi2 with 2 dof has CDF 1 - exp(-x/2)
        npt.assert_allclose(noncentral_chisq_cdf(2.0, 2, 0.0), 1.0 - math.exp(-1.0), atol=1e-13)

    def test_zero_mass_at_origin(self):
        assert noncentral_chisq_cdf(0.0, 3, 4.0) == 0.0
        assert noncentral_chisq_cdf(0.0, 1, 0.0) == 0.0

    def test_frozen_oracle_value(self):
        # frozen from the mpmath series oracle
        npt.assert_allclose(noncentral_chisq_cdf(5.0, 3, 4.0), 0.3993341895370014, atol=1e-12)

    def test_matches_mpmath_oracle_on_random_inputs(self):
        rng = np.random.default_rng(23)
        for _ in range(60):
            d = int(rng.integers(1, 40))
            lam = float(rng.uniform(0, 80))
            x = float(rng.uniform(0, d + lam + 40))
            expect = float(ncx2_cdf_mp(x, d, lam))
            npt.assert_allclose(noncentral_chisq_cdf(x, d, lam), expect, atol=1e-12)

    def test_converges_for_huge_noncentrality(self):
        for lam in (1e4, 1e6):
            for frac in (0.8, 1.0, 1.2):
                x = frac * (lam + 5)
                expect = float(ncx2_cdf_mp(x, 5, lam))
                npt.assert_allclose(noncentral_chisq_cdf(x, 5, lam), expect, atol=1e-11)

    def test_monotone_in_x_and_noncentrality(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = int(rng.integers(1, 12))
            lam = float(rng.uniform(0, 30))
            xs = np.sort(rng.uniform(0, 60, size=16))
            vals = noncentral_chisq_cdf(xs, d, lam)
            assert np.all(np.diff(vals) >= -1e-14)
            # larger shift pushes mass right: CDF falls
            worse = noncentral_chisq_cdf(xs, d, lam + rng.uniform(0.5, 10))
            assert np.all(worse <= vals + 1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        d = 7
        lam = 13.5
        xs = rng.uniform(0, 80, size=50)
        npt.assert_allclose(
            noncentral_chisq_cdf(xs, d, lam), scipy.stats.ncx2.cdf(xs, d, lam), atol=1e-10
        )

    def test_monte_carlo_agreement(self):
        # ||z + mu||^2 with z standard normal and ||mu||^2 = lam is
        # noncentral chi-squared; binomial 4-sigma agreement at 1e6 draws
        # on 50 random (d <= 10, lam <= 50, x) triples.
        rng = np.random.default_rng(17)
        n = 1_000_000
        for _ in range(50):
            d = int(rng.integers(1, 11))
            lam = float(rng.uniform(0, 50))
            x = float(rng.uniform(0.2, d + lam + 20))
            mu = np.zeros(d)
            mu[0] = math.sqrt(lam)
            q = noncentral_chisq_cdf(x, d, lam)
            hits = 0
            for start in range(0, n, 250_000):
                z = rng.standard_normal((250_000, d)) + mu
                hits += int(np.sum(np.einsum("ij,ij->i", z, z) < x))
            emp = hits / n
            tol = 4.0 * math.sqrt(max(q * (1 - q), 1e-12) / n)
            assert abs(emp - q) <= tol

    def test_params_dataclass_validates(self):
        with pytest.raises(ValueError):
            NoncentralChiSq(0, 1.0)
        with pytest.raises(ValueError):
            NoncentralChiSq(3, -0.5)
        with pytest.raises(ValueError):
            NoncentralChiSq(3, float("inf"))
        dist = NoncentralChiSq(3, 4.0)
        npt.assert_allclose(dist.cdf(5.0), 0.3993341895370014, atol=1e-12)

    def test_rejects_negative_x(self):
        with pytest.raises(ValueError):
            noncentral_chisq_cdf(-0.1, 3, 1.0)


class TestHoeffdingBounds:
    def test_frozen_offset_value(self):
        # frozen from the mpmath oracle: sqrt(ln(1000)/2000)
        npt.assert_allclose(hoeffding_offset(1000, 0.001), 0.05876970001191999, atol=1e-15)
        p_a, p_b = hoeffding_bounds(0.9, 0.1, 1000, 0.001)
        npt.assert_allclose(p_a, 0.9 - 0.05876970001191999, atol=1e-15)
        npt.assert_allclose(p_b, 0.1 + 0.05876970001191999, atol=1e-15)

    def test_width_vanishes_for_huge_n(self):
        p_a, p_b = hoeffding_bounds(1.0, 0.0, 10**9, 0.001)
        assert 1.0 - p_a <= 6e-5
        assert p_b <= 6e-5

    def test_clamps_at_zero_and_one(self):
        p_a, p_b = hoeffding_bounds(0.02, 0.99, 100, 0.5)
        assert p_a == 0.0
        assert p_b == 1.0

    def test_matches_mpmath_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            n = int(rng.integers(1, 10**6))
            alpha = float(rng.uniform(1e-6, 0.99))
            expect = float(hoeffding_offset_mp(n, alpha))
            npt.assert_allclose(hoeffding_offset(n, alpha), expect, rtol=1e-13)

    def test_coverage_simulation(self):
        # 200 Bernoulli(p) experiments at N=1000, alpha=0.001: the true p
        # must exceed the returned lower bound in >= 199 of them.
        rng = np.random.default_rng(41)
        covered = 0
        for _ in range(200):
            p = float(rng.uniform(0.05, 0.95))
            p_hat = rng.binomial(1000, p) / 1000
            p_a, _ = hoeffding_bounds(p_hat, 0.0, 1000, 0.001)
            covered += p >= p_a
        assert covered >= 199

    @pytest.mark.parametrize("n,alpha", [(0, 0.5), (10, 0.0), (10, 1.0), (-3, 0.1)])
    def test_rejects_bad_arguments(self, n, alpha):
        with pytest.raises(ValueError):
            hoeffding_bounds(0.5, 0.5, n, alpha)
