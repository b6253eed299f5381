import numpy as np
import pytest

from gpcool import chiller
from gpcool.errors import NumericalError


def eval_surface_oracle(t_out, s):
    """Direct term-by-term evaluation of the default cubic surface."""
    return (
        -3.15 * t_out
        - 3.03e-2 * s
        + 1.73e-1 * t_out**2
        - 1.56e-3 * t_out * s
        + 3.09e-4 * s**2
        - 2.75e-3 * t_out**3
        + 4.90e-4 * t_out**2 * s
        - 6.86e-5 * t_out * s**2
        + 2.56e-6 * s**3
        + 20.22
    )


def eval_cop_oracle(q):
    return 3.30e-7 * q**4 - 2.69e-5 * q**3 - 2.67e-3 * q**2 + 2.34e-1 * q - 4.45e-4


class TestThermalPower:
    def test_golden_constant_term(self):
        assert chiller.thermal_power(chiller.DEFAULT_THERMAL, 0.0, 0.0) == 20.22

    def test_matches_term_by_term_oracle(self):
        for t_out, s in [(30.0, 270.0), (15.0, 0.0), (35.0, 540.0), (22.5, 123.0)]:
            assert chiller.thermal_power(chiller.DEFAULT_THERMAL, t_out, s) == pytest.approx(
                eval_surface_oracle(t_out, s), rel=1e-14
            )

    def test_zero_coefficients_give_zero(self):
        zero = chiller.PolySurface2(np.zeros(10))
        assert chiller.thermal_power(zero, 17.0, 321.0) == 0.0

    def test_vectorized_evaluation(self):
        s = np.linspace(0, 540, 7)
        out = chiller.thermal_power(chiller.DEFAULT_THERMAL, 25.0, s)
        assert out.shape == (7,)
        assert out[0] == pytest.approx(eval_surface_oracle(25.0, 0.0))


class TestCop:
    def test_q_zero_raw_value_then_clamp(self):
        raw = chiller.DEFAULT_COP.raw(0.0)
        assert raw == pytest.approx(-4.45e-4, rel=1e-12)
        with pytest.warns(RuntimeWarning):
            assert chiller.cop(chiller.DEFAULT_COP, 0.0) == chiller.COP_FLOOR

    def test_q40_matches_oracle(self):
        assert chiller.cop(chiller.DEFAULT_COP, 40.0) == pytest.approx(eval_cop_oracle(40.0), rel=1e-12)

    def test_concave_second_differences(self):
        q = np.arange(10.0, 61.0)
        vals = chiller.DEFAULT_COP.raw(q)
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert np.all(second <= 0.0)

    def test_range_values_plausible(self):
        # the curve spans roughly 1.5 to 4.5 over the operating thermal range
        q = np.linspace(10, 60, 200)
        vals = chiller.DEFAULT_COP.raw(q)
        assert 1.4 < vals.min() < 2.5
        assert 3.5 < vals.max() < 4.6

    def test_non_concave_curve_rejected(self):
        with pytest.raises(ValueError, match="concave"):
            chiller.PolyCurve1(np.array([0.0, 0.0, 1.0, 0.0, 0.0]))


class TestElectricalPower:
    def test_zero_thermal_power_gives_zero(self):
        zero = chiller.PolySurface2(np.zeros(10))
        assert chiller.electrical_power(zero, chiller.DEFAULT_COP, 25.0, 100.0) == 0.0

    def test_is_ratio_of_the_two_oracles(self):
        q = eval_surface_oracle(30.0, 270.0)
        expected = q / max(eval_cop_oracle(q), chiller.COP_FLOOR)
        got = chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, 30.0, 270.0)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_composition_identity_on_grid(self):
        t_grid = np.linspace(15, 35, 5)
        s_grid = np.linspace(0, 540, 9)
        for t in t_grid:
            for s in s_grid:
                q = chiller.thermal_power(chiller.DEFAULT_THERMAL, t, s)
                c = max(chiller.DEFAULT_COP.raw(q), chiller.COP_FLOOR)
                e = chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, t, s)
                assert e == pytest.approx(q / c, rel=1e-12)

    def test_open_vs_partial_ordering_recorded(self):
        # recorded orderings of the default surfaces at a hot outdoor
        # temperature: inside the calibrated valve range, wide open is cheaper
        # than a mid-range choke; far beyond it the cubic/quartic fit
        # extrapolates wildly (which is why the operating box caps theta_sum
        # near 270)
        def e(s):
            return chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, 35.0, s)

        assert e(270.0) < e(180.0)
        assert e(540.0) > e(300.0)

    def test_non_negative_for_positive_q(self):
        e = chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, 30.0, np.linspace(0, 540, 20))
        q = chiller.thermal_power(chiller.DEFAULT_THERMAL, 30.0, np.linspace(0, 540, 20))
        assert np.all(e[q >= 0] >= 0.0)

    def test_gradient_matches_finite_differences(self):
        for t_out, s in [(25.0, 150.0), (33.0, 450.0), (18.0, 40.0)]:
            e, de = chiller.electrical_power_grad(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, t_out, s)
            h = 1e-5
            up = chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, t_out, s + h)
            dn = chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, t_out, s - h)
            assert de == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-8)
            assert e == pytest.approx(chiller.electrical_power(chiller.DEFAULT_THERMAL, chiller.DEFAULT_COP, t_out, s))


class TestFitRidge:
    def _cubic_samples(self, coeffs, n=60, seed=0):
        rng = np.random.default_rng(seed)
        t_out = rng.uniform(15, 40, n)
        s = rng.uniform(0, 540, n)
        surface = chiller.PolySurface2(coeffs)
        return [(t, th, float(surface(t, th))) for t, th in zip(t_out, s)]

    def test_exact_recovery_lambda_zero(self):
        coeffs = np.array([-3.0, 0.02, 0.1, -1e-3, 2e-4, -2e-3, 3e-4, -5e-5, 1e-6, 18.0])
        fitted = chiller.fit_ridge(self._cubic_samples(coeffs), lam=0.0)
        assert np.allclose(fitted.coeffs, coeffs, atol=1e-6)

    def test_noise_free_residual_tiny(self):
        coeffs = chiller.DEFAULT_THERMAL.coeffs
        samples = self._cubic_samples(coeffs, seed=1)
        fitted = chiller.fit_ridge(samples, lam=0.0)
        assert chiller.fit_residual_norm(fitted, samples) < 1e-8

    def test_huge_lambda_shrinks_to_mean(self):
        samples = self._cubic_samples(chiller.DEFAULT_THERMAL.coeffs, seed=2)
        fitted = chiller.fit_ridge(samples, lam=1e12)
        q_mean = np.mean([s[2] for s in samples])
        assert np.allclose(fitted.coeffs[:9] * 1e3, 0.0, atol=1e-2)
        assert fitted.coeffs[9] == pytest.approx(q_mean, rel=1e-3)

    def test_duplicated_samples_equal_weighting(self):
        samples = self._cubic_samples(chiller.DEFAULT_THERMAL.coeffs, n=30, seed=3)
        rng = np.random.default_rng(4)
        noisy = [(t, s, q + rng.normal(0, 0.5)) for t, s, q in samples]
        # duplicating the whole batch scales both sides of the (implicit)
        # normal equations; with lam scaled 2x the fit is identical
        once = chiller.fit_ridge(noisy, lam=1e-3)
        twice = chiller.fit_ridge(noisy + noisy, lam=2e-3)
        assert np.allclose(once.coeffs, twice.coeffs, rtol=1e-8, atol=1e-10)

    def test_rank_deficiency_reported(self):
        samples = [(20.0, 100.0, 5.0)] * 12  # one distinct point
        with pytest.raises(NumericalError, match="lam"):
            chiller.fit_ridge(samples, lam=0.0)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            chiller.fit_ridge([(20.0, 0.0, 1.0)] * 9)


class TestAugmentZeroFlow:
    def test_empty_base_plus_grid(self):
        out = chiller.augment_zero_flow([], np.linspace(15, 35, 5))
        assert len(out) == 5
        assert all(s == 0.0 and q == 0.0 for _, s, q in out)

    def test_grid_count(self):
        out = chiller.augment_zero_flow([], np.arange(15.0, 41.0, 5.0))
        assert len(out) == 6

    def test_augmentation_pulls_down_zero_flow_prediction(self):
        rng = np.random.default_rng(5)
        # synthetic logged data that never visits the closed-valve regime
        t_out = rng.uniform(15, 40, 80)
        s = rng.uniform(150, 540, 80)
        q = 0.08 * s + 0.5 * (t_out - 15) + rng.normal(0, 0.3, 80)
        base = [(float(a), float(b), float(c)) for a, b, c in zip(t_out, s, q)]
        plain = chiller.fit_ridge(base, lam=1e-3)
        augmented = chiller.fit_ridge(chiller.augment_zero_flow(base, np.arange(15.0, 41.0, 2.5)), lam=1e-3)
        assert augmented(25.0, 0.0) < plain(25.0, 0.0)


class TestCoefficientFiles:
    def test_surface_round_trip(self, tmp_path):
        path = tmp_path / "thermal.txt"
        chiller.save_coefficients(path, chiller.DEFAULT_THERMAL.coeffs, chiller.SURFACE_TERMS)
        loaded = chiller.load_surface(path)
        assert np.array_equal(loaded.coeffs, chiller.DEFAULT_THERMAL.coeffs)

    def test_cop_round_trip(self, tmp_path):
        path = tmp_path / "cop.txt"
        chiller.save_coefficients(path, chiller.DEFAULT_COP.coeffs, ("q^4", "q^3", "q^2", "q", "1"))
        loaded = chiller.load_cop_curve(path)
        assert np.array_equal(loaded.coeffs, chiller.DEFAULT_COP.coeffs)
