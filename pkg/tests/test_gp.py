import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpcool import gp


def naive_kernel(x, x2, sigma, ell):
    """Straight transcription of the SE-ARD formula, used as the oracle."""
    s = 0.0
    for a, b, l in zip(x, x2, ell):
        s += ((a - b) / l) ** 2
    return sigma**2 * math.exp(-0.5 * s)


def hp(sigma=1.0, ell=(1.0,), noise=0.1, slope=None, offset=0.0):
    ell = np.asarray(ell, dtype=float)
    slope = np.zeros_like(ell) if slope is None else np.asarray(slope, dtype=float)
    return gp.Hyperparams(sigma, ell, noise, slope, offset)


class TestKernel:
    def test_zero_distance_gives_sigma_sq(self):
        h = hp(sigma=2.5, ell=(1.0, 3.0), noise=0.1)
        x = np.array([0.3, -1.2])
        assert gp.kernel_eval(x, x, h) == pytest.approx(2.5**2, abs=0.0)

    def test_asymptotic_decay(self):
        h = hp(sigma=1.0, ell=(1.0,))
        assert gp.kernel_eval([0.0], [100.0], h) < 1e-30

    def test_hand_evaluated_point(self):
        # sigma=2, ell=(1,2), x=(0,0), x2=(1,2): exponent -0.5*(1+1) = -1
        h = hp(sigma=2.0, ell=(1.0, 2.0))
        val = gp.kernel_eval([0.0, 0.0], [1.0, 2.0], h)
        assert val == pytest.approx(4.0 * math.exp(-1.0), rel=1e-15)

    def test_dimension_mismatch_raises(self):
        h = hp(ell=(1.0, 1.0))
        with pytest.raises(ValueError):
            gp.kernel_eval([0.0], [0.0], h)

    def test_matrix_n1(self):
        h = hp(sigma=1.7)
        K = gp.kernel_matrix(np.array([[0.4]]), h)
        assert K.shape == (1, 1)
        assert K[0, 0] == pytest.approx(1.7**2)

    def test_matrix_identical_rows(self):
        h = hp(sigma=1.3, ell=(2.0, 1.0))
        K = gp.kernel_matrix(np.array([[1.0, 2.0], [1.0, 2.0]]), h)
        assert np.allclose(K, 1.3**2)

    def test_matrix_exact_symmetry_and_psd(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5, 3))
        h = hp(sigma=1.1, ell=(0.7, 1.0, 2.0))
        K = gp.kernel_matrix(X, h)
        assert np.max(np.abs(K - K.T)) == 0.0
        assert np.linalg.eigvalsh(K).min() >= -1e-10

    def test_matrix_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 2))
        h = hp(sigma=0.8, ell=(1.5, 0.5))
        K = gp.kernel_matrix(X, h)
        for i in range(6):
            for j in range(6):
                assert K[i, j] == pytest.approx(
                    naive_kernel(X[i], X[j], 0.8, [1.5, 0.5]), rel=1e-12
                )

    def test_non_finite_input_rejected(self):
        h = hp()
        with pytest.raises(ValueError):
            gp.kernel_matrix(np.array([[np.nan]]), h)


class TestFitPredict:
    def test_1x1_alpha(self):
        # (K + noise^2) alpha = y - m, with sigma=1, noise=1: (1+1) a = 1
        # (the 1e-10 jitter floor perturbs the solve below 1e-9)
        h = hp(sigma=1.0, ell=(1.0,), noise=1.0, offset=0.0)
        post = gp.fit(gp.Dataset(np.array([[0.0]]), np.array([1.0])), h)
        assert post.alpha[0] == pytest.approx(0.5, rel=1e-9)

    def test_zero_residual_gives_zero_alpha(self):
        h = hp(sigma=1.0, ell=(1.0,), noise=0.3, slope=(2.0,), offset=1.0)
        X = np.array([[0.0], [1.0], [2.0]])
        post = gp.fit(gp.Dataset(X, 2.0 * X[:, 0] + 1.0), h)
        assert np.allclose(post.alpha, 0.0, atol=1e-12)

    def test_chol_reconstruction(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(8, 2))
        h = hp(sigma=1.5, ell=(1.0, 2.0), noise=0.2)
        post = gp.fit(gp.Dataset(X, rng.normal(size=8)), h)
        target = gp.kernel_matrix(X, h) + (0.2**2 + post.jitter) * np.eye(8)
        recon = post.chol_factor @ post.chol_factor.T
        rel = np.linalg.norm(recon - target) / np.linalg.norm(target)
        assert rel < 1e-8

    def test_alpha_residual(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        h = hp(sigma=1.0, ell=(1.0, 1.0, 1.0), noise=0.5)
        post = gp.fit(gp.Dataset(X, y), h)
        lhs = (gp.kernel_matrix(X, h) + 0.5**2 * np.eye(10)) @ post.alpha
        resid = y - h.mean(X)
        assert np.linalg.norm(lhs - resid) / np.linalg.norm(resid) < 1e-6

    def test_prior_mode_empty_dataset(self):
        h = hp(sigma=2.0, ell=(1.0, 1.0), noise=0.1, slope=(1.0, -1.0), offset=3.0)
        post = gp.fit(gp.Dataset(np.empty((0, 2)), np.empty(0)), h)
        x = np.array([2.0, 5.0])
        assert post.predict_mean(x) == pytest.approx(2.0 - 5.0 + 3.0)
        assert post.predict_var(x) == pytest.approx(4.0)

    def test_prior_reversion_far_from_data(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(12, 2))
        y = rng.normal(size=12)
        h = hp(sigma=1.4, ell=(1.0, 0.5), noise=0.2, slope=(0.3, 0.1), offset=1.0)
        post = gp.fit(gp.Dataset(X, y), h)
        x_far = np.array([50.0, 50.0])
        assert abs(post.predict_mean(x_far) - h.mean(x_far)) < 1e-6 * 1.4
        assert abs(post.predict_var(x_far) - 1.4**2) < 1e-6 * 1.4**2

    def test_near_interpolation_small_noise(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-2, 2, size=(9, 2))
        y = np.sin(X[:, 0]) + X[:, 1]
        h = hp(sigma=1.0, ell=(1.0, 1.0), noise=1e-6)
        post = gp.fit(gp.Dataset(X, y), h)
        for i in range(9):
            assert post.predict_mean(X[i]) == pytest.approx(y[i], abs=1e-4)
            assert post.predict_var(X[i]) <= 1e-4

    def test_predictions_match_dense_solve_oracle(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(3, 2))
        y = rng.normal(size=3)
        h = hp(sigma=1.2, ell=(0.8, 1.3), noise=0.3, slope=(0.1, 0.2), offset=0.5)
        post = gp.fit(gp.Dataset(X, y), h)
        x = rng.normal(size=2)
        K = np.array([[naive_kernel(a, b, 1.2, [0.8, 1.3]) for b in X] for a in X])
        kx = np.array([naive_kernel(a, x, 1.2, [0.8, 1.3]) for a in X])
        A = K + 0.3**2 * np.eye(3)
        mu_oracle = h.mean(x) + kx @ np.linalg.solve(A, y - h.mean(X))
        var_oracle = 1.2**2 - kx @ np.linalg.solve(A, kx)
        assert post.predict_mean(x) == pytest.approx(mu_oracle, abs=1e-8)
        assert post.predict_var(x) == pytest.approx(var_oracle, abs=1e-8)

    def test_variance_monotone_in_data(self):
        # conditioning on one more point can only shrink the variance
        rng = np.random.default_rng(7)
        for trial in range(10):
            X = rng.normal(size=(6, 2))
            y = rng.normal(size=6)
            h = hp(sigma=1.0, ell=(1.0, 1.0), noise=0.4)
            small = gp.fit(gp.Dataset(X[:5], y[:5]), h)
            big = gp.fit(gp.Dataset(X, y), h)
            x = rng.normal(size=2)
            assert big.predict_var(x) <= small.predict_var(x) + 1e-9

    def test_batch_matches_pointwise(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(7, 3))
        y = rng.normal(size=7)
        h = hp(sigma=1.0, ell=(1.0, 2.0, 0.5), noise=0.2)
        post = gp.fit(gp.Dataset(X, y), h)
        Q = rng.normal(size=(5, 3))
        mus = post.predict_mean_batch(Q)
        vars_ = post.predict_var_batch(Q)
        for i in range(5):
            assert mus[i] == pytest.approx(post.predict_mean(Q[i]), abs=1e-10)
            assert vars_[i] == pytest.approx(post.predict_var(Q[i]), abs=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(8, 3))
        y = rng.normal(size=8)
        h = hp(sigma=1.1, ell=(1.0, 1.5, 0.7), noise=0.3, slope=(0.2, 0.0, -0.1), offset=0.4)
        post = gp.fit(gp.Dataset(X, y), h)
        x = rng.normal(size=3)
        mu, dmu = post.predict_mean_grad(x)
        var, dvar = post.predict_var_grad(x)
        assert mu == pytest.approx(post.predict_mean(x), abs=1e-12)
        assert var == pytest.approx(post.predict_var(x), abs=1e-12)
        eps = 1e-6
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            fd_mu = (post.predict_mean(x + e) - post.predict_mean(x - e)) / (2 * eps)
            fd_var = (post.predict_var(x + e) - post.predict_var(x - e)) / (2 * eps)
            assert dmu[j] == pytest.approx(fd_mu, abs=1e-6)
            assert dvar[j] == pytest.approx(fd_var, abs=1e-6)


class TestLml:
    def test_scalar_formula(self):
        # N=1, residual 0, sigma=1, noise=1: -0.5 log 2 - 0.5 log 2pi
        h = hp(sigma=1.0, ell=(1.0,), noise=1.0, offset=2.0)
        value, _ = gp.log_marginal_likelihood(
            gp.Dataset(np.array([[0.0]]), np.array([2.0])), h
        )
        assert value == pytest.approx(-0.5 * math.log(2.0) - 0.5 * math.log(2 * math.pi), rel=1e-10)

    def test_zero_residual_maximises_data_fit(self):
        h = hp(sigma=1.0, ell=(1.0,), noise=0.5, offset=0.0)
        X = np.array([[0.0], [1.0]])
        v_zero, _ = gp.log_marginal_likelihood(gp.Dataset(X, np.zeros(2)), h)
        v_off, _ = gp.log_marginal_likelihood(gp.Dataset(X, np.array([0.5, -0.3])), h)
        assert v_zero > v_off

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        d = int(rng.integers(1, 8))
        n = int(rng.integers(4, 31))
        X = rng.normal(scale=2.0, size=(n, d))
        y = rng.normal(size=n)
        h = gp.Hyperparams(
            vertical_scale=float(rng.uniform(0.5, 2.0)),
            lengthscales=rng.uniform(0.5, 3.0, size=d),
            noise_std=float(rng.uniform(0.1, 1.0)),
            mean_slope=rng.normal(scale=0.3, size=d),
            mean_offset=float(rng.normal()),
        )
        vec = gp._pack(h)
        _, grad = gp.log_marginal_likelihood(gp.Dataset(X, y), h)
        step = 1e-5
        for j in range(vec.size):
            e = np.zeros_like(vec)
            e[j] = step
            up, _ = gp.log_marginal_likelihood(gp.Dataset(X, y), gp._unpack(vec + e, d))
            dn, _ = gp.log_marginal_likelihood(gp.Dataset(X, y), gp._unpack(vec - e, d))
            fd = (up - dn) / (2 * step)
            assert abs(grad[j] - fd) < 1e-5 * max(1.0, abs(fd)), f"component {j}"


class TestOptimize:
    def test_recovers_lengthscales_from_gp_draw(self):
        rng = np.random.default_rng(42)
        d, n = 2, 40
        true = hp(sigma=1.0, ell=(1.0, 3.0), noise=0.05)
        X = rng.uniform(-4, 4, size=(n, d))
        K = gp.kernel_matrix(X, true) + 1e-10 * np.eye(n)
        y = np.linalg.cholesky(K) @ rng.normal(size=n) + 0.05 * rng.normal(size=n)
        h0 = gp.default_init(gp.Dataset(X, y))
        h_opt, diag = gp.optimize_hyperparams(gp.Dataset(X, y), h0)
        assert diag.lml_final >= diag.lml_initial - 1e-12
        for est, truth in zip(np.sort(h_opt.lengthscales), (1.0, 3.0)):
            assert truth / 2 <= est <= truth * 2

    def test_stationary_start_returns_same_lml(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(15, 2))
        y = rng.normal(size=15)
        data = gp.Dataset(X, y)
        h1, _ = gp.optimize_hyperparams(data, gp.default_init(data))
        h2, diag2 = gp.optimize_hyperparams(data, h1, max_iters=50)
        assert abs(diag2.lml_final - diag2.lml_initial) < 1e-9

    def test_pure_noise_absorbed_into_noise_std(self):
        rng = np.random.default_rng(12)
        X = rng.uniform(-3, 3, size=(40, 2))
        y = rng.normal(scale=1.5, size=40)
        data = gp.Dataset(X, y)
        h_opt, _ = gp.optimize_hyperparams(data, gp.default_init(data))
        assert h_opt.noise_std**2 >= 0.5 * np.var(y)

    def test_never_returns_invalid_hyperparams(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(10, 1))
        y = rng.normal(size=10)
        h_opt, _ = gp.optimize_hyperparams(gp.Dataset(X, y), gp.default_init(gp.Dataset(X, y)))
        assert h_opt.vertical_scale > 0 and h_opt.noise_std > 0
        assert np.all(h_opt.lengthscales > 0)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10_000))
    def test_variance_bounds_hold(self, n, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        y = rng.normal(size=n)
        h = hp(sigma=1.0, ell=(1.0, 1.0), noise=0.3)
        post = gp.fit(gp.Dataset(X, y), h)
        x = rng.normal(size=2)
        v = post.predict_var(x)
        assert 0.0 <= v <= 1.0 + 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_fit_is_deterministic(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(5, 2))
        y = rng.normal(size=5)
        h = hp(sigma=1.0, ell=(1.0, 2.0), noise=0.2)
        a = gp.fit(gp.Dataset(X, y), h)
        b = gp.fit(gp.Dataset(X, y), h)
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.chol_factor, b.chol_factor)


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=6)
        h = hp(
            sigma=1.234567890123456,
            ell=(0.987654321098765, 2.0, 0.1),
            noise=0.05,
            slope=(0.1, -0.2, 0.3),
            offset=19.87654321,
        )
        post = gp.fit(gp.Dataset(X, y), h)
        path = tmp_path / "model.txt"
        gp.save_model(path, post, meta={"zone": "1"})
        loaded, meta = gp.load_model(path)
        assert meta["zone"] == "1"
        assert np.array_equal(loaded.dataset.X, X)
        assert np.array_equal(loaded.dataset.y, y)
        assert loaded.hyperparams.vertical_scale == h.vertical_scale
        assert np.array_equal(loaded.hyperparams.lengthscales, h.lengthscales)
        assert np.array_equal(loaded.alpha, post.alpha)

    def test_save_twice_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(15)
        post = gp.fit(
            gp.Dataset(rng.normal(size=(4, 2)), rng.normal(size=4)),
            hp(sigma=1.0, ell=(1.0, 1.0), noise=0.2),
        )
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        gp.save_model(p1, post)
        gp.save_model(p2, post)
        assert p1.read_bytes() == p2.read_bytes()
