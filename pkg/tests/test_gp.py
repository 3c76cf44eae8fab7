import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_gp_posterior
from ssmid.gp import (AcquisitionConfig, GaussianProcessSurrogate, Kernel, KernelConfigError,
                      ObservationPool, expected_improvement, expected_improvement_from_moments,
                      gp_fit, gp_posterior, kernel_eval, log_expected_improvement_from_moments,
                      maximize_acquisition)


def fixed_gp(X, y, variance=1.0, ls=0.3, noise=1e-6, kernel="matern52"):
    d = np.atleast_2d(X).shape[1]
    gp = GaussianProcessSurrogate(kernel=kernel, optimize=False, initial_hyperparameters={
        "variance": variance, "lengthscales": np.full(d, ls), "noise": noise})
    return gp.fit(X, y)


# --- kernels ---------------------------------------------------------------------

@pytest.mark.parametrize("family", ["matern52", "se"])
def test_kernel_diagonal_and_symmetry(family):
    rng = np.random.default_rng(0)
    k = Kernel(family, 2.5, (0.3, 0.7))
    for _ in range(20):
        a, b = rng.random(2), rng.random(2)
        assert kernel_eval(k, a, a) == 2.5
        assert kernel_eval(k, a, b) == pytest.approx(kernel_eval(k, b, a), rel=1e-14)
        assert 0 < kernel_eval(k, a, b) <= 2.5


def test_se_kernel_at_one_lengthscale():
    k = Kernel("se", 1.0, (0.4,))
    assert kernel_eval(k, [0.1], [0.5]) == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_matern_closed_form():
    k = Kernel("matern52", 1.0, (0.5,))
    r = 0.3 / 0.5
    s = np.sqrt(5) * r
    assert kernel_eval(k, [0.0], [0.3]) == pytest.approx((1 + s + s * s / 3) * np.exp(-s))


def test_kernel_rejects_bad_hyperparameters():
    with pytest.raises(KernelConfigError):
        Kernel("matern52", 0.0, (1.0,))
    with pytest.raises(KernelConfigError):
        Kernel("matern52", 1.0, (-1.0,))
    with pytest.raises(KernelConfigError):
        Kernel("cubic", 1.0, (1.0,))


def test_kernel_matrix_positive_definite():
    X = np.random.default_rng(1).random((30, 3))
    K = Kernel("matern52", 1.0, (0.2, 0.5, 1.0)).matrix(X)
    assert np.linalg.eigvalsh(K).min() > 0


# --- observation pool -------------------------------------------------------------

def test_pool_excludes_minus_inf_from_training_and_ranking():
    pool = ObservationPool(2)
    for x, v in [([0, 0], 1.0), ([1, 1], -np.inf), ([0.5, 0.5], 3.0), ([0.2, 0.1], np.nan)]:
        pool.add(x, v)
    X, y = pool.training_data()
    assert len(y) == 2 and np.all(np.isfinite(y))
    assert pool.best_value == 3.0 and pool.best_index == 2
    assert list(pool.ranked()) == [2, 0]
    assert pool.rank_of(2) == 1 and pool.rank_of(0) == 2 and pool.rank_of(1) > 2
    with pytest.raises(ValueError):
        pool.add([1, 2, 3], 0.0)


def test_pool_rank_matches_sort_oracle():
    rng = np.random.default_rng(3)
    pool = ObservationPool(1)
    vals = rng.integers(0, 10, 40).astype(float)
    for v in vals:
        pool.add(rng.random(1), v)
    for i, v in enumerate(vals):
        assert pool.rank_of(i) == 1 + int(np.sum(vals > v)) + int(np.sum(vals[:i] == v))
    assert np.array_equal(pool.ranked(), np.argsort(-vals, kind="stable"))


# --- posterior ---------------------------------------------------------------------

def test_posterior_interpolates_training_points():
    X = np.array([[0.1], [0.4], [0.9]])
    y = np.array([1.0, -2.0, 0.5])
    gp = fixed_gp(X, y, noise=1e-10)
    mu, sd = gp.predict(X, return_std=True)
    assert np.allclose(mu, y, atol=1e-6)
    assert np.all(sd < 1e-3)


def test_posterior_reverts_to_prior_far_away():
    X = np.array([[0.1], [0.2], [0.3]])
    y = np.array([1.0, 2.0, 4.0])
    gp = fixed_gp(X, y, variance=1.7, ls=0.01)
    mu, sd = gp.predict([[0.95]], return_std=True)
    assert mu[0] == pytest.approx(y.mean(), abs=1e-9)
    assert sd[0] ** 2 == pytest.approx(1.7 * y.std() ** 2, rel=1e-9)


@pytest.mark.parametrize("family", ["matern52", "se"])
def test_posterior_matches_dense_reference_three_points(family):
    X = np.array([[0.1], [0.5], [0.8]])
    y = np.array([0.3, 1.2, -0.4])
    gp = fixed_gp(X, y, variance=1.3, ls=0.35, noise=1e-3, kernel=family)
    Xs = np.linspace(0, 1, 11)[:, None]
    mu, sd = gp.predict(Xs, return_std=True)
    mu_r, sd_r = dense_gp_posterior(X, y, Xs, 1.3, 0.35, 1e-3, family)
    assert np.allclose(mu, mu_r, atol=1e-10) and np.allclose(sd, sd_r, atol=1e-10)


def test_posterior_matches_dense_reference_random_pools():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n, d = rng.integers(2, 51), rng.integers(1, 5)
        X, y = rng.random((n, d)), rng.standard_normal(n)
        ls = rng.uniform(0.2, 1.0, d)
        gp = GaussianProcessSurrogate(optimize=False, initial_hyperparameters={
            "variance": 1.1, "lengthscales": ls, "noise": 1e-4}).fit(X, y)
        Xs = rng.random((20, d))
        mu, sd = gp.predict(Xs, return_std=True)
        mu_r, sd_r = dense_gp_posterior(X, y, Xs, 1.1, ls, 1e-4)
        assert np.allclose(mu, mu_r, atol=1e-8) and np.allclose(sd, sd_r, atol=1e-8)


def test_duplicate_point_is_absorbed():
    rng = np.random.default_rng(2)
    X, y = rng.random((8, 2)), rng.standard_normal(8)
    Xd, yd = np.vstack([X, X[:1]]), np.append(y, y[0])
    gp = GaussianProcessSurrogate(optimize=False, initial_hyperparameters={
        "variance": 1.0, "lengthscales": [0.4, 0.4], "noise": 1e-6}).fit(Xd, yd)
    mu, sd = gp.predict(X, return_std=True)
    assert np.allclose(mu, y, atol=1e-3) and np.all(np.isfinite(sd))


def test_posterior_variance_bounded_by_prior():
    rng = np.random.default_rng(4)
    X, y = rng.random((25, 3)), rng.standard_normal(25)
    gp = gp_fit(_pool(X, y), seed=0)
    _, sd = gp.predict(rng.random((200, 3)), return_std=True)
    prior = gp.kernel_.variance * gp.y_scale_ ** 2
    assert np.all(sd ** 2 <= prior + 1e-10)


def _pool(X, y):
    pool = ObservationPool(X.shape[1])
    for x, v in zip(X, y):
        pool.add(x, v)
    return pool


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_conditioning_never_increases_uncertainty(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.random((12, 2)), rng.standard_normal(12)
    probes = rng.random((15, 2))
    hp = {"variance": 1.0, "lengthscales": [0.3, 0.6], "noise": 1e-4}
    a = GaussianProcessSurrogate(optimize=False, initial_hyperparameters=hp).fit(X[:-1], y[:-1])
    b = GaussianProcessSurrogate(optimize=False, initial_hyperparameters=hp).fit(X, y)
    # compare in standardized units so the target rescaling cancels
    _, sa = a.predict(probes, return_std=True)
    _, sb = b.predict(probes, return_std=True)
    assert np.all(sb / b.y_scale_ <= sa / a.y_scale_ + 1e-8)


# --- training ----------------------------------------------------------------------

def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    X, y = rng.random((15, 2)), rng.standard_normal(15)
    for family in ("matern52", "se"):
        gp = GaussianProcessSurrogate(kernel=family)
        p = np.log([1.3, 0.4, 0.7, 1e-2])
        _, g = gp.log_marginal_likelihood(p, X, y, eval_gradient=True)
        h = 1e-6
        fd = [(gp.log_marginal_likelihood(p + h * e, X, y)
               - gp.log_marginal_likelihood(p - h * e, X, y)) / (2 * h) for e in np.eye(4)]
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_training_is_deterministic():
    rng = np.random.default_rng(6)
    X, y = rng.random((20, 2)), rng.standard_normal(20)
    a = GaussianProcessSurrogate(random_state=3).fit(X, y)
    b = GaussianProcessSurrogate(random_state=3).fit(X, y)
    assert np.array_equal(a.hyperparameters_, b.hyperparameters_)


def test_recovers_lengthscale_of_sampled_gp():
    true_ls = 0.2
    k = Kernel("matern52", 1.0, (true_ls,))
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.random((40, 1))
        K = k.matrix(X) + 1e-6 * np.eye(40)
        y = np.linalg.cholesky(K) @ rng.standard_normal(40)
        gp = GaussianProcessSurrogate(random_state=seed).fit(X, y)
        ratios.append(gp.kernel_.lengthscales[0] / true_ls)
    assert 0.5 <= np.median(ratios) <= 2.0


def test_identical_targets_fall_back_to_unit_scale():
    X = np.random.default_rng(0).random((5, 2))
    gp = GaussianProcessSurrogate().fit(X, np.full(5, 7.0))
    mu, sd = gp.predict(X, return_std=True)
    assert gp.y_scale_ == 1.0 and np.allclose(mu, 7.0) and np.all(np.isfinite(sd))


def test_fit_rejects_bad_targets():
    with pytest.raises(ValueError):
        GaussianProcessSurrogate().fit(np.zeros((2, 1)), [0.0, np.inf])
    with pytest.raises(ValueError):
        gp_fit(_pool(np.zeros((1, 1)), np.zeros(1)))


def test_gp_posterior_scalar_helper():
    gp = fixed_gp(np.array([[0.2], [0.7]]), np.array([0.0, 1.0]))
    mu, sd = gp_posterior(gp, [0.5])
    m2, s2 = gp.predict([[0.5]], return_std=True)
    assert mu == m2[0] and sd == s2[0]


def test_affine_target_rescaling_keeps_acquisition_argmax():
    rng = np.random.default_rng(8)
    X, y = rng.random((10, 2)), rng.standard_normal(10)
    hp = {"variance": 1.0, "lengthscales": [0.3, 0.3], "noise": 1e-4}
    a = GaussianProcessSurrogate(optimize=False, initial_hyperparameters=hp).fit(X, y)
    b = GaussianProcessSurrogate(optimize=False, initial_hyperparameters=hp).fit(X, 50 * y - 3)
    probes = rng.random((300, 2))
    ea = expected_improvement(a, probes, y.max())
    eb = expected_improvement(b, probes, 50 * y.max() - 3)
    assert np.argmax(ea) == np.argmax(eb)
    assert np.allclose(eb, 50 * ea, rtol=1e-8, atol=1e-12)


# --- expected improvement ------------------------------------------------------------

def test_ei_degenerate_cases():
    assert expected_improvement_from_moments(1.0, 0.0, 2.0) == 0.0
    assert expected_improvement_from_moments(2.5, 0.0, 2.0) == 0.5
    assert expected_improvement_from_moments(0.0, 1.0, 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi))


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(5):
        mu, sd, best = rng.normal(), rng.uniform(0.2, 2), rng.normal()
        draws = rng.normal(mu, sd, 1_000_000)
        mc = np.maximum(draws - best, 0).mean()
        assert expected_improvement_from_moments(mu, sd, best) == pytest.approx(mc, rel=0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-6, 10), st.floats(-50, 50))
def test_log_ei_consistent_and_ei_nonnegative(mu, sd, best):
    ei = expected_improvement_from_moments(mu, sd, best)
    assert ei >= 0
    lei = log_expected_improvement_from_moments(mu, sd, best)[0]
    if ei > 1e-250:
        assert np.exp(lei) == pytest.approx(ei, rel=1e-6, abs=1e-300)
    else:
        assert np.isfinite(lei) or lei == -np.inf


def test_log_ei_is_monotone_in_far_tail():
    z = np.linspace(-40, -5, 50)
    lei = log_expected_improvement_from_moments(z, np.ones_like(z), 0.0)
    assert np.all(np.isfinite(lei)) and np.all(np.diff(lei) > 0)


def test_ei_zero_at_best_noise_free_training_point():
    X = np.array([[0.1], [0.5], [0.9]])
    y = np.array([0.0, 2.0, 1.0])
    gp = fixed_gp(X, y, noise=1e-12)
    assert expected_improvement(gp, [0.5], 2.0) < 1e-4


# --- acquisition maximization ----------------------------------------------------------

def test_acquisition_beats_random_probes():
    gp = fixed_gp(np.array([[0.3, 0.6]]), np.array([1.0]), kernel="se")
    gp2 = fixed_gp(np.array([[0.3, 0.6], [0.8, 0.1]]), np.array([1.0, 0.2]), kernel="se")
    rng = np.random.default_rng(0)
    for g, best in ((gp, 1.0), (gp2, 1.0)):
        x, ei = maximize_acquisition(g, best, 2, seed=1)
        probes = expected_improvement(g, rng.random((100, 2)), best)
        assert ei >= probes.max() - 1e-12
        assert np.all((x >= 0) & (x <= 1))


def test_acquisition_flat_surface_and_reproducibility():
    X = np.random.default_rng(0).random((4, 3))
    gp = GaussianProcessSurrogate().fit(X, np.zeros(4))
    x, ei = maximize_acquisition(gp, 0.0, 3, seed=5)
    assert np.all((x >= 0) & (x <= 1)) and ei >= 0
    x2, _ = maximize_acquisition(gp, 0.0, 3, seed=5)
    assert np.array_equal(x, x2)


def test_acquisition_without_polish_returns_a_start():
    gp = fixed_gp(np.array([[0.5]]), np.array([0.0]))
    x, _ = maximize_acquisition(gp, 0.0, 1, AcquisitionConfig(polish=False), seed=0)
    assert 0 <= x[0] <= 1
