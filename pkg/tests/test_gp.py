import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from minmax_bo import gp as gpm
from minmax_bo.gp import KernelParams

BRANIN = KernelParams(1.0, (0.2, 0.4), 0.001)
SHARP = KernelParams(1.0, (0.2, 0.4), 1e-9)


def random_data(rng, n, params=BRANIN):
    X = rng.uniform(size=(n, 2))
    y = np.sin(6 * X[:, 0]) + X[:, 1] ** 2
    return gpm.fit(X, y, params), X, y


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(0.0, (0.2,), 0.1)
    with pytest.raises(ValueError):
        KernelParams(1.0, (0.2, -1.0), 0.1)
    with pytest.raises(ValueError):
        KernelParams(1.0, (), 0.1)
    with pytest.raises(ValueError):
        KernelParams(1.0, (0.2,), 0.0)


def test_kernel_eval_examples():
    assert gpm.kernel_eval([0.3, 0.7], [0.3, 0.7], BRANIN) == 1.0
    # hand evaluation: (0.2/0.2)^2 + (0.4/0.4)^2 = 2 -> exp(-1)
    assert gpm.kernel_eval([0, 0], [0.2, 0.4], BRANIN) == pytest.approx(0.36787944117, abs=1e-10)
    a, b = [0.1, 0.9], [0.6, 0.2]
    assert gpm.kernel_eval(a, b, BRANIN) == gpm.kernel_eval(b, a, BRANIN)


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        gpm.kernel_eval([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], BRANIN)
    with pytest.raises(ValueError):
        gpm.kernel_matrix(np.zeros((2, 3)), np.zeros((1, 3)), BRANIN)


def test_kernel_matrix_matches_pointwise():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=(5, 2)), rng.uniform(size=(4, 2))
    K = gpm.kernel_matrix(a, b, BRANIN)
    ref = np.array([[gpm.kernel_eval(x, z, BRANIN) for z in b] for x in a])
    np.testing.assert_allclose(K, ref, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 40), st.just(2)), elements=st.floats(0, 1)))
def test_kernel_gram_factorizes(points):
    K = gpm.kernel_matrix(points, points, KernelParams(1.0, (0.09, 0.09), 0.001))
    factor, jitter = gpm.robust_cholesky(K, 1.0)
    assert jitter <= 1e-6
    np.testing.assert_allclose(factor @ factor.T, K + jitter * np.eye(len(K)), atol=1e-9)


def test_gram_factor_reproduces_matrix():
    rng = np.random.default_rng(1)
    gp, X, _ = random_data(rng, 25)
    gram = gpm.kernel_matrix(X, X, BRANIN) + BRANIN.noise_std**2 * np.eye(25)
    rebuilt = gp.gram_factor @ gp.gram_factor.T
    assert np.linalg.norm(rebuilt - gram) / np.linalg.norm(gram) < 1e-8


def test_interpolation_at_vanishing_noise():
    gp = gpm.fit([[0.4, 0.5]], [1.7], SHARP)
    mean, cov = gpm.predict(gp, [[0.4, 0.5]])
    assert abs(mean[0] - 1.7) < 1e-6
    assert cov[0, 0] >= 0.0


def test_empty_query_returns_empty():
    gp, _, _ = random_data(np.random.default_rng(2), 4)
    mean, cov = gpm.predict(gp, np.zeros((0, 2)))
    assert mean.shape == (0,) and cov.shape == (0, 0)


def test_duplicate_locations_fit():
    X = [[0.3, 0.3], [0.3, 0.3]]
    gp = gpm.fit(X, [0.0, 1.0], BRANIN)
    gram = gpm.kernel_matrix(X, X, BRANIN) + BRANIN.noise_std**2 * np.eye(2)
    assert np.linalg.eigvalsh(gram).min() > 0
    mean, _ = gpm.predict(gp, [[0.3, 0.3]])
    assert mean[0] == pytest.approx(0.5, abs=1e-3)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        gpm.fit([[0.1, 0.2]], [1.0, 2.0], BRANIN)
    with pytest.raises(ValueError):
        gpm.fit([[1.2, 0.2]], [1.0], BRANIN)


def test_conditioning_error():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(gpm.ConditioningError, match="not positive definite"):
        gpm.robust_cholesky(bad, 1.0)


def test_prior_predictive():
    gp = gpm.fit(np.zeros((0, 2)), [], BRANIN)
    mean, cov = gpm.predict(gp, [[0.1, 0.2], [0.8, 0.9]])
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(np.diag(cov), 1.0)


def test_far_query_reverts_to_prior():
    params = KernelParams(1.0, (0.05, 0.05), 0.001)
    gp = gpm.fit([[0.0, 0.0], [0.05, 0.0]], [2.0, -1.0], params)
    mean, var = gpm.predict(gp, [[1.0, 1.0]], full_cov=False)
    assert abs(mean[0]) < 1e-3 and abs(var[0] - 1.0) < 1e-3


def test_mean_at_training_inputs_matches_dense_solve():
    rng = np.random.default_rng(3)
    gp, X, y = random_data(rng, 12)
    K = gpm.kernel_matrix(X, X, BRANIN)
    expected = K @ np.linalg.solve(K + BRANIN.noise_std**2 * np.eye(12), y)
    mean, _ = gpm.predict(gp, X)
    np.testing.assert_allclose(mean, expected, atol=1e-9)


def test_predict_covariance_properties():
    rng = np.random.default_rng(4)
    gp, _, _ = random_data(rng, 15)
    Q = rng.uniform(size=(30, 2))
    _, cov = gpm.predict(gp, Q)
    np.testing.assert_array_equal(cov, cov.T)
    assert np.diag(cov).min() >= 0.0
    assert np.diag(cov).max() <= BRANIN.signal_std**2 + 1e-9
    _, var = gpm.predict(gp, Q, full_cov=False)
    np.testing.assert_allclose(var, np.diag(cov), atol=1e-12)


def test_sample_joint_statistics():
    rng = np.random.default_rng(5)
    gp, _, _ = random_data(rng, 6)
    q = [[0.5, 0.5]]
    mean, cov = gpm.predict(gp, q)
    draws = gpm.sample_joint(gp, q, 10000, np.random.default_rng(6))
    assert draws.shape == (10000, 1)
    assert abs(draws.mean() - mean[0]) < 4 * np.sqrt(cov[0, 0] / 10000)


def test_sample_joint_degenerate_and_deterministic():
    gp = gpm.fit([[0.2, 0.3]], [0.8], SHARP)
    draws = gpm.sample_joint(gp, [[0.2, 0.3]], 50, np.random.default_rng(0))
    assert np.abs(draws - 0.8).max() < 1e-3
    a = gpm.sample_joint(gp, [[0.1, 0.1], [0.9, 0.4]], 3, np.random.default_rng(11))
    b = gpm.sample_joint(gp, [[0.1, 0.1], [0.9, 0.4]], 3, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        gpm.sample_joint(gp, [[0.1, 0.1]], 0, np.random.default_rng(0))


def test_fantasize_interpolates_and_leaves_original():
    gp = gpm.fit([[0.2, 0.3]], [0.8], SHARP)
    new = gpm.fantasize(gp, [0.7, 0.6], -0.4)
    assert gp.n == 1 and new.n == 2
    mean, _ = gpm.predict(new, [[0.7, 0.6]])
    assert abs(mean[0] + 0.4) < 1e-6


def test_fantasize_at_mean_far_away_keeps_training_means():
    rng = np.random.default_rng(7)
    params = KernelParams(1.0, (0.09, 0.09), 0.001)
    X = rng.uniform(0, 0.3, size=(6, 2))
    gp = gpm.fit(X, rng.standard_normal(6), params)
    far = [1.0, 1.0]
    y_far = gpm.predict(gp, [far])[0][0]
    before = gpm.predict(gp, X)[0]
    after = gpm.predict(gpm.fantasize(gp, far, y_far), X)[0]
    np.testing.assert_allclose(after, before, atol=1e-6)


def test_fantasy_basis_matches_refit():
    rng = np.random.default_rng(8)
    gp, _, _ = random_data(rng, 10)
    targets = rng.uniform(size=(12, 2))
    cand = [0.35, 0.65]
    basis = gpm.fantasy_basis(gp, cand, targets)
    for y in (-1.3, 0.2, 2.5):
        m_ref, c_ref = gpm.predict(gpm.fantasize(gp, cand, y), targets)
        np.testing.assert_allclose(basis.fantasy_mean(y)[0], m_ref, atol=1e-8)
        np.testing.assert_allclose(basis.fantasy_cov, c_ref, atol=1e-8)


def test_fantasy_tower_property():
    rng = np.random.default_rng(9)
    gp, _, _ = random_data(rng, 8)
    cand, grid_point = [0.45, 0.5], [[0.5, 0.55]]
    m, v = gpm.predict(gp, [cand], full_cov=False)
    sd = np.sqrt(v[0] + BRANIN.noise_std**2)
    ys = m[0] + sd * np.random.default_rng(10).standard_normal(1000)
    means = np.array([gpm.predict(gpm.fantasize(gp, cand, y), grid_point)[0][0] for y in ys])
    current = gpm.predict(gp, grid_point)[0][0]
    assert abs(means.mean() - current) < 4 * means.std(ddof=1) / np.sqrt(len(means))


def test_fit_records_jitter_used_by_fantasies():
    rng = np.random.default_rng(12)
    gp, _, _ = random_data(rng, 10)
    assert 0 < gp.jitter <= 1e-6
    assert gp.observation_variance == BRANIN.noise_std**2 + gp.jitter
    targets = rng.uniform(size=(6, 2))
    basis = gpm.fantasy_basis(gp, [0.35, 0.65], targets)
    ref, _ = gpm.predict(gpm.fantasize(gp, [0.35, 0.65], 0.9), targets)
    np.testing.assert_allclose(basis.fantasy_mean(0.9)[0], ref, atol=1e-10)
