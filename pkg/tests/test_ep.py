import math

import numpy as np
import pytest
from scipy.stats import norm

from minmax_bo.ep import EpSettings, LinearConstraint, ep_pairs, ep_probability


def rejection(mean, cov, constraints, count, rng):
    f = rng.multivariate_normal(mean, cov, size=count)
    ok = np.ones(count, dtype=bool)
    for c in constraints:
        ok &= f[:, c.plus_index] >= f[:, c.minus_index]
    return ok.mean(), f[ok]


def test_settings_validation():
    with pytest.raises(ValueError):
        EpSettings(damping=0.0)
    with pytest.raises(ValueError):
        EpSettings(tol=0.0)
    with pytest.raises(ValueError):
        EpSettings(retry_damping=1.5)
    with pytest.raises(ValueError):
        LinearConstraint(2, 2)


def test_single_symmetric_constraint():
    r = ep_probability([0.0, 0.0], np.eye(2), [LinearConstraint(0, 1)])
    assert r.probability == pytest.approx(0.5, abs=1e-9)
    assert r.converged


def test_single_shifted_constraint():
    r = ep_probability([1.0, 0.0], np.eye(2), [LinearConstraint(0, 1)])
    # Phi(1/sqrt(2)) from scipy as the closed-form oracle
    assert r.probability == pytest.approx(norm.cdf(1 / math.sqrt(2)), abs=1e-9)
    assert r.probability == pytest.approx(0.7602, abs=1e-4)


def test_single_constraint_moments_match_truncated_normal():
    r = ep_probability(
        [0.3, -0.2], [[1.0, 0.2], [0.2, 0.5]], [LinearConstraint(0, 1)], EpSettings(tol=1e-12)
    )
    # u = f0 - f1 ~ N(0.5, 1.1); truncation at 0 is exact for one site
    s = math.sqrt(1.1)
    a = -0.5 / s
    lam = norm.pdf(a) / norm.sf(a)
    assert r.mean[0] - r.mean[1] == pytest.approx(0.5 + s * lam, abs=1e-8)


def test_empty_constraint_set():
    r = ep_probability([0.0], [[1.0]], [])
    assert r.probability == 1.0


def test_index_validation():
    with pytest.raises(ValueError):
        ep_probability([0.0, 0.0], np.eye(2), [LinearConstraint(0, 2)])
    with pytest.raises(ValueError):
        ep_probability([0.0, 0.0], np.eye(3), [LinearConstraint(0, 1)])


def random_case(rng):
    while True:
        A = rng.standard_normal((4, 4))
        cov = A @ A.T / 4 + 0.1 * np.eye(4)
        mean = rng.standard_normal(4) * 0.5
        pairs = set()
        while len(pairs) < 3:
            p, m = rng.choice(4, 2, replace=False)
            pairs.add((int(p), int(m)))
        constraints = [LinearConstraint(p, m) for p, m in sorted(pairs)]
        yield mean, cov, constraints


def test_matches_monte_carlo_on_random_problems():
    rng = np.random.default_rng(0)
    checked = 0
    for mean, cov, constraints in random_case(rng):
        truth, accepted = rejection(mean, cov, constraints, 10**6, rng)
        if not 0.1 <= truth <= 0.9:
            continue
        r = ep_probability(mean, cov, constraints)
        assert abs(r.probability - truth) < 0.05
        # approximate posterior mean tracks the truncated sample mean
        assert np.abs(r.mean - accepted.mean(axis=0)).max() < 0.1
        checked += 1
        if checked == 5:
            break


def test_monotone_in_mean_difference():
    cov = [[1.0, 0.3], [0.3, 2.0]]
    cons = [LinearConstraint(0, 1)]
    probs = [ep_probability([d, 0.0], cov, cons).probability for d in np.linspace(-4, 4, 41)]
    assert np.all(np.diff(probs) >= 0)


def test_output_clamped_to_floor():
    r = ep_probability([-80.0, 0.0], np.eye(2) * 1e-2, [LinearConstraint(0, 1)])
    assert r.log_probability == pytest.approx(math.log(1e-300))
    assert 0.0 < r.probability <= 1.0


def test_contradictory_constraints_give_tiny_probability():
    cons = [LinearConstraint(0, 1), LinearConstraint(1, 0)]
    r = ep_probability([0.0, 0.0], np.eye(2), cons)
    assert r.probability < 1e-3


def test_chain_constraints_against_exact_order_probability():
    # P(f0 >= f1 >= f2) = 1/6 for iid normals
    cons = [LinearConstraint(0, 1), LinearConstraint(1, 2)]
    r = ep_probability(np.zeros(3), np.eye(3), cons)
    assert abs(r.probability - 1 / 6) < 0.02


def test_retry_recovers_or_matches_undamped_run():
    rng = np.random.default_rng(3)
    mean, cov, constraints = next(random_case(rng))
    plus = np.array([c.plus_index for c in constraints])
    minus = np.array([c.minus_index for c in constraints])
    base = ep_pairs(mean, cov, plus, minus, EpSettings(damping=0.5))
    fast = ep_pairs(mean, cov, plus, minus, EpSettings(damping=1.0, retry_damping=0.5, tol=1e-8))
    assert fast.converged
    assert fast.log_probability == pytest.approx(base.log_probability, abs=1e-4)


def test_deterministic():
    rng = np.random.default_rng(4)
    mean, cov, constraints = next(random_case(rng))
    a = ep_probability(mean, cov, constraints)
    b = ep_probability(mean, cov, constraints)
    assert a.log_probability == b.log_probability
