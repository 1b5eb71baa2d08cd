import numpy as np
import pytest

from prefgame.core import (
    GameSpec,
    LabelledPair,
    bradley_terry_preferences,
    make_rng,
    sample_labelled_pairs,
    total_variation,
    two_action_preferences,
    uniform_policy,
    uniform_preferences,
)
from prefgame.checks import eligible_variance_configs
from prefgame.dynamics import Algorithm, algorithm_gradient
from prefgame.estimators import (
    BradleyTerryError,
    bt_log_likelihood,
    contrastive_estimate,
    covariance_terms,
    exact_variance,
    fit_bradley_terry,
    monte_carlo_variance,
    noncontrastive_estimate,
    variance_condition,
    variance_kernel,
    win_counts,
)
from prefgame.solvers import rlhf_closed_form

from conftest import random_games


def flat_game(n=3):
    return GameSpec(uniform_preferences(n), uniform_policy(n), 0.3)


# --- single-pair estimates ----------------------------------------------------


def test_equal_pair_gives_zero_estimates():
    for spec, phi in random_games(5, seed=31):
        for y in range(spec.n):
            assert not np.any(noncontrastive_estimate(spec, phi, y, y))
            assert not np.any(contrastive_estimate(spec, phi, y, y))


def test_flat_game_at_reference_gives_zero_everywhere():
    spec = flat_game()
    phi = np.zeros(3)
    np.testing.assert_array_equal(variance_kernel(spec, phi), 0.0)
    for which in ("contrastive", "noncontrastive"):
        stats = exact_variance(spec, phi, which)
        assert stats.total_variance == 0.0
        np.testing.assert_array_equal(stats.mean, 0.0)
    assert variance_condition(spec, phi) == 0.0


def test_zero_reference_probability_rejected():
    spec = GameSpec(uniform_preferences(3), np.array([0.5, 0.5, 0.0]), 0.3)
    with pytest.raises(ValueError):
        contrastive_estimate(spec, np.zeros(3), 0, 1)


def test_unknown_estimator_name_rejected():
    with pytest.raises(ValueError):
        exact_variance(flat_game(), np.zeros(3), "antithetic")


def test_kernel_is_antisymmetric():
    for spec, phi in random_games(20, seed=32):
        f = variance_kernel(spec, phi)
        np.testing.assert_allclose(f, -f.T, atol=1e-12)


# --- exact moments ------------------------------------------------------------


def test_means_coincide_and_match_self_play_gradient():
    for spec, phi in random_games(20, seed=33):
        c = exact_variance(spec, phi, "contrastive")
        nc = exact_variance(spec, phi, "noncontrastive")
        np.testing.assert_allclose(c.mean, nc.mean, atol=1e-12)
        np.testing.assert_allclose(nc.mean, algorithm_gradient(Algorithm.self_play(), spec, phi), atol=1e-12)


def test_stats_invariants():
    for spec, phi in random_games(10, seed=34):
        for which in ("contrastive", "noncontrastive"):
            s = exact_variance(spec, phi, which)
            assert s.exact and s.n_outcomes_or_samples == spec.n**2
            assert s.total_variance >= 0
            assert s.total_variance == pytest.approx(s.per_coordinate_variance.sum(), abs=1e-15)


def test_contrastive_variance_decomposition():
    for spec, phi in random_games(20, seed=35):
        terms = covariance_terms(spec, phi)
        c = exact_variance(spec, phi, "contrastive").total_variance
        assert c == pytest.approx(0.5 * (terms["var_x1"] + terms["cov_direct"]), abs=1e-12)
        assert exact_variance(spec, phi, "noncontrastive").total_variance == pytest.approx(terms["var_x1"], abs=1e-12)


def test_covariance_identity():
    for spec, phi in random_games(20, seed=36):
        terms = covariance_terms(spec, phi)
        assert terms["cov_direct"] == pytest.approx(terms["cov_identity"], abs=1e-12)


def test_condition_is_sufficient_for_variance_reduction():
    # 100 games on which the condition holds, found by rejection sampling
    for spec, phi in eligible_variance_configs(make_rng(37), 100):
        c = exact_variance(spec, phi, "contrastive").total_variance
        nc = exact_variance(spec, phi, "noncontrastive").total_variance
        assert c <= nc + 1e-15


def test_condition_never_holds_with_two_actions():
    for spec, phi in random_games(50, seed=43, n_range=(2, 3)):
        assert variance_condition(spec, 3.0 * phi) <= 0.0


def test_per_coordinate_condition_sums_to_total():
    spec, phi = random_games(1, seed=38)[0]
    assert variance_condition(spec, phi, per_coordinate=True).sum() == pytest.approx(variance_condition(spec, phi))


def test_two_action_example():
    spec = GameSpec(two_action_preferences(0.9), uniform_policy(2), 0.1)
    phi = np.zeros(2)
    c = exact_variance(spec, phi, "contrastive").total_variance
    nc = exact_variance(spec, phi, "noncontrastive").total_variance
    assert c <= nc + 1e-15
    assert c == pytest.approx(0.02, abs=1e-15) and nc == pytest.approx(0.02, abs=1e-15)
    # the sufficient condition itself is negative here: the two variances tie rather than improve
    assert variance_condition(spec, phi) == pytest.approx(-0.04, abs=1e-15)


@pytest.mark.parametrize("which", ["contrastive", "noncontrastive"])
def test_monte_carlo_agrees_with_exact(which):
    spec, phi = random_games(1, seed=39, n_range=(4, 5))[0]
    N = 10**6
    exact = exact_variance(spec, phi, which)
    mc = monte_carlo_variance(spec, phi, which, N, make_rng(40))
    assert not mc.exact and mc.n_outcomes_or_samples == N
    sigma = np.sqrt(exact.total_variance / N)
    assert np.linalg.norm(mc.mean - exact.mean) <= 3 * sigma
    assert mc.total_variance == pytest.approx(exact.total_variance, rel=0.02)


# --- Bradley-Terry ------------------------------------------------------------


def test_balanced_wins_give_zero_rewards():
    samples = [LabelledPair(0, 1), LabelledPair(1, 0), LabelledPair(1, 2), LabelledPair(2, 1),
               LabelledPair(0, 2), LabelledPair(2, 0)]
    fit = fit_bradley_terry(samples, 3)
    assert fit.converged
    np.testing.assert_allclose(fit.rewards, 0.0, atol=1e-12)


def test_two_action_win_rate_gives_log_odds():
    samples = [LabelledPair(0, 1)] * 75 + [LabelledPair(1, 0)] * 25
    r = fit_bradley_terry(samples, 2).rewards
    assert r[0] - r[1] == pytest.approx(np.log(3), abs=1e-3)
    assert r.sum() == pytest.approx(0.0, abs=1e-14)


def test_separable_data_is_flagged():
    with pytest.raises(BradleyTerryError):
        fit_bradley_terry([LabelledPair(0, 1)] * 10, 2)


def test_regulariser_makes_separable_data_fittable():
    fit = fit_bradley_terry([LabelledPair(0, 1)] * 10, 2, regulariser=0.1)
    assert fit.converged and fit.rewards[0] > fit.rewards[1]


def test_iteration_budget_exhaustion_raises():
    samples = [LabelledPair(0, 1)] * 99 + [LabelledPair(1, 0)]
    with pytest.raises(BradleyTerryError):
        fit_bradley_terry(samples, 2, max_iter=2)


def test_bad_samples_rejected():
    with pytest.raises(ValueError):
        fit_bradley_terry([LabelledPair(0, 3)], 2)
    with pytest.raises(ValueError):
        fit_bradley_terry([], 2)


def test_log_likelihood_non_decreasing():
    rng = make_rng(41)
    r_true = rng.normal(size=5)
    pi = uniform_policy(5)
    samples = sample_labelled_pairs(bradley_terry_preferences(r_true), pi, pi, 2000, rng)
    fit = fit_bradley_terry(samples, 5)
    assert np.all(np.diff(fit.log_likelihoods) >= -1e-15)
    assert fit.log_likelihoods[-1] == pytest.approx(bt_log_likelihood(fit.rewards, win_counts(samples, 5)))


def test_fitted_rewards_recover_rlhf_optimum():
    rng = make_rng(42)
    r_true = np.array([0.8, -0.3, 0.1, -0.6])
    ref = np.array([0.4, 0.3, 0.2, 0.1])
    pi = uniform_policy(4)
    samples = sample_labelled_pairs(bradley_terry_preferences(r_true), pi, pi, 10**5, rng)
    r_hat = fit_bradley_terry(samples, 4).rewards
    assert total_variation(rlhf_closed_form(ref, 1.0, r_hat), rlhf_closed_form(ref, 1.0, r_true)) <= 0.01
