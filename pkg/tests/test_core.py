import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefgame.core import (
    APPENDIX_D_ENTRIES,
    GameSpec,
    InfiniteKLError,
    LabelledPair,
    appendix_d_game,
    canonicalise,
    geometric_mixture,
    kl_divergence,
    labelled_pair_distribution,
    log_softmax,
    make_rng,
    payoff,
    policy_vs_policy,
    preference_vs_policy,
    random_interior_policy,
    random_preferences,
    sample_labelled_pair,
    sample_labelled_pairs,
    sigmoid,
    softmax,
    uniform_policy,
    uniform_preferences,
    validate_preference_matrix,
)

RAW_D = validate_preference_matrix(APPENDIX_D_ENTRIES, strict=False)


def policies(n):
    return st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n).map(
        lambda w: np.asarray(w) / np.sum(w))


# --- validation -------------------------------------------------------------


def test_printed_three_action_matrix_needs_lenient_mode():
    # rows 2 and 3 break p + p^T = 1, so the strict check refuses it
    with pytest.raises(ValueError, match="anti-symmetry"):
        validate_preference_matrix(APPENDIX_D_ENTRIES)
    assert not RAW_D.antisymmetric
    np.testing.assert_array_equal(RAW_D.entries, APPENDIX_D_ENTRIES)


def test_antisymmetrised_matrix_is_valid():
    q = RAW_D.antisymmetrised()
    assert q.antisymmetric
    np.testing.assert_allclose(q.entries + q.entries.T, 1.0, atol=1e-15)
    validate_preference_matrix(q.entries)


def test_uniform_matrix_accepted():
    assert validate_preference_matrix([[0.5, 0.5], [0.5, 0.5]]).n == 2


def test_antisymmetry_violation_rejected():
    with pytest.raises(ValueError, match="anti-symmetry"):
        validate_preference_matrix([[0.5, 0.7], [0.4, 0.5]])


@pytest.mark.parametrize("entries, msg", [
    ([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]], "square"),
    ([[0.5]], "at least 2"),
    ([[0.5, 1.2], [-0.2, 0.5]], r"\[0, 1\]"),
    ([[0.4, 0.5], [0.5, 0.6]], "diagonal"),
])
def test_malformed_matrices_rejected(entries, msg):
    with pytest.raises(ValueError, match=msg):
        validate_preference_matrix(entries)


def test_entries_are_read_only():
    m = uniform_preferences(3)
    with pytest.raises(ValueError):
        m.entries[0, 1] = 0.9


def test_gamespec_rejects_bad_tau_and_length():
    with pytest.raises(ValueError, match="tau"):
        GameSpec(uniform_preferences(2), uniform_policy(2), 0.0)
    with pytest.raises(ValueError, match="length"):
        GameSpec(uniform_preferences(2), uniform_policy(3), 1.0)


# --- mixtures ---------------------------------------------------------------


def test_geometric_mixture_half():
    np.testing.assert_allclose(geometric_mixture([0.8, 0.2], [0.5, 0.5], 0.5), [2 / 3, 1 / 3], atol=1e-15)


@given(policies(4), policies(4))
def test_geometric_mixture_endpoints(pi, ref):
    np.testing.assert_allclose(geometric_mixture(pi, ref, 0.0), pi, atol=1e-12)
    np.testing.assert_allclose(geometric_mixture(pi, ref, 1.0), ref, atol=1e-12)


@given(policies(5), policies(5), st.floats(0.0, 1.0))
def test_geometric_mixture_exchange_symmetry(pi, ref, beta):
    np.testing.assert_allclose(geometric_mixture(pi, ref, beta),
                               geometric_mixture(ref, pi, 1.0 - beta), atol=1e-12)


@given(policies(3), st.floats(0.0, 1.0))
def test_mixture_of_ref_with_itself(ref, beta):
    np.testing.assert_allclose(geometric_mixture(ref, ref, beta), ref, atol=1e-12)


def test_geometric_mixture_errors():
    with pytest.raises(ValueError, match="beta"):
        geometric_mixture([0.5, 0.5], [0.5, 0.5], 1.5)
    with pytest.raises(ValueError, match="zero weight"):
        geometric_mixture([1.0, 0.0], [0.0, 1.0], 0.5)


def test_mixture_survives_extreme_beta_and_peaked_policy():
    pi = softmax(np.array([0.0, -800.0, -1600.0]))
    mixed = geometric_mixture(pi, uniform_policy(3), 1e-9)
    assert np.all(np.isfinite(mixed))
    np.testing.assert_allclose(mixed.sum(), 1.0)


# --- preferences and payoffs ------------------------------------------------


def test_preference_vs_policy_examples():
    assert preference_vs_policy(RAW_D, 2, uniform_policy(3)) == pytest.approx(0.5, abs=1e-15)
    assert preference_vs_policy(uniform_preferences(4), 1, [0.1, 0.2, 0.3, 0.4]) == 0.5
    assert preference_vs_policy(RAW_D, 0, [0.0, 0.0, 1.0]) == 0.1


def test_policy_vs_policy_examples():
    rng = make_rng(1)
    P = random_preferences(4, rng)
    pi = random_interior_policy(4, rng)
    assert policy_vs_policy(P, pi, pi) == pytest.approx(0.5, abs=1e-12)
    assert policy_vs_policy(P, np.eye(4)[1], np.eye(4)[3]) == P.entries[1, 3]
    u = uniform_policy(3)
    assert policy_vs_policy(appendix_d_game().prefs, u, u) == pytest.approx(0.5, abs=1e-15)
    # the raw printed entries average 4.3 / 9, not 1/2, because they are not anti-symmetric
    assert policy_vs_policy(RAW_D, u, u) == pytest.approx(4.3 / 9, abs=1e-15)


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_policy_vs_policy_constant_sum(seed, n):
    rng = make_rng(seed)
    P = random_preferences(n, rng)
    pi, mu = random_interior_policy(n, rng), random_interior_policy(n, rng)
    assert policy_vs_policy(P, pi, mu) + policy_vs_policy(P, mu, pi) == pytest.approx(1.0, abs=1e-12)


def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2))
    with pytest.raises(InfiniteKLError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_kl_nonnegative_and_zero_only_at_ref(seed, n):
    rng = make_rng(seed)
    pi, ref = random_interior_policy(n, rng), random_interior_policy(n, rng)
    assert kl_divergence(pi, ref) > 0
    assert kl_divergence(ref, ref) == 0.0


def test_payoff_examples():
    spec = GameSpec(RAW_D, uniform_policy(3), 0.1)
    point = np.array([1.0, 0.0, 0.0])
    assert payoff(spec, uniform_policy(3), point) == pytest.approx(0.5 + 0.1 * np.log(3), abs=1e-12)
    assert payoff(spec, uniform_policy(3), point) == pytest.approx(0.609861, abs=1e-6)
    game = appendix_d_game()
    pi = np.array([0.2, 0.3, 0.5])
    assert payoff(game, pi, pi) == pytest.approx(0.5, abs=1e-15)
    assert payoff(game, pi, point) + payoff(game, point, pi) == pytest.approx(1.0, abs=1e-12)


# --- softmax ----------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), uniform_policy(3))
    for c in (-50.0, 0.0, 7.0):
        np.testing.assert_allclose(softmax(np.array([c, c + np.log(2)])), [1 / 3, 2 / 3], rtol=1e-14)
    p = softmax(np.array([1000.0, 0.0]))
    assert p[0] == 1.0 and 0.0 <= p[1] < 1e-300
    assert log_softmax(np.array([1000.0, 0.0]))[1] == pytest.approx(-1000.0)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_log_softmax_matches_log_of_softmax(x):
    x = np.asarray(x)
    np.testing.assert_allclose(log_softmax(x), np.log(softmax(x)), atol=1e-14, rtol=0)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        log_softmax(np.array([np.inf, 0.0]))


def test_canonical_gauge_is_mean_zero_and_policy_preserving():
    x = np.array([3.0, -1.0, 10.0])
    assert canonicalise(x).mean() == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(softmax(canonicalise(x)), softmax(x), rtol=1e-14)


@given(st.floats(-700, 700))
def test_sigmoid_sums_to_one(t):
    assert sigmoid(t) + sigmoid(-t) == pytest.approx(1.0, abs=1e-15)


# --- sampling ---------------------------------------------------------------


def test_deterministic_preference_always_orders_pair():
    P = validate_preference_matrix([[0.5, 1.0], [0.0, 0.5]])
    rng = make_rng(0)
    for _ in range(50):
        assert sample_labelled_pair(P, [1.0, 0.0], [0.0, 1.0], rng) == LabelledPair(0, 1)
        assert sample_labelled_pair(P, [0.0, 1.0], [1.0, 0.0], rng) == LabelledPair(0, 1)


def test_uniform_preferences_winner_marginal_is_symmetrised_draw():
    mu, mu2 = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.1, 0.8])
    w, _ = sample_labelled_pairs(uniform_preferences(3), mu, mu2, 200_000, make_rng(4))
    freq = np.bincount(w, minlength=3) / len(w)
    np.testing.assert_allclose(freq, (mu + mu2) / 2, atol=5e-3)


def test_winner_marginal_matches_enumeration_on_printed_matrix():
    N = 10**6
    u = uniform_policy(3)
    w, l = sample_labelled_pairs(RAW_D, u, u, N, make_rng(7))
    exact = labelled_pair_distribution(RAW_D, u, u).sum(axis=1)
    freq = np.bincount(w, minlength=3) / N
    sigma = np.sqrt(exact * (1 - exact) / N)
    assert np.all(np.abs(freq - exact) <= 3 * sigma)
    # first-drawn and wins: row 3 sums to 1.5; second-drawn and wins: 0.9 + 0.2 + 0.5
    assert exact[2] == pytest.approx((1.5 + 1.6) / 9, abs=1e-15)


def test_label_frequency_for_fixed_pair():
    rng = make_rng(3)
    P = random_preferences(3, rng)
    w, _ = sample_labelled_pairs(P, np.eye(3)[0], np.eye(3)[2], 10**5, rng)
    assert abs(np.mean(w == 0) - P.entries[0, 2]) <= 5e-3


def test_self_pairs_are_kept():
    w, l = sample_labelled_pairs(uniform_preferences(2), [1.0, 0.0], [1.0, 0.0], 10, make_rng(0))
    assert np.all(w == 0) and np.all(l == 0)


def test_labelled_distribution_sums_to_one(rng):
    P = random_preferences(5, rng)
    mu, mu2 = random_interior_policy(5, rng), random_interior_policy(5, rng)
    assert labelled_pair_distribution(P, mu, mu2).sum() == pytest.approx(1.0, abs=1e-14)


def test_same_seed_same_draws():
    a = sample_labelled_pairs(RAW_D, uniform_policy(3), uniform_policy(3), 1000, make_rng(99))
    b = sample_labelled_pairs(RAW_D, uniform_policy(3), uniform_policy(3), 1000, make_rng(99))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
