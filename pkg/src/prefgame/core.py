"""Finite-action preference games, simplex policies and the labelled-pair data model.

Policies and logits are plain 1-d float arrays. Preference matrices and games
are small frozen containers whose arrays are made read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ANTISYMMETRY_TOL = 1e-12
SUM_TOL = 1e-12

# As printed in the tabular example. Not anti-symmetric: entries (0, 1)/(1, 0)
# and (1, 2)/(2, 1) sum to 0.9.
APPENDIX_D_ENTRIES = (
    (0.5, 0.8, 0.1),
    (0.1, 0.5, 0.8),
    (0.9, 0.1, 0.5),
)


class InfiniteKLError(ValueError):
    """pi puts mass where the reference policy has none."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PreferenceMatrix:
    """entries[y, y'] = p(y > y')."""

    entries: np.ndarray
    antisymmetric: bool = True

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def antisymmetrised(self) -> "PreferenceMatrix":
        """The matrix the labelling process realises under exchangeable sampling.

        Drawing (Y, Y') i.i.d. and labelling with the raw entries gives the ordered
        outcome (y, y') with probability mu(y) mu(y') (P[y, y'] + 1 - P[y', y]),
        i.e. the anti-symmetric matrix (P + 1 - P^T) / 2.
        """
        q = 0.5 * (self.entries + 1.0 - self.entries.T)
        np.fill_diagonal(q, 0.5)
        return PreferenceMatrix(_readonly(q), True)

    def __repr__(self) -> str:
        return f"PreferenceMatrix(n={self.n}, antisymmetric={self.antisymmetric})"


def validate_preference_matrix(entries, *, strict: bool = True) -> PreferenceMatrix:
    """Check and wrap an n x n preference array.

    With ``strict=False`` the anti-symmetry check is skipped, which is needed for
    raw matrices such as the printed tabular example; the returned matrix then
    carries ``antisymmetric=False``.
    """
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"preference matrix must be square, got shape {a.shape}")
    if a.shape[0] < 2:
        raise ValueError("preference matrix needs at least 2 actions")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("preference entries must lie in [0, 1]")
    if np.max(np.abs(np.diag(a) - 0.5)) > ANTISYMMETRY_TOL:
        raise ValueError("diagonal entries must equal 1/2")
    defect = float(np.max(np.abs(a + a.T - 1.0)))
    antisymmetric = defect <= ANTISYMMETRY_TOL
    if strict and not antisymmetric:
        i, j = np.unravel_index(np.argmax(np.abs(a + a.T - 1.0)), a.shape)
        raise ValueError(
            f"anti-symmetry violated: p({i}>{j}) + p({j}>{i}) = {a[i, j] + a[j, i]:.12g}"
        )
    a = a.copy()
    np.fill_diagonal(a, 0.5)
    return PreferenceMatrix(_readonly(a), antisymmetric)


def check_policy(probs, n: int | None = None, *, interior: bool = False) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("policy must be a 1-d vector")
    if n is not None and p.shape[0] != n:
        raise ValueError(f"policy has length {p.shape[0]}, expected {n}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0:
        raise ValueError("policy entries must be finite and nonnegative")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"policy sums to {p.sum():.17g}, not 1")
    if interior and p.min() <= 0.0:
        raise ValueError("policy must lie in the interior of the simplex")
    return p


def uniform_policy(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Regularised two-player preference game: preferences, reference policy, tau."""

    prefs: PreferenceMatrix
    ref: np.ndarray
    tau: float

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        ref = check_policy(self.ref, self.prefs.n)
        object.__setattr__(self, "ref", _readonly(ref))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self) -> int:
        return self.prefs.n

    @property
    def P(self) -> np.ndarray:
        return self.prefs.entries

    @property
    def log_ref(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.ref)

    def with_tau(self, tau: float) -> "GameSpec":
        return GameSpec(self.prefs, self.ref, tau)


class LabelledPair(NamedTuple):
    winner: int
    loser: int


# --- numerics ---------------------------------------------------------------


def sigmoid(t):
    """Logistic function, branch-split so sigmoid(t) + sigmoid(-t) == 1 holds at extremes."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def log_sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.minimum(t, 0.0) - np.log1p(np.exp(-np.abs(t)))
    return out if out.ndim else float(out)


def log_softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    z = x - x.max()
    return z - np.log(np.sum(np.exp(z)))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def canonicalise(logits) -> np.ndarray:
    """Mean-zero gauge for softmax logits."""
    x = np.asarray(logits, dtype=float)
    return x - x.mean()


def logits_from_policy(pi) -> np.ndarray:
    pi = check_policy(pi, interior=True)
    return canonicalise(np.log(pi))


def _normalise_log(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw)
    if not np.isfinite(m):
        raise ValueError("cannot normalise: every action has zero weight")
    w = np.exp(logw - m)
    return w / w.sum()


# --- policies and payoffs ---------------------------------------------------


def geometric_mixture(pi, ref, beta: float) -> np.ndarray:
    """Normalised pi^(1-beta) * ref^beta, computed in log space."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    pi = np.asarray(pi, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if beta == 0.0:
        return _normalise_log(_safe_log(pi))
    if beta == 1.0:
        return _normalise_log(_safe_log(ref))
    return _normalise_log((1.0 - beta) * _safe_log(pi) + beta * _safe_log(ref))


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def preference_vector(prefs: PreferenceMatrix, mu) -> np.ndarray:
    """Vector of p(y > mu) over all y."""
    return prefs.entries @ np.asarray(mu, dtype=float)


def preference_vs_policy(prefs: PreferenceMatrix, y: int, mu) -> float:
    mu = check_policy(mu, prefs.n)
    return float(prefs.entries[y] @ mu)


def policy_vs_policy(prefs: PreferenceMatrix, pi, mu) -> float:
    pi = check_policy(pi, prefs.n)
    mu = check_policy(mu, prefs.n)
    return float(pi @ prefs.entries @ mu)


def kl_divergence(pi, ref) -> float:
    pi = np.asarray(pi, dtype=float)
    ref = np.asarray(ref, dtype=float)
    support = pi > 0
    if np.any(ref[support] <= 0):
        raise InfiniteKLError("pi is not absolutely continuous w.r.t. ref")
    return float(np.sum(pi[support] * (np.log(pi[support]) - np.log(ref[support]))))


def payoff(spec: GameSpec, pi1, pi2) -> float:
    """Payoff to the player using pi1 against pi2 in the regularised game."""
    return (
        policy_vs_policy(spec.prefs, pi1, pi2)
        - spec.tau * kl_divergence(pi1, spec.ref)
        + spec.tau * kl_divergence(pi2, spec.ref)
    )


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


# --- data model -------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; use ``rng.spawn`` for independent streams."""
    return np.random.Generator(np.random.Philox(seed))


def sample_labelled_pair(prefs: PreferenceMatrix, mu, mu_prime, rng) -> LabelledPair:
    w, l = sample_labelled_pairs(prefs, mu, mu_prime, 1, rng)
    return LabelledPair(int(w[0]), int(l[0]))


def sample_labelled_pairs(prefs: PreferenceMatrix, mu, mu_prime, size: int, rng):
    """Draw Y ~ mu, Y' ~ mu_prime and order each pair by a p(Y > Y') coin.

    Returns (winners, losers) integer arrays.
    """
    y, y2 = sample_pairs(mu, mu_prime, size, rng)
    first_wins = rng.random(size) < prefs.entries[y, y2]
    return np.where(first_wins, y, y2), np.where(first_wins, y2, y)


def sample_pairs(mu, mu_prime, size: int, rng):
    n = len(mu)
    y = rng.choice(n, size=size, p=np.asarray(mu, dtype=float))
    y2 = rng.choice(n, size=size, p=np.asarray(mu_prime, dtype=float))
    return y, y2


def labelled_pair_distribution(prefs: PreferenceMatrix, mu, mu_prime) -> np.ndarray:
    """Exact probability of each ordered (winner, loser) outcome of the labelling process."""
    mu = np.asarray(mu, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    P = prefs.entries
    draw = np.outer(mu, mu_prime)
    # draw (a, b) -> (a, b) w.p. P[a, b]; -> (b, a) w.p. 1 - P[a, b]
    out = draw * P + (draw * (1.0 - P)).T
    return out


# --- game generators --------------------------------------------------------


def appendix_d_game(tau: float = 0.1) -> GameSpec:
    """The printed 3-action cyclic example, as realised by the labelling process."""
    raw = validate_preference_matrix(APPENDIX_D_ENTRIES, strict=False)
    return GameSpec(raw.antisymmetrised(), uniform_policy(3), tau)


def uniform_preferences(n: int) -> PreferenceMatrix:
    return validate_preference_matrix(np.full((n, n), 0.5))


def rock_paper_scissors() -> PreferenceMatrix:
    return validate_preference_matrix([[0.5, 1.0, 0.0], [0.0, 0.5, 1.0], [1.0, 0.0, 0.5]])


def bradley_terry_preferences(rewards) -> PreferenceMatrix:
    r = np.asarray(rewards, dtype=float)
    return validate_preference_matrix(sigmoid(r[:, None] - r[None, :]))


def two_action_preferences(p: float) -> PreferenceMatrix:
    """Two actions with p(0 > 1) = p."""
    return validate_preference_matrix([[0.5, p], [1.0 - p, 0.5]])


def random_preferences(n: int, rng) -> PreferenceMatrix:
    upper = rng.random((n, n))
    a = np.triu(upper, 1)
    a = a + np.tril(1.0 - a.T, -1)
    np.fill_diagonal(a, 0.5)
    return validate_preference_matrix(a)


def random_interior_policy(n: int, rng, concentration: float = 1.0) -> np.ndarray:
    p = rng.dirichlet(np.full(n, concentration))
    # keep clear of the boundary so log-probabilities stay well conditioned
    p = 0.9 * p + 0.1 / n
    return p / p.sum()


def random_game(n: int, rng, tau: float | None = None, tau_range=(0.1, 2.0),
                uniform_ref: bool = False) -> GameSpec:
    prefs = random_preferences(n, rng)
    ref = uniform_policy(n) if uniform_ref else random_interior_policy(n, rng)
    if tau is None:
        lo, hi = tau_range
        tau = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return GameSpec(prefs, ref, tau)
