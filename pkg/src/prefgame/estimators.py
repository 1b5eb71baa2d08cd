"""Contrastive vs non-contrastive gradient estimates, their exact variances, and Bradley-Terry fitting.

Both single-pair estimates use the label-free kernel

    f(y, y') = p(y > y') - 1/2 - tau log(pi(y)/ref(y)) + tau log(pi(y')/ref(y'))

with (y, y') drawn i.i.d. from pi. Vector variances are reported as totals
(trace of the covariance) together with the per-coordinate values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import GameSpec, LabelledPair, log_sigmoid, log_softmax, sample_pairs, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateStats:
    mean: np.ndarray
    total_variance: float
    per_coordinate_variance: np.ndarray
    n_outcomes_or_samples: int
    exact: bool


def _pi_and_adv(spec: GameSpec, logits):
    if spec.ref.min() <= 0:
        raise ValueError("zero reference probability: log-ratio undefined")
    logp = log_softmax(logits)
    return np.exp(logp), logp - spec.log_ref


def variance_kernel(spec: GameSpec, logits) -> np.ndarray:
    """n x n array of f(y, y'); anti-symmetric whenever the preferences are."""
    _, adv = _pi_and_adv(spec, logits)
    return spec.P - 0.5 - spec.tau * (adv[:, None] - adv[None, :])


def _scores(pi):
    return np.eye(len(pi)) - pi[None, :]


def _estimate_table(spec: GameSpec, logits, which: str) -> np.ndarray:
    """Estimate for every ordered (y, y'), shape (n, n, n)."""
    pi, _ = _pi_and_adv(spec, logits)
    f = variance_kernel(spec, logits)
    S = _scores(pi)
    if which == "noncontrastive":
        return -S[:, None, :] * f[:, :, None]
    if which == "contrastive":
        return -0.5 * (S[:, None, :] - S[None, :, :]) * f[:, :, None]
    raise ValueError(f"which must be 'contrastive' or 'noncontrastive', got {which!r}")


def noncontrastive_estimate(spec: GameSpec, logits, y: int, y_prime: int) -> np.ndarray:
    pi, _ = _pi_and_adv(spec, logits)
    f = variance_kernel(spec, logits)[y, y_prime]
    return -_scores(pi)[y] * f


def contrastive_estimate(spec: GameSpec, logits, y: int, y_prime: int) -> np.ndarray:
    pi, _ = _pi_and_adv(spec, logits)
    f = variance_kernel(spec, logits)[y, y_prime]
    S = _scores(pi)
    return -0.5 * (S[y] - S[y_prime]) * f


def exact_variance(spec: GameSpec, logits, which: str) -> EstimateStats:
    pi, _ = _pi_and_adv(spec, logits)
    table = _estimate_table(spec, logits, which)
    w = np.outer(pi, pi)
    mean = np.einsum("ab,abk->k", w, table)
    dev = table - mean
    per_coord = np.einsum("ab,abk->k", w, dev**2)
    return EstimateStats(mean, float(per_coord.sum()), per_coord, spec.n**2, True)


def monte_carlo_variance(spec: GameSpec, logits, which: str, samples: int, rng) -> EstimateStats:
    pi, _ = _pi_and_adv(spec, logits)
    table = _estimate_table(spec, logits, which)
    y, y2 = sample_pairs(pi, pi, samples, rng)
    draws = table[y, y2]
    per_coord = draws.var(axis=0, ddof=1)
    return EstimateStats(draws.mean(axis=0), float(per_coord.sum()), per_coord, samples, False)


def variance_condition(spec: GameSpec, logits, per_coordinate: bool = False):
    """E_{y,y'~pi}[<grad log pi(y), grad log pi(y')> f(y, y')^2].

    A nonnegative value is sufficient for the contrastive estimate to have the
    smaller total variance. ``per_coordinate`` returns the vector of the
    coordinate-wise products instead of their sum.
    """
    pi, _ = _pi_and_adv(spec, logits)
    S = _scores(pi)
    f2 = variance_kernel(spec, logits) ** 2
    w = np.outer(pi, pi) * f2
    per_coord = np.einsum("ab,ak,bk->k", w, S, S)
    return per_coord if per_coordinate else float(per_coord.sum())


def covariance_terms(spec: GameSpec, logits) -> dict:
    """Both sides of Cov(X1, X2) = E[-<s(y), s(y')> f^2] - |c|^2 plus the variance split.

    X1 = -s(y) f(y, y') is the non-contrastive estimate, X2 = s(y') f(y, y').
    """
    pi, _ = _pi_and_adv(spec, logits)
    S = _scores(pi)
    f = variance_kernel(spec, logits)
    w = np.outer(pi, pi)
    X1 = -S[:, None, :] * f[:, :, None]
    X2 = S[None, :, :] * f[:, :, None]
    m1 = np.einsum("ab,abk->k", w, X1)
    m2 = np.einsum("ab,abk->k", w, X2)
    cov_direct = float(np.einsum("ab,abk->", w, (X1 - m1) * (X2 - m2)))
    var_x1 = float(np.einsum("ab,abk->", w, (X1 - m1) ** 2))
    c = np.einsum("ab,ak->k", w * f, S)
    cov_identity = -variance_condition(spec, logits) - float(c @ c)
    return {"cov_direct": cov_direct, "cov_identity": cov_identity, "var_x1": var_x1, "c": c}


# --- Bradley-Terry -----------------------------------------------------------


class BradleyTerryError(RuntimeError):
    pass


@dataclass(frozen=True)
class BTFit:
    rewards: np.ndarray
    log_likelihoods: np.ndarray
    iterations: int
    converged: bool


def win_counts(samples, n: int) -> np.ndarray:
    """C[w, l] = number of times w beat l.

    ``samples`` is either a sequence of LabelledPair / (winner, loser) tuples or a
    (winners, losers) pair of integer arrays as returned by ``sample_labelled_pairs``.
    """
    if (isinstance(samples, tuple) and len(samples) == 2
            and all(isinstance(a, np.ndarray) for a in samples)):
        w, l = (np.asarray(a, dtype=int) for a in samples)
    else:
        pairs = [(s.winner, s.loser) if isinstance(s, LabelledPair) else tuple(s) for s in samples]
        w, l = (np.array(col, dtype=int) for col in zip(*pairs)) if pairs else (np.zeros(0, int),) * 2
    if w.size and (min(w.min(), l.min()) < 0 or max(w.max(), l.max()) >= n):
        raise ValueError(f"action index out of range for n = {n}")
    C = np.zeros((n, n))
    np.add.at(C, (w, l), 1.0)
    return C


def bt_log_likelihood(rewards, counts: np.ndarray, regulariser: float = 0.0) -> float:
    r = np.asarray(rewards, dtype=float)
    N = counts.sum()
    ll = np.sum(counts * log_sigmoid(r[:, None] - r[None, :])) / N
    return float(ll - 0.5 * regulariser * r @ r)


def fit_bradley_terry(samples, n: int, regulariser: float = 0.0, tol: float = 1e-10,
                      max_iter: int = 100_000, counts: np.ndarray | None = None) -> BTFit:
    """Maximum-likelihood Bradley-Terry rewards by gradient ascent, gauge-fixed to sum zero.

    The step size is 1/L for an upper bound L on the curvature, which makes the
    log-likelihood non-decreasing. Without a regulariser the MLE exists only
    when the win graph is strongly connected; otherwise BradleyTerryError.
    """
    C = win_counts(samples, n) if counts is None else np.asarray(counts, dtype=float)
    N = C.sum()
    if N <= 0:
        raise ValueError("need at least one sample")
    off = C.copy()
    np.fill_diagonal(off, 0.0)
    if regulariser == 0.0:
        n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
        if n_comp > 1:
            raise BradleyTerryError("separable comparisons: the unregularised MLE diverges")
    T = (off + off.T) / N
    laplacian = np.diag(T.sum(axis=1)) - T
    lipschitz = 0.25 * np.linalg.eigvalsh(laplacian).max() + regulariser
    step = 1.0 / max(lipschitz, 1e-12)

    r = np.zeros(n)
    history = [bt_log_likelihood(r, C, regulariser)]
    for it in range(1, max_iter + 1):
        D = r[:, None] - r[None, :]
        M = C * sigmoid(-D) / N
        grad = M.sum(axis=1) - M.sum(axis=0) - regulariser * r
        r = r + step * grad
        r -= r.mean()
        history.append(bt_log_likelihood(r, C, regulariser))
        if np.max(np.abs(grad)) < tol:
            return BTFit(r, np.array(history), it, True)
    raise BradleyTerryError(f"no convergence within {max_iter} iterations "
                            f"(gradient {np.max(np.abs(grad)):.3g})")
