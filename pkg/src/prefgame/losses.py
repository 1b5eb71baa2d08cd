"""Pairwise contrastive losses (IPO, DPO, SLiC), their population forms and exact gradients.

Every loss is a function of the reference-normalised log-ratio margin

    h(y+, y-) = log pi(y+) - log ref(y+) - log pi(y-) + log ref(y-)

and under the softmax parametrisation dh/dphi = e_{y+} - e_{y-}, so the
population gradient is a weighted sum of those difference vectors. The
pair-generating distribution is always treated as a constant (stop-gradient).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .core import (
    GameSpec,
    LabelledPair,
    check_policy,
    geometric_mixture,
    labelled_pair_distribution,
    log_sigmoid,
    log_softmax,
    sigmoid,
)


class LossId(enum.Enum):
    IPO = "ipo"
    IPO_SIMPLIFIED = "ipo_simplified"
    DPO = "dpo"
    SLIC = "slic"
    # sigma(tau * h) taken literally from the implementation table; bounded and
    # minimised by h -> -inf, kept only for side-by-side comparison with DPO.
    DPO_SIGMOID = "dpo_sigmoid"


@dataclass(frozen=True)
class Fixed:
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", check_policy(self.mu))


@dataclass(frozen=True)
class CurrentPolicy:
    pass


@dataclass(frozen=True)
class GeometricMixture:
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


SamplingScheme = Union[Fixed, CurrentPolicy, GeometricMixture]


def sampling_distribution(sampling: SamplingScheme, pi, ref) -> np.ndarray:
    """Resolve a sampling scheme to the (frozen) distribution generating both Y and Y'."""
    if isinstance(sampling, Fixed):
        return sampling.mu
    if isinstance(sampling, CurrentPolicy):
        return np.asarray(pi, dtype=float)
    if isinstance(sampling, GeometricMixture):
        return geometric_mixture(pi, ref, sampling.beta)
    raise TypeError(f"unknown sampling scheme {sampling!r}")


def _require_interior_ref(ref) -> np.ndarray:
    ref = np.asarray(ref, dtype=float)
    if ref.min() <= 0:
        raise ValueError("losses need a reference policy with full support")
    return np.log(ref)


def _margin_loss(loss: LossId, h, tau: float):
    """Loss value as a function of the margin h (IPO_SIMPLIFIED handled by callers)."""
    if loss is LossId.IPO:
        return (h - 0.5 / tau) ** 2
    if loss is LossId.DPO:
        return -log_sigmoid(tau * h)
    if loss is LossId.SLIC:
        return np.maximum(0.0, 1.0 - tau * h)
    if loss is LossId.DPO_SIGMOID:
        return sigmoid(tau * h)
    raise ValueError(f"no margin form for {loss}")


def _margin_slope(loss: LossId, h, tau: float):
    """d loss / d h. The SLiC kink (1 - tau h == 0) takes the flat branch."""
    h = np.asarray(h, dtype=float)
    if loss is LossId.IPO:
        return 2.0 * (h - 0.5 / tau)
    if loss is LossId.IPO_SIMPLIFIED:
        return 2.0 * tau * h - 1.0
    if loss is LossId.DPO:
        return -tau * sigmoid(-tau * h)
    if loss is LossId.SLIC:
        return np.where(1.0 - tau * h > 0.0, -tau, 0.0)
    if loss is LossId.DPO_SIGMOID:
        s = sigmoid(tau * h)
        return tau * s * (1.0 - s)
    raise ValueError(f"unknown loss {loss}")


def _margin_matrix(logits, log_ref):
    adv = log_softmax(logits) - log_ref
    return adv[:, None] - adv[None, :]


def _loss_matrix(loss: LossId, logits, log_ref, tau: float) -> np.ndarray:
    """Loss for every ordered (winner, loser) pair."""
    H = _margin_matrix(logits, log_ref)
    if loss is LossId.IPO_SIMPLIFIED:
        logp = log_softmax(logits)
        return -(logp[:, None] - logp[None, :]) + tau * H**2
    return _margin_loss(loss, H, tau)


def pair_loss(loss: LossId, logits, ref, tau: float, pair: LabelledPair) -> float:
    log_ref = _require_interior_ref(ref)
    w, l = pair
    return float(_loss_matrix(loss, logits, log_ref, tau)[w, l])


def pair_loss_gradient(loss: LossId, logits, ref, tau: float, pair: LabelledPair) -> np.ndarray:
    log_ref = _require_interior_ref(ref)
    w, l = pair
    H = _margin_matrix(logits, log_ref)
    g = np.zeros(len(logits))
    slope = float(_margin_slope(loss, H[w, l], tau))
    g[w] += slope
    g[l] -= slope
    return g


def pair_loss_gradients(loss: LossId, logits, log_ref, tau: float, winners, losers) -> np.ndarray:
    """Vectorised per-pair gradients, shape (len(winners), n)."""
    H = _margin_matrix(logits, log_ref)
    slope = _margin_slope(loss, H[winners, losers], tau)
    n = len(logits)
    out = np.zeros((len(winners), n))
    rows = np.arange(len(winners))
    np.add.at(out, (rows, winners), slope)
    np.add.at(out, (rows, losers), -slope)
    return out


def expected_label_pair_loss(loss: LossId, logits, ref, tau: float, y: int, y_prime: int,
                             p_value: float) -> float:
    if not 0.0 <= p_value <= 1.0:
        raise ValueError("p_value must lie in [0, 1]")
    return (p_value * pair_loss(loss, logits, ref, tau, LabelledPair(y, y_prime))
            + (1.0 - p_value) * pair_loss(loss, logits, ref, tau, LabelledPair(y_prime, y)))


def _pair_weights(spec: GameSpec, mu) -> np.ndarray:
    return labelled_pair_distribution(spec.prefs, mu, mu)


def population_loss(loss: LossId, logits, spec: GameSpec, sampling: SamplingScheme) -> float:
    """Exact expected loss over all ordered draws and both labels."""
    log_ref = _require_interior_ref(spec.ref)
    pi = np.exp(log_softmax(logits))
    W = _pair_weights(spec, sampling_distribution(sampling, pi, spec.ref))
    L = _loss_matrix(loss, logits, log_ref, spec.tau)
    mask = W > 0
    return float(np.sum(W[mask] * L[mask]))


def population_gradient(loss: LossId, logits, spec: GameSpec, sampling: SamplingScheme) -> np.ndarray:
    """Gradient of ``population_loss`` in logit space with the sampling distribution frozen."""
    log_ref = _require_interior_ref(spec.ref)
    logits = np.asarray(logits, dtype=float)
    pi = np.exp(log_softmax(logits))
    mu = sampling_distribution(sampling, pi, spec.ref)
    if loss is LossId.DPO and spec.prefs.antisymmetric:
        return -dpo_objective_logit_gradient(spec, pi, mu)
    W = _pair_weights(spec, mu)
    M = W * _margin_slope(loss, _margin_matrix(logits, log_ref), spec.tau)
    return M.sum(axis=1) - M.sum(axis=0)


def dpo_objective_prob_gradient(spec: GameSpec, pi, mu) -> np.ndarray:
    """Gradient of the DPO objective J (to be maximised) w.r.t. the probabilities pi(y).

    2 tau mu(y) / pi(y) * sum_y' mu(y') (p(y > y') - sigma(s(y, y'))), with
    s(y, y') = tau log[pi(y) ref(y') / (pi(y') ref(y))]. Valid for pi with full
    support; J depends on pi only through ratios.
    """
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    log_ref = _require_interior_ref(spec.ref)
    if pi.min() <= 0:
        raise ValueError("pi must have full support")
    adv = np.log(pi) - log_ref
    S = spec.tau * (adv[:, None] - adv[None, :])
    inner = (spec.P - sigmoid(S)) @ mu
    return 2.0 * spec.tau * mu / pi * inner


def dpo_objective_logit_gradient(spec: GameSpec, pi, mu) -> np.ndarray:
    """The probability-space DPO gradient pulled back through the softmax Jacobian."""
    pi = np.asarray(pi, dtype=float)
    G = dpo_objective_prob_gradient(spec, pi, mu)
    pg = pi * G
    return pg - pi * pg.sum()


def finite_difference_gradient(f: Callable[[np.ndarray], float], logits, step: float = 1e-5) -> np.ndarray:
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(logits, dtype=float)
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {k}")
        g[k] = (fp - fm) / (2.0 * step)
    return g
