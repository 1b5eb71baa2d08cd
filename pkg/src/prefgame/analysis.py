"""Stationarity checks for online DPO against the regularised Nash equilibrium."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GameSpec,
    PreferenceMatrix,
    bradley_terry_preferences,
    check_policy,
    log_sigmoid,
    preference_vector,
    sigmoid,
    validate_preference_matrix,
)
from .losses import (
    LossId,
    Fixed,
    dpo_objective_logit_gradient,
    population_gradient,
)
from .solvers import rlhf_closed_form


@dataclass(frozen=True)
class StationarityReport:
    residuals: np.ndarray
    max_abs: float
    weighted_sum: float  # sum_y pi(y) residual(y); zero by symmetry, kept as a diagnostic


def online_dpo_stationarity_residual(prefs: PreferenceMatrix, pi) -> StationarityReport:
    """residual(y) = p(y > pi) - sum_y' pi(y') sigma(p(y > pi) - p(y' > pi)).

    All zero iff pi (taken to be the regularised Nash) is also stationary for online DPO.
    """
    pi = check_policy(pi, prefs.n, interior=True)
    a = preference_vector(prefs, pi)
    res = a - sigmoid(a[:, None] - a[None, :]) @ pi
    return StationarityReport(res, float(np.max(np.abs(res))), float(pi @ res))


def two_action_factor(p: float) -> float:
    """1 - p - sigma(1/2 - p): positive, zero, negative for p below, at, above 1/2."""
    return 1.0 - p - sigmoid(0.5 - p)


def two_action_residuals(p: float, alpha: float) -> tuple[float, float]:
    """Closed-form residuals for the 2-action game with P = [[1/2, 1-p], [p, 1/2]], pi = (alpha, 1-alpha)."""
    if not (0.0 <= p <= 1.0 and 0.0 <= alpha <= 1.0):
        raise ValueError("p and alpha must lie in [0, 1]")
    k = two_action_factor(p)
    return (1.0 - alpha) * k, -alpha * k


def two_action_matrix(p: float) -> PreferenceMatrix:
    """Two-action matrix with p(action 2 > action 1) = p."""
    return validate_preference_matrix([[0.5, 1.0 - p], [p, 0.5]])


def bt_stationarity_check(ref, tau: float, reward, mu) -> float:
    """Norm of the DPO objective gradient at pi^r ~ ref exp(r / tau) for BT preferences.

    The gradient is taken in logit space under sampling distribution mu; it
    vanishes for every mu, including mu = pi^r.
    """
    ref = check_policy(ref, interior=True)
    reward = np.asarray(reward, dtype=float)
    spec = GameSpec(bradley_terry_preferences(reward), ref, tau)
    pi_r = rlhf_closed_form(ref, tau, reward)
    mu = check_policy(mu, spec.n)
    return float(np.linalg.norm(dpo_objective_logit_gradient(spec, pi_r, mu)))


def rescale_off_support(pi_dpo, mu, alpha: float, off_support_mass=None) -> np.ndarray:
    """pi_alpha: alpha * pi_dpo on support(mu), given mass elsewhere, renormalised."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    pi_dpo = np.asarray(pi_dpo, dtype=float)
    mu = np.asarray(mu, dtype=float)
    off = mu <= 0
    if not off.any():
        raise ValueError("mu must have at least one zero entry")
    out = pi_dpo.copy()
    out[~off] *= alpha
    if off_support_mass is not None:
        out[off] = np.asarray(off_support_mass, dtype=float)
    return out / out.sum()


def dpo_degeneracy_demo(spec: GameSpec, mu, pi_dpo, alpha: float, off_support_mass=None,
                        compare_ipo: bool = False):
    """DPO gradient norm after rescaling a DPO solution off the support of mu.

    With ``compare_ipo`` also returns the IPO population-gradient norm at the same
    point, which in general does not vanish.
    """
    pi_alpha = rescale_off_support(pi_dpo, mu, alpha, off_support_mass)
    dpo_norm = float(np.linalg.norm(dpo_objective_logit_gradient(spec, pi_alpha, mu)))
    if not compare_ipo:
        return dpo_norm
    logits = np.log(pi_alpha)
    ipo_norm = float(np.linalg.norm(population_gradient(LossId.IPO, logits, spec, Fixed(mu))))
    return dpo_norm, ipo_norm


def dpo_solution_on_support(spec: GameSpec) -> np.ndarray:
    """A zero-gradient DPO point under every mu for Bradley-Terry preferences: pi^r, r = log-odds.

    Uses the BT reward r(y) = logit p(y > y0) relative to an anchor action; raises
    when the preferences are not Bradley-Terry.
    """
    P = spec.P
    r = np.log(P[:, 0]) - np.log(P[0, :]) if np.all((P > 0) & (P < 1)) else None
    if r is None or not np.allclose(sigmoid(r[:, None] - r[None, :]), P, atol=1e-10):
        raise ValueError("preferences are not Bradley-Terry")
    return rlhf_closed_form(spec.ref, spec.tau, r)


def log_sigmoid_derivative_check(ts, step: float = 1e-6) -> float:
    """Max relative error between d/dt log sigma(t) by central differences and sigma(-t)."""
    ts = np.asarray(ts, dtype=float)
    fd = (log_sigmoid(ts + step) - log_sigmoid(ts - step)) / (2 * step)
    exact = sigmoid(-ts)
    return float(np.max(np.abs(fd - exact) / np.abs(exact)))

