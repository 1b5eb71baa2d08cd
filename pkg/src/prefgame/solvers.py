"""Closed-form best responses and damped fixed-point solvers for the regularised game."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    GameSpec,
    _normalise_log,
    check_policy,
    geometric_mixture,
    kl_divergence,
    payoff,
    preference_vector,
)

log = logging.getLogger(__name__)

MIN_DAMPING = 1.0 / 64


@dataclass(frozen=True)
class FixedPointReport:
    policy: np.ndarray
    residual: float
    iterations: int
    converged: bool


def best_response(spec: GameSpec, mu) -> np.ndarray:
    """argmax_pi E[p(pi > mu)] - tau KL(pi || ref), i.e. ref * exp(p(. > mu) / tau) normalised."""
    mu = check_policy(mu, spec.n)
    if spec.ref.max() <= 0:
        raise ValueError("reference policy is identically zero")
    return _normalise_log(spec.log_ref + preference_vector(spec.prefs, mu) / spec.tau)


def rlhf_closed_form(ref, tau: float, reward) -> np.ndarray:
    """Maximiser of E_pi[r] - tau KL(pi || ref)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    ref = check_policy(ref)
    reward = np.asarray(reward, dtype=float)
    if reward.shape != ref.shape:
        raise ValueError("reward length must match the reference policy")
    with np.errstate(divide="ignore"):
        return _normalise_log(np.log(ref) + reward / tau)


def rlhf_objective(pi, ref, tau: float, reward) -> float:
    return float(np.dot(pi, reward)) - tau * kl_divergence(pi, ref)


def response_map(spec: GameSpec, pi, beta: float = 0.0) -> np.ndarray:
    """pi -> best_response(mixture(pi, ref, beta))."""
    opponent = pi if beta == 0.0 else geometric_mixture(pi, spec.ref, beta)
    return _normalise_log(spec.log_ref + spec.P @ opponent / spec.tau)


def fixed_point_defect(spec: GameSpec, pi, beta: float = 0.0) -> float:
    """Sup-norm of pi - response_map(pi)."""
    pi = np.asarray(pi, dtype=float)
    return float(np.max(np.abs(pi - response_map(spec, pi, beta))))


def _damped_iteration(spec, beta, tol, max_iter, damping, init):
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    pi = np.array(spec.ref if init is None else init, dtype=float)
    prev = np.inf
    for it in range(max_iter + 1):
        target = response_map(spec, pi, beta)
        residual = float(np.max(np.abs(pi - target)))
        if residual <= tol:
            return FixedPointReport(pi, residual, it, True)
        if it == max_iter:
            break
        if residual > prev and damping > MIN_DAMPING:
            damping = max(damping / 2.0, MIN_DAMPING)
            log.debug("residual increased at iteration %d, damping -> %g", it, damping)
        prev = residual
        pi = (1.0 - damping) * pi + damping * target
        pi /= pi.sum()
    log.warning("fixed-point iteration did not converge: residual %.3g after %d iterations",
                residual, max_iter)
    return FixedPointReport(pi, residual, max_iter, False)


def solve_regularised_nash(spec: GameSpec, tol: float = 1e-12, max_iter: int = 10**6,
                           damping: float = 0.5, init=None) -> FixedPointReport:
    """Nash equilibrium of the regularised game: pi = normalise(ref * exp(p(. > pi) / tau))."""
    return _damped_iteration(spec, 0.0, tol, max_iter, damping, init)


def solve_ipo_md_fixed_point(spec: GameSpec, beta: float, tol: float = 1e-12,
                             max_iter: int = 10**6, damping: float = 0.5,
                             init=None) -> FixedPointReport:
    """Fixed point of pi = best_response(mixture(pi, ref, beta)).

    beta == 1 needs no iteration: the opponent is ref itself.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if beta == 1.0:
        pi = best_response(spec, spec.ref)
        return FixedPointReport(pi, fixed_point_defect(spec, pi, 1.0), 1, True)
    return _damped_iteration(spec, beta, tol, max_iter, damping, init)


def modified_tau(tau: float, beta: float) -> float:
    if beta >= 1.0:
        raise ValueError("modified temperature undefined at beta = 1")
    return tau / (1.0 - beta)


def verify_modified_tau(spec: GameSpec, beta: float, pi_star_beta) -> float:
    """Nash defect of mixture(pi*_beta, ref, beta) in the game with temperature tau / (1 - beta)."""
    mixed = geometric_mixture(pi_star_beta, spec.ref, beta)
    return fixed_point_defect(spec.with_tau(modified_tau(spec.tau, beta)), mixed, 0.0)


def exploitability(spec: GameSpec, pi) -> float:
    """payoff(best_response(pi), pi) - payoff(pi, pi); zero exactly at the regularised Nash."""
    pi = check_policy(pi, spec.n)
    return payoff(spec, best_response(spec, pi), pi) - payoff(spec, pi, pi)
