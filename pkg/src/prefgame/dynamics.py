"""Expected and sampled update directions for every algorithm, and the trajectory runner.

Directions returned by ``expected_update`` and ``stochastic_update`` are always
improvement directions in logit space: the runner adds ``lr * direction``.
For the loss-based algorithms that is the negative population-loss gradient,
for the game-based ones the ascent direction of the regularised payoff.
``algorithm_gradient`` gives the opposite sign (the descent-gradient convention).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GameSpec,
    canonicalise,
    geometric_mixture,
    kl_divergence,
    log_softmax,
    sample_pairs,
    total_variation,
)
from .losses import (
    CurrentPolicy,
    Fixed,
    GeometricMixture,
    LossId,
    _margin_slope,
    pair_loss_gradients,
    population_gradient,
    population_loss,
)
from .solvers import (
    best_response,
    rlhf_closed_form,
    rlhf_objective,
    solve_ipo_md_fixed_point,
)

log = logging.getLogger(__name__)


class AlgorithmKind(enum.Enum):
    ONLINE_IPO = "online_ipo"
    IPO_MD = "ipo_md"
    OFFLINE_IPO = "offline_ipo"
    NASH_MD_PG = "nash_md_pg"
    SELF_PLAY = "self_play"
    ONLINE_DPO = "online_dpo"
    ONLINE_SLIC = "online_slic"
    RLHF_PG = "rlhf_pg"


_LOSS_BASED = {
    AlgorithmKind.ONLINE_IPO: LossId.IPO,
    AlgorithmKind.IPO_MD: LossId.IPO,
    AlgorithmKind.OFFLINE_IPO: LossId.IPO,
    AlgorithmKind.ONLINE_DPO: LossId.DPO,
    AlgorithmKind.ONLINE_SLIC: LossId.SLIC,
}


@dataclass(frozen=True, eq=False)
class Algorithm:
    kind: AlgorithmKind
    beta: float | None = None
    mu: np.ndarray | None = None
    reward: np.ndarray | None = None

    def __post_init__(self):
        if self.kind in (AlgorithmKind.IPO_MD, AlgorithmKind.NASH_MD_PG):
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValueError(f"{self.kind.value} needs beta in [0, 1], got {self.beta}")
        elif self.beta is not None:
            raise ValueError(f"beta is only meaningful for mirror-descent algorithms, not {self.kind.value}")
        if self.kind is AlgorithmKind.OFFLINE_IPO and self.mu is None:
            raise ValueError("offline_ipo needs a fixed sampling policy mu")
        if self.kind is AlgorithmKind.RLHF_PG and self.reward is None:
            raise ValueError("rlhf_pg needs a reward vector")

    # constructors mirroring the algorithm names
    @classmethod
    def online_ipo(cls):
        return cls(AlgorithmKind.ONLINE_IPO)

    @classmethod
    def ipo_md(cls, beta: float):
        return cls(AlgorithmKind.IPO_MD, beta=float(beta))

    @classmethod
    def offline_ipo(cls, mu):
        return cls(AlgorithmKind.OFFLINE_IPO, mu=np.asarray(mu, dtype=float))

    @classmethod
    def nash_md_pg(cls, beta: float):
        return cls(AlgorithmKind.NASH_MD_PG, beta=float(beta))

    @classmethod
    def self_play(cls):
        return cls(AlgorithmKind.SELF_PLAY)

    @classmethod
    def online_dpo(cls):
        return cls(AlgorithmKind.ONLINE_DPO)

    @classmethod
    def online_slic(cls):
        return cls(AlgorithmKind.ONLINE_SLIC)

    @classmethod
    def rlhf_pg(cls, reward):
        return cls(AlgorithmKind.RLHF_PG, reward=np.asarray(reward, dtype=float))

    @property
    def loss(self) -> LossId | None:
        return _LOSS_BASED.get(self.kind)

    @property
    def mixture_beta(self) -> float:
        """beta of the geometric mixture the opponent / data is drawn from."""
        if self.kind in (AlgorithmKind.IPO_MD, AlgorithmKind.NASH_MD_PG):
            return self.beta
        return 0.0

    def sampling(self):
        """Stop-gradient pair distribution for the loss-based algorithms."""
        if self.kind is AlgorithmKind.OFFLINE_IPO:
            return Fixed(self.mu)
        if self.kind is AlgorithmKind.IPO_MD:
            return GeometricMixture(self.beta)
        return CurrentPolicy()

    def __str__(self):
        return self.kind.value if self.beta is None else f"{self.kind.value}(beta={self.beta:g})"


def score_matrix(pi) -> np.ndarray:
    """Row y is grad_phi log pi(y) = e_y - pi under the softmax parametrisation."""
    pi = np.asarray(pi, dtype=float)
    return np.eye(len(pi)) - pi[None, :]


def _policy_and_advantage(spec: GameSpec, logits):
    logp = log_softmax(logits)
    if spec.ref.min() <= 0:
        raise ValueError("zero reference probability: log-ratio undefined")
    return np.exp(logp), logp - spec.log_ref


def gradient_kernel_matrix(spec: GameSpec, logits, beta: float, centred: bool = False) -> np.ndarray:
    """All g(y) stacked as rows.

    g(y) = grad log pi(y) * (p(y > pi') - tau log(pi(y) / ref(y))), pi' the
    beta-mixture of pi and ref. ``centred`` subtracts 1/2 from the preference
    term as in the sampled Nash-MD-PG gradient; the two variants differ by
    (e_y - pi) / 2, whose expectation under pi vanishes.
    """
    pi, adv = _policy_and_advantage(spec, logits)
    mixed = geometric_mixture(pi, spec.ref, beta)
    weight = spec.P @ mixed - spec.tau * adv
    if centred:
        weight = weight - 0.5
    return score_matrix(pi) * weight[:, None]


def gradient_kernel_g(spec: GameSpec, logits, beta: float, y: int, centred: bool = False) -> np.ndarray:
    return gradient_kernel_matrix(spec, logits, beta, centred)[y]


def _payoff_ascent(spec: GameSpec, logits, beta: float) -> np.ndarray:
    """grad_phi of E_{y~pi}[p(y > SG[pi'])] - tau KL(pi || ref), by the softmax Jacobian."""
    pi, adv = _policy_and_advantage(spec, logits)
    mixed = geometric_mixture(pi, spec.ref, beta)
    v = spec.P @ mixed - spec.tau * adv
    return pi * v - pi * np.dot(pi, v)


def _rlhf_ascent(spec: GameSpec, logits, reward) -> np.ndarray:
    """E_{y~pi}[grad log pi(y) (r(y) - tau log(pi(y) / ref(y)))]."""
    pi, adv = _policy_and_advantage(spec, logits)
    v = np.asarray(reward, dtype=float) - spec.tau * adv
    return pi * v - pi * np.dot(pi, v)


def expected_update(algorithm: Algorithm, spec: GameSpec, logits) -> np.ndarray:
    """Exact expected improvement direction (enumeration over all pairs)."""
    logits = np.asarray(logits, dtype=float)
    if algorithm.loss is not None:
        return -population_gradient(algorithm.loss, logits, spec, algorithm.sampling())
    if algorithm.kind is AlgorithmKind.RLHF_PG:
        return _rlhf_ascent(spec, logits, algorithm.reward)
    return _payoff_ascent(spec, logits, algorithm.mixture_beta)


def algorithm_gradient(algorithm: Algorithm, spec: GameSpec, logits) -> np.ndarray:
    """Descent-convention gradient, the negative of ``expected_update``."""
    return -expected_update(algorithm, spec, logits)


def stochastic_update_samples(algorithm: Algorithm, spec: GameSpec, logits, batch_size: int,
                              rng, expected_label: bool = False) -> np.ndarray:
    """Per-sample update directions, shape (batch_size, n); their mean is the update.

    Loss-based algorithms draw (Y, Y') from their sampling distribution and either
    label the pair with a p(Y > Y') coin or, with ``expected_label``, weight both
    orderings by p and 1 - p. Nash-MD-PG draws y ~ pi, y' ~ pi' and uses the
    centred preference p(y > y') - 1/2. RLHF draws y ~ pi.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    logits = np.asarray(logits, dtype=float)
    pi, adv = _policy_and_advantage(spec, logits)
    n = spec.n
    if algorithm.loss is not None:
        mu = algorithm.sampling()
        mu = mu.mu if isinstance(mu, Fixed) else geometric_mixture(pi, spec.ref, algorithm.mixture_beta)
        y, y2 = sample_pairs(mu, mu, batch_size, rng)
        p = spec.P[y, y2]
        log_ref = spec.log_ref
        if expected_label:
            fwd = pair_loss_gradients(algorithm.loss, logits, log_ref, spec.tau, y, y2)
            bwd = pair_loss_gradients(algorithm.loss, logits, log_ref, spec.tau, y2, y)
            grads = p[:, None] * fwd + (1.0 - p)[:, None] * bwd
        else:
            first_wins = rng.random(batch_size) < p
            w = np.where(first_wins, y, y2)
            l = np.where(first_wins, y2, y)
            grads = pair_loss_gradients(algorithm.loss, logits, log_ref, spec.tau, w, l)
        return -grads
    if algorithm.kind is AlgorithmKind.RLHF_PG:
        y = rng.choice(n, size=batch_size, p=pi)
        weight = algorithm.reward[y] - spec.tau * adv[y]
        return score_matrix(pi)[y] * weight[:, None]
    mixed = geometric_mixture(pi, spec.ref, algorithm.mixture_beta)
    y, y2 = sample_pairs(pi, mixed, batch_size, rng)
    weight = spec.P[y, y2] - 0.5 - spec.tau * adv[y]
    return score_matrix(pi)[y] * weight[:, None]


def stochastic_update(algorithm: Algorithm, spec: GameSpec, logits, batch_size: int, rng,
                      expected_label: bool = False) -> np.ndarray:
    return stochastic_update_samples(algorithm, spec, logits, batch_size, rng, expected_label).mean(axis=0)


def direction_fn(algorithm: Algorithm, spec: GameSpec):
    """A validation-free closure logits -> expected_update, for the runner's inner loop."""
    P = np.array(spec.P)
    log_ref = np.array(spec.log_ref)
    tau = spec.tau
    beta = algorithm.mixture_beta
    if not np.all(np.isfinite(log_ref)):
        raise ValueError("zero reference probability: log-ratio undefined")

    def policy(phi):
        z = phi - phi.max()
        logp = z - np.log(np.exp(z).sum())
        return logp, np.exp(logp)

    def mixture(logp, pi):
        if beta == 0.0:
            return pi
        lw = (1.0 - beta) * logp + beta * log_ref
        w = np.exp(lw - lw.max())
        return w / w.sum()

    if algorithm.loss is not None:
        loss = algorithm.loss
        fixed_mu = algorithm.mu if algorithm.kind is AlgorithmKind.OFFLINE_IPO else None

        def f(phi):
            logp, pi = policy(phi)
            mu = fixed_mu if fixed_mu is not None else mixture(logp, pi)
            draw = np.outer(mu, mu)
            W = draw * P + (draw * (1.0 - P)).T
            adv = logp - log_ref
            M = W * _margin_slope(loss, adv[:, None] - adv[None, :], tau)
            return M.sum(axis=0) - M.sum(axis=1)

        return f

    reward = algorithm.reward

    def g(phi):
        logp, pi = policy(phi)
        if reward is not None:
            v = reward - tau * (logp - log_ref)
        else:
            v = P @ mixture(logp, pi) - tau * (logp - log_ref)
        return pi * v - pi * np.dot(pi, v)

    return g


# --- fixed points and diagnostics -------------------------------------------


def matched_fixed_point(algorithm: Algorithm, spec: GameSpec, tol: float = 1e-12) -> np.ndarray:
    """The policy the algorithm's expected dynamics should converge to.

    Online DPO / SLiC have no closed-form target in general; the regularised Nash
    is used as their reference point.
    """
    kind = algorithm.kind
    if kind is AlgorithmKind.OFFLINE_IPO:
        return best_response(spec, algorithm.mu)
    if kind is AlgorithmKind.RLHF_PG:
        return rlhf_closed_form(spec.ref, spec.tau, algorithm.reward)
    report = solve_ipo_md_fixed_point(spec, algorithm.mixture_beta, tol=tol)
    return report.policy


def objective_value(algorithm: Algorithm, spec: GameSpec, logits) -> float:
    """Scalar tracked as ``population_loss`` in trajectories.

    Loss-based algorithms report their own population loss; Nash-MD-PG and
    self-play report the IPO loss under the same mixture sampling (same fixed
    point); RLHF reports the negative regularised reward objective.
    """
    if algorithm.loss is not None:
        return population_loss(algorithm.loss, logits, spec, algorithm.sampling())
    if algorithm.kind is AlgorithmKind.RLHF_PG:
        pi = np.exp(log_softmax(logits))
        return -rlhf_objective(pi, spec.ref, spec.tau, algorithm.reward)
    return population_loss(LossId.IPO, logits, spec, GeometricMixture(algorithm.mixture_beta))


# --- runner -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DynamicsConfig:
    algorithm: Algorithm
    spec: GameSpec
    learning_rate: float = 0.1
    steps: int = 10**5
    seed: int = 0
    mode: str = "expected"
    batch_size: int = 1
    record_every: int = 1000
    expected_label: bool = False
    initial_logits: np.ndarray | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.mode not in ("expected", "stochastic"):
            raise ValueError(f"mode must be 'expected' or 'stochastic', got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    steps: np.ndarray
    policies: np.ndarray
    population_loss: np.ndarray
    nash_residual: np.ndarray
    kl_to_ref: np.ndarray
    grad_norm: np.ndarray
    fixed_point: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def records(self):
        return list(zip(self.steps.tolist(), self.policies, self.population_loss,
                        self.nash_residual, self.kl_to_ref, self.grad_norm))

    @property
    def final_policy(self) -> np.ndarray:
        return self.policies[-1]

    @property
    def final_residual(self) -> float:
        return float(self.nash_residual[-1])

    def __len__(self):
        return len(self.steps)


def run_dynamics(config: DynamicsConfig, fixed_point=None) -> Trajectory:
    """Iterate logits <- canonicalise(logits + lr * direction) and record diagnostics.

    Records at step 0, every ``record_every`` steps and at the final step. A
    non-finite logit stops the run and flags the trajectory as diverged.
    """
    spec, algo = config.spec, config.algorithm
    if fixed_point is None:
        fixed_point = matched_fixed_point(algo, spec)
    if config.initial_logits is None:
        if spec.ref.min() <= 0:
            raise ValueError("dynamics start at ref, which must have full support")
        logits = canonicalise(spec.log_ref)
    else:
        logits = canonicalise(config.initial_logits)
    rng = np.random.Generator(np.random.Philox(config.seed))
    fast = direction_fn(algo, spec) if config.mode == "expected" else None

    rows = []

    def record(step, direction):
        pi = np.exp(log_softmax(logits))
        rows.append((step, pi, objective_value(algo, spec, logits),
                     total_variation(pi, fixed_point), kl_divergence(pi, spec.ref),
                     float(np.linalg.norm(direction))))

    diverged_at = None
    for step in range(config.steps + 1):
        with np.errstate(all="ignore"):
            if fast is not None:
                direction = fast(logits)
            else:
                direction = stochastic_update(algo, spec, logits, config.batch_size, rng,
                                              config.expected_label)
        if not np.all(np.isfinite(direction)):
            diverged_at = step
            log.warning("%s diverged at step %d", algo, step)
            break
        if step % config.record_every == 0 or step == config.steps:
            record(step, direction)
        if step == config.steps:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            new = logits + config.learning_rate * direction
        if not np.all(np.isfinite(new)):
            diverged_at = step + 1
            log.warning("%s diverged at step %d", algo, step + 1)
            break
        logits = canonicalise(new)

    if not rows:
        rows.append((0, np.exp(log_softmax(logits)), np.nan, np.nan, np.nan, np.nan))
    steps, policies, losses, residuals, kls, norms = zip(*rows)
    return Trajectory(
        steps=np.array(steps, dtype=int),
        policies=np.array(policies),
        population_loss=np.array(losses),
        nash_residual=np.array(residuals),
        kl_to_ref=np.array(kls),
        grad_norm=np.array(norms),
        fixed_point=np.asarray(fixed_point),
        diverged=diverged_at is not None,
        diverged_at=diverged_at,
    )
