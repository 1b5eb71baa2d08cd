"""Experiment and sweep configuration files.

Configs are TOML; dotted keys keep them flat, e.g.::

    game.kind = "appendix_d"
    game.tau = 0.1
    algo.name = "ipo_md"
    algo.beta = 0.5
    run.steps = 100000
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import (
    GameSpec,
    appendix_d_game,
    bradley_terry_preferences,
    make_rng,
    random_preferences,
    rock_paper_scissors,
    uniform_policy,
    uniform_preferences,
    validate_preference_matrix,
)
from .dynamics import Algorithm, AlgorithmKind, DynamicsConfig

GAME_KINDS = ("matrix", "random", "bradley_terry", "rps", "uniform", "appendix_d")
MD_ALGORITHMS = ("ipo_md", "nash_md_pg")
MODES = ("expected", "stochastic")
FORMATS = ("csv", "json")
SWEEP_AXES = ("tau", "beta", "learning_rate", "seed")
DEFAULT_MAX_CELLS = 10**4


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class GameConfig:
    kind: str = "appendix_d"
    tau: float = 0.1
    preference_matrix: list | None = None
    n: int | None = None
    seed: int = 0
    rewards: list | None = None
    reference_policy: Any = "uniform"


@dataclass(frozen=True)
class AlgoConfig:
    name: str = "online_ipo"
    learning_rate: float = 0.1
    beta: float | None = None
    mode: str = "expected"
    batch_size: int | None = None
    expected_label: bool = False
    mu: Any = None
    reward: list | None = None


@dataclass(frozen=True)
class RunConfig:
    steps: int = 100_000
    seed: int = 0
    record_every: int = 1000
    tolerance: float = 1e-4


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameConfig = field(default_factory=GameConfig)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output"]["formats"] = list(d["output"]["formats"])
        return _strip_none(d)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {"game": GameConfig, "algo": AlgoConfig, "run": RunConfig, "output": OutputConfig}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        parts = {}
        for name, klass in sections.items():
            table = data.get(name, {})
            if not isinstance(table, dict):
                raise ConfigError(name, "expected a table")
            allowed = klass.__dataclass_fields__
            for key in table:
                if key not in allowed:
                    raise ConfigError(f"{name}.{key}", "unknown key")
            kwargs = dict(table)
            if name == "output" and "formats" in kwargs:
                kwargs["formats"] = tuple(kwargs["formats"])
            parts[name] = klass(**kwargs)
        config = cls(**parts)
        config.validate()
        return config

    def validate(self) -> None:
        g, a, r, o = self.game, self.algo, self.run, self.output
        _number(g.tau, "game.tau", positive=True)
        if g.kind not in GAME_KINDS:
            raise ConfigError("game.kind", f"must be one of {', '.join(GAME_KINDS)}")
        if g.kind == "matrix" and g.preference_matrix is None:
            raise ConfigError("game.preference_matrix", "required when game.kind = 'matrix'")
        if g.kind in ("random", "uniform") and (not isinstance(g.n, int) or g.n < 2):
            raise ConfigError("game.n", "an integer >= 2 is required for this game kind")
        if g.kind == "bradley_terry" and not g.rewards:
            raise ConfigError("game.rewards", "required when game.kind = 'bradley_terry'")
        try:
            AlgorithmKind(a.name)
        except ValueError:
            raise ConfigError("algo.name", f"unknown algorithm {a.name!r}") from None
        _number(a.learning_rate, "algo.learning_rate", positive=True)
        if a.name in MD_ALGORITHMS:
            if a.beta is None:
                raise ConfigError("algo.beta", f"required for {a.name}")
            _number(a.beta, "algo.beta")
            if not 0.0 <= a.beta <= 1.0:
                raise ConfigError("algo.beta", "must lie in [0, 1]")
        elif a.beta is not None:
            raise ConfigError("algo.beta", f"only valid for {' / '.join(MD_ALGORITHMS)}")
        if a.mode not in MODES:
            raise ConfigError("algo.mode", "must be 'expected' or 'stochastic'")
        if a.batch_size is not None:
            if a.mode != "stochastic":
                raise ConfigError("algo.batch_size", "only valid in stochastic mode")
            if not isinstance(a.batch_size, int) or a.batch_size < 1:
                raise ConfigError("algo.batch_size", "must be a positive integer")
        if a.name == "rlhf_pg" and a.reward is None:
            raise ConfigError("algo.reward", "required for rlhf_pg")
        if a.name != "rlhf_pg" and a.reward is not None:
            raise ConfigError("algo.reward", "only valid for rlhf_pg")
        if a.name != "offline_ipo" and a.mu is not None:
            raise ConfigError("algo.mu", "only valid for offline_ipo")
        for key in ("steps", "record_every"):
            v = getattr(r, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"run.{key}", "must be a positive integer")
        if not isinstance(r.seed, int) or isinstance(r.seed, bool) or r.seed < 0:
            raise ConfigError("run.seed", "must be a nonnegative integer")
        _number(r.tolerance, "run.tolerance", positive=True)
        bad = [f for f in o.formats if f not in FORMATS]
        if bad or not o.formats:
            raise ConfigError("output.formats", "must be a non-empty subset of ['csv', 'json']")

    def with_overrides(self, **axes) -> "ExperimentConfig":
        """Copy with sweep-axis values substituted (tau, beta, learning_rate, seed)."""
        game, algo, run = self.game, self.algo, self.run
        if "tau" in axes:
            game = replace(game, tau=axes["tau"])
        if "beta" in axes:
            algo = replace(algo, beta=axes["beta"])
        if "learning_rate" in axes:
            algo = replace(algo, learning_rate=axes["learning_rate"])
        if "seed" in axes:
            run = replace(run, seed=axes["seed"])
        out = replace(self, game=game, algo=algo, run=run)
        out.validate()
        return out

    # --- builders -------------------------------------------------------------

    def build_game(self) -> GameSpec:
        g = self.game
        try:
            if g.kind == "appendix_d":
                spec = appendix_d_game(g.tau)
                prefs = spec.prefs
            elif g.kind == "matrix":
                prefs = validate_preference_matrix(g.preference_matrix)
            elif g.kind == "random":
                prefs = random_preferences(g.n, make_rng(g.seed))
            elif g.kind == "bradley_terry":
                prefs = bradley_terry_preferences(g.rewards)
            elif g.kind == "rps":
                prefs = rock_paper_scissors()
            else:
                prefs = uniform_preferences(g.n)
        except ValueError as exc:
            raise ConfigError("game.preference_matrix", str(exc)) from None
        ref = _policy_field(g.reference_policy, prefs.n, "game.reference_policy")
        return GameSpec(prefs, ref, g.tau)

    def build_algorithm(self, n: int) -> Algorithm:
        a = self.algo
        kind = AlgorithmKind(a.name)
        try:
            if kind is AlgorithmKind.OFFLINE_IPO:
                mu = _policy_field("uniform" if a.mu is None else a.mu, n, "algo.mu")
                return Algorithm.offline_ipo(mu)
            if kind is AlgorithmKind.RLHF_PG:
                if len(a.reward) != n:
                    raise ConfigError("algo.reward", f"needs {n} entries")
                return Algorithm.rlhf_pg(a.reward)
            if kind in (AlgorithmKind.IPO_MD, AlgorithmKind.NASH_MD_PG):
                return Algorithm(kind, beta=float(a.beta))
            return Algorithm(kind)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("algo", str(exc)) from None

    def dynamics_config(self, spec: GameSpec | None = None) -> DynamicsConfig:
        spec = self.build_game() if spec is None else spec
        a, r = self.algo, self.run
        return DynamicsConfig(
            algorithm=self.build_algorithm(spec.n),
            spec=spec,
            learning_rate=float(a.learning_rate),
            steps=r.steps,
            seed=r.seed,
            mode=a.mode,
            batch_size=a.batch_size or 1,
            record_every=r.record_every,
            expected_label=a.expected_label,
        )


def _number(v, name, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, "must be a finite number")
    if positive and v <= 0:
        raise ConfigError(name, f"must be positive, got {v}")


def _policy_field(value, n: int, name: str) -> np.ndarray:
    if isinstance(value, str):
        if value != "uniform":
            raise ConfigError(name, "must be 'uniform' or a list of probabilities")
        return uniform_policy(n)
    p = np.asarray(value, dtype=float)
    if p.shape != (n,) or p.min() < 0 or abs(p.sum() - 1.0) > 1e-12:
        raise ConfigError(name, f"must be {n} nonnegative probabilities summing to 1")
    return p


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def _read_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(_read_toml(path))
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axes: dict
    max_cells: int = DEFAULT_MAX_CELLS

    def cells(self) -> list[dict]:
        names = [a for a in SWEEP_AXES if a in self.axes]
        values = [self.axes[a] for a in names]
        return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def load_sweep(path) -> SweepSpec:
    """Sweep file: a ``base`` table (or path to a run config), ``axes`` and optional ``sweep.max_cells``."""
    path = Path(path)
    data = _read_toml(path)
    base = data.get("base")
    if base is None:
        raise ConfigError("base", "sweep needs a base config table or path")
    if isinstance(base, str):
        base_cfg = load_config(path.parent / base)
    else:
        try:
            base_cfg = ExperimentConfig.from_dict(base)
        except TypeError as exc:
            raise ConfigError("base", str(exc)) from None
    axes = data.get("axes", {})
    for name, vals in axes.items():
        if name not in SWEEP_AXES:
            raise ConfigError(f"axes.{name}", f"sweepable axes are {', '.join(SWEEP_AXES)}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"axes.{name}", "must be a non-empty list")
    max_cells = data.get("sweep", {}).get("max_cells", DEFAULT_MAX_CELLS)
    sweep = SweepSpec(base_cfg, axes, max_cells)
    size = math.prod(len(v) for v in axes.values())
    if size > max_cells:
        raise ConfigError("axes", f"{size} cells exceeds sweep.max_cells = {max_cells}")
    return sweep

