"""Experiment config files: INI sections parsed into typed specs.

Sections and keys (see README for the full schema):

  [environment]  kind = random | grid, plus the matching spec fields
  [topology]     kind = complete | erdos_renyi | preset, plus fields
  [algorithm]    aggregation = mean | trim, lambda
  [attack]       kind, noise_std, fixed_victim
  [schedule]     kind = experimental (c) | theoretical (eta, k0)
  [run]          steps, trials, master_seed, out

Every parse error names the section and key it came from.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from typing import Callable

from .attacks import AttackModel
from .environments import GridNavSpec, RandomMrpSpec
from .errors import ConfigError


@dataclass(frozen=True)
class TopologySpec:
    """Which builder to call per trial (erdos_renyi redraws each trial)."""

    kind: str
    n_honest: int = 0
    n_byz: int = 0
    q: int = 0
    n_total: int = 0
    edge_prob: float = 0.0
    byz_prob: float = 0.0
    per_neighborhood: bool = False
    seed: int | None = None
    preset: str = ""


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    c: float = 0.1
    eta: float = 1.0
    k0: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    environment: RandomMrpSpec | GridNavSpec
    topology: TopologySpec
    aggregation: str
    lam: float
    attack: AttackModel
    schedule: ScheduleSpec
    steps: int
    trials: int
    master_seed: int
    out: str | None

    def canonical(self) -> str:
        """Stable text form used for the config hash in CSV headers."""
        parts = [
            repr(self.environment),
            repr(self.topology),
            f"aggregation={self.aggregation}",
            f"lambda={self.lam!r}",
            repr(self.attack),
            repr(self.schedule),
            f"steps={self.steps}",
            f"trials={self.trials}",
            f"master_seed={self.master_seed}",
        ]
        return "\n".join(parts)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


class _Section:
    """Typed reads with section/key context in every error."""

    def __init__(self, parser: configparser.ConfigParser, name: str) -> None:
        if not parser.has_section(name):
            raise ConfigError(f"missing [{name}] section")
        self._name = name
        self._sec = parser[name]
        self._seen: set[str] = set()

    def _get(self, key: str, conv: Callable, default=..., ):
        self._seen.add(key)
        if key not in self._sec:
            if default is ...:
                raise ConfigError(f"[{self._name}] missing key '{key}'")
            return default
        raw = self._sec[key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{self._name}] {key} = {raw!r}: {exc}") from exc

    def str(self, key: str, default=...) -> str:
        return self._get(key, lambda s: str(s).strip(), default)

    def int(self, key: str, default=...) -> int:
        return self._get(key, lambda s: int(str(s).strip()), default)

    def float(self, key: str, default=...) -> float:
        return self._get(key, lambda s: float(str(s).strip()), default)

    def bool(self, key: str, default=...) -> bool:
        def conv(s: str) -> bool:
            v = str(s).strip().lower()
            if v in ("true", "yes", "on", "1"):
                return True
            if v in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {s!r}")

        return self._get(key, conv, default)

    def reject_unknown(self) -> None:
        extra = set(self._sec) - self._seen
        if extra:
            raise ConfigError(f"[{self._name}] unknown keys: {sorted(extra)}")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    env_sec = _Section(parser, "environment")
    kind = env_sec.str("kind")
    environment: RandomMrpSpec | GridNavSpec
    if kind == "random":
        environment = RandomMrpSpec(
            num_states=env_sec.int("num_states"),
            num_agents=env_sec.int("num_agents"),
            feature_dim=env_sec.int("feature_dim"),
            reward_scale=env_sec.float("reward_scale", 1.0),
            reward_heterogeneity=env_sec.float("reward_heterogeneity", 0.0),
            seed=env_sec.int("seed", 0),
            discount=env_sec.float("discount", 0.95),
        )
    elif kind == "grid":
        environment = GridNavSpec(
            grid_side=env_sec.int("grid_side"),
            num_movers=env_sec.int("num_movers"),
            num_agents=env_sec.int("num_agents"),
            collision_penalty=env_sec.float("collision_penalty", 1.0),
            seed=env_sec.int("seed", 0),
            feature_dim=env_sec.int("feature_dim", 8),
            discount=env_sec.float("discount", 0.95),
        )
    else:
        raise ConfigError(f"[environment] kind must be random or grid, got {kind!r}")
    env_sec.reject_unknown()

    topo_sec = _Section(parser, "topology")
    tkind = topo_sec.str("kind")
    if tkind == "complete":
        topology = TopologySpec(
            kind=tkind,
            n_honest=topo_sec.int("n_honest"),
            n_byz=topo_sec.int("n_byz", 0),
            q=topo_sec.int("q", 0),
        )
    elif tkind == "erdos_renyi":
        topology = TopologySpec(
            kind=tkind,
            n_total=topo_sec.int("n_total"),
            edge_prob=topo_sec.float("edge_prob"),
            byz_prob=topo_sec.float("byz_prob"),
            per_neighborhood=topo_sec.bool("per_neighborhood", False),
            seed=topo_sec.int("seed", None),
        )
    elif tkind == "preset":
        topology = TopologySpec(kind=tkind, preset=topo_sec.str("name"), q=topo_sec.int("q"))
    else:
        raise ConfigError(
            f"[topology] kind must be complete, erdos_renyi, or preset, got {tkind!r}"
        )
    topo_sec.reject_unknown()

    alg_sec = _Section(parser, "algorithm")
    aggregation = alg_sec.str("aggregation")
    if aggregation not in ("mean", "trim"):
        raise ConfigError(f"[algorithm] aggregation must be mean or trim, got {aggregation!r}")
    lam = alg_sec.float("lambda")
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"[algorithm] lambda must lie in [0, 1], got {lam}")
    alg_sec.reject_unknown()

    if parser.has_section("attack"):
        atk_sec = _Section(parser, "attack")
        try:
            attack = AttackModel(
                kind=atk_sec.str("kind", "none"),
                noise_std=atk_sec.float("noise_std", 1.0),
                fixed_victim=atk_sec.bool("fixed_victim", False),
            )
        except ValueError as exc:
            raise ConfigError(f"[attack] {exc}") from exc
        atk_sec.reject_unknown()
    else:
        attack = AttackModel(kind="none")

    sch_sec = _Section(parser, "schedule")
    skind = sch_sec.str("kind")
    if skind == "experimental":
        schedule = ScheduleSpec(kind=skind, c=sch_sec.float("c"))
    elif skind == "theoretical":
        schedule = ScheduleSpec(kind=skind, eta=sch_sec.float("eta"), k0=sch_sec.int("k0"))
    else:
        raise ConfigError(
            f"[schedule] kind must be experimental or theoretical, got {skind!r}"
        )
    sch_sec.reject_unknown()

    run_sec = _Section(parser, "run")
    steps = run_sec.int("steps")
    trials = run_sec.int("trials", 1)
    if steps < 1 or trials < 1:
        raise ConfigError("[run] steps and trials must be positive")
    cfg = ExperimentConfig(
        environment=environment,
        topology=topology,
        aggregation=aggregation,
        lam=lam,
        attack=attack,
        schedule=schedule,
        steps=steps,
        trials=trials,
        master_seed=run_sec.int("master_seed", 0),
        out=run_sec.str("out", None),
    )
    run_sec.reject_unknown()
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text, source=path)
