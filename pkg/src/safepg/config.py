"""Experiment configuration: INI-style plain-text files, schema validation, builtins.

A config has sections [env], [policy], [trainer], [evaluation], [output] and
optionally [sweep]. Unknown sections or keys are rejected. Builtin configs
are addressed by name (nav-paper, nav-quick, nav-quick-ac, nav-paper-ac,
nav-sweep, nav-single-obstacle, oracle-small).
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from .env import FiniteMDP, NavEnvSpec, builtin_layout, load_layout
from .oracle import builtin_mdp
from .policy import BasePolicy, GaussianRbfPolicy, GatedLinearPolicy, TabularSoftmaxPolicy
from .trainers import TrainerConfig


class ConfigError(ValueError):
    """Configuration file failed schema validation."""


_SCHEMA = {
    "env": {"layout", "horizon", "step_size"},
    "policy": {"type", "separation", "sigma", "covariance", "gate", "learn_gate"},
    "trainer": {
        "method",
        "episodes",
        "eta_theta",
        "eta_lambda",
        "safety_level",
        "penalty",
        "seed",
        "clip_norm",
        "critic_lr",
        "critic_init",
        "critic_state_only",
        "fresh_dual_rollout",
        "shaping_horizon_scaled",
        "return_normalized",
        "scale_step_by_penalty",
    },
    "evaluation": {"episodes", "seed", "start_mode"},
    "sweep": {"prob_weights", "cum_weights", "prob_method", "episodes", "runs"},
    "output": {"dir", "checkpoint_every"},
}
_REQUIRED = {
    "env": {"layout"},
    "policy": {"type"},
    "trainer": {"method", "episodes", "eta_theta"},
}


@dataclass(frozen=True)
class SweepSettings:
    prob_weights: Tuple[float, ...]
    cum_weights: Tuple[float, ...]
    prob_method: str = "prob-spg-reinforce"
    episodes: Optional[int] = None
    runs: int = 1


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 500
    seed: int = 424242
    start_mode: str = "uniform-safe"


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "runs/out"
    checkpoint_every: int = 0


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    env: object  # NavEnvSpec or FiniteMDP
    policy_section: Dict[str, str]
    trainer: TrainerConfig
    evaluation: EvalSettings
    output: OutputSettings
    sweep: Optional[SweepSettings]
    text: str  # canonical resolved text, hashed for manifests

    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def make_policy(self) -> BasePolicy:
        return _make_policy(self.policy_section, self.env)


def _parse_bool(value: str, context: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{context}: expected a boolean, got {value!r}")


def _validate_sections(parser: configparser.ConfigParser) -> None:
    problems = []
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                problems.append(f"unknown key {key!r} in section [{section}]")
    for section, required in _REQUIRED.items():
        if not parser.has_section(section):
            problems.append(f"missing required section [{section}]")
            continue
        for key in required:
            if key not in parser[section]:
                problems.append(f"missing required key {key!r} in section [{section}]")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))


def _build_env(env_section) -> object:
    layout = env_section["layout"]
    if layout.startswith("finite:"):
        env = builtin_mdp(layout.split(":", 1)[1])
        if "step_size" in env_section:
            raise ConfigError("step_size does not apply to finite MDP environments")
        if "horizon" in env_section:
            from dataclasses import replace

            env = replace(env, horizon=int(env_section["horizon"]))
        return env
    if Path(layout).exists():
        spec = load_layout(layout)
    else:
        try:
            spec = builtin_layout(layout)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    from dataclasses import replace

    if "horizon" in env_section:
        spec = replace(spec, horizon=int(env_section["horizon"]))
    if "step_size" in env_section:
        spec = replace(spec, step_size=float(env_section["step_size"]))
    return spec


def _make_policy(policy_section: Dict[str, str], env) -> BasePolicy:
    kind = policy_section["type"]
    if kind == "gaussian-rbf":
        if not isinstance(env, NavEnvSpec):
            raise ConfigError("gaussian-rbf policies require a navigation environment")
        cov = tuple(float(v) for v in policy_section.get("covariance", "0.5 0.5").split())
        return GaussianRbfPolicy.lattice(
            bounds=env.bounds,
            separation=float(policy_section.get("separation", "0.5")),
            sigma=float(policy_section.get("sigma", "0.5")),
            cov=cov,
        )
    if kind == "gated-linear":
        if not isinstance(env, NavEnvSpec):
            raise ConfigError("gated-linear policies require a navigation environment")
        circles = [ob for ob in env.obstacles if hasattr(ob, "radius")]
        if not circles:
            raise ConfigError("gated-linear policies need at least one circular obstacle")
        gate = tuple(float(v) for v in policy_section.get("gate", "5 1").split())
        cov = tuple(float(v) for v in policy_section.get("covariance", "0.5 0.5").split())
        return GatedLinearPolicy.zeros(
            goal=env.goal,
            obstacle_center=circles[0].center,
            obstacle_radius=circles[0].radius,
            gate=gate,
            learn_gate=_parse_bool(policy_section.get("learn_gate", "false"), "policy.learn_gate"),
            cov=cov,
        )
    if kind == "tabular-softmax":
        if not isinstance(env, FiniteMDP):
            raise ConfigError("tabular-softmax policies require a finite MDP environment")
        return TabularSoftmaxPolicy.zeros(env.n_states, env.n_actions)
    raise ConfigError(f"unknown policy type {kind!r}")


def _build_trainer(trainer_section, is_nav: bool) -> TrainerConfig:
    safety_level = float(trainer_section.get("safety_level", "0.95"))
    # Clipping is the navigation stabilizer: on by default there, off on
    # enumerable MDPs.
    clip_default = "1000" if is_nav else "none"
    clip_raw = trainer_section.get("clip_norm", clip_default).strip().lower()
    clip = None if clip_raw in ("none", "off", "0") else float(clip_raw)
    config = TrainerConfig(
        method=trainer_section["method"],
        episodes=int(trainer_section["episodes"]),
        eta_theta=float(trainer_section["eta_theta"]),
        eta_lambda=float(trainer_section.get("eta_lambda", "0")),
        penalty=float(trainer_section.get("penalty", "0")),
        delta=1.0 - safety_level,
        seed=int(trainer_section.get("seed", "0")),
        clip_norm=clip,
        critic_lr=float(trainer_section.get("critic_lr", "0.001")),
        critic_init=tuple(float(v) for v in trainer_section.get("critic_init", "5 0.3").split()),
        critic_state_only=_parse_bool(
            trainer_section.get("critic_state_only", "false"), "trainer.critic_state_only"
        ),
        fresh_dual_rollout=_parse_bool(
            trainer_section.get("fresh_dual_rollout", "false"), "trainer.fresh_dual_rollout"
        ),
        shaping_horizon_scaled=_parse_bool(
            trainer_section.get("shaping_horizon_scaled", "true"),
            "trainer.shaping_horizon_scaled",
        ),
        return_normalized=_parse_bool(
            trainer_section.get("return_normalized", "false"), "trainer.return_normalized"
        ),
        scale_step_by_penalty=_parse_bool(
            trainer_section.get("scale_step_by_penalty", "false"),
            "trainer.scale_step_by_penalty",
        ),
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid trainer settings: {exc}") from exc
    return config


def parse_experiment_config(text: str, name: str = "custom") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    _validate_sections(parser)
    env = _build_env(parser["env"])
    policy_section = dict(parser["policy"])
    _make_policy(policy_section, env)  # validate eagerly
    trainer = _build_trainer(parser["trainer"], isinstance(env, NavEnvSpec))
    ev = parser["evaluation"] if parser.has_section("evaluation") else {}
    evaluation = EvalSettings(
        episodes=int(ev.get("episodes", "500")),
        seed=int(ev.get("seed", "424242")),
        start_mode=ev.get("start_mode", "uniform-safe"),
    )
    if evaluation.start_mode not in ("uniform-safe", "env"):
        raise ConfigError(f"unknown evaluation start_mode {evaluation.start_mode!r}")
    out = parser["output"] if parser.has_section("output") else {}
    output = OutputSettings(
        dir=out.get("dir", f"runs/{name}"),
        checkpoint_every=int(out.get("checkpoint_every", "0")),
    )
    sweep_settings = None
    if parser.has_section("sweep"):
        sw = parser["sweep"]
        sweep_settings = SweepSettings(
            prob_weights=tuple(float(v) for v in sw.get("prob_weights", "").split()),
            cum_weights=tuple(float(v) for v in sw.get("cum_weights", "").split()),
            prob_method=sw.get("prob_method", "prob-spg-reinforce"),
            episodes=int(sw["episodes"]) if "episodes" in sw else None,
            runs=int(sw.get("runs", "1")),
        )
    return ExperimentConfig(
        name=name,
        env=env,
        policy_section=policy_section,
        trainer=trainer,
        evaluation=evaluation,
        output=output,
        sweep=sweep_settings,
        text=text,
    )


_NAV_TRAIN_TEMPLATE = """\
[env]
layout = nav-default

[policy]
type = gaussian-rbf

[trainer]
method = {method}
episodes = {episodes}
eta_theta = 0.02
eta_lambda = 0.002
safety_level = 0.95
clip_norm = 1000
return_normalized = true
seed = 0

[evaluation]
episodes = 500
seed = 424242

[output]
dir = runs/{name}
"""

BUILTIN_CONFIGS: Dict[str, str] = {
    "nav-paper": _NAV_TRAIN_TEMPLATE.format(
        method="prob-spg-reinforce", episodes=250000, name="nav-paper"
    ),
    "nav-paper-ac": _NAV_TRAIN_TEMPLATE.format(
        method="prob-spg-actor-critic", episodes=250000, name="nav-paper-ac"
    ),
    "nav-quick": _NAV_TRAIN_TEMPLATE.format(
        method="prob-spg-reinforce", episodes=20000, name="nav-quick"
    ),
    "nav-quick-ac": _NAV_TRAIN_TEMPLATE.format(
        method="prob-spg-actor-critic", episodes=20000, name="nav-quick-ac"
    ),
    "nav-sweep": """\
[env]
layout = nav-default

[policy]
type = gaussian-rbf

[trainer]
method = prob-spg-reinforce
episodes = 15000
eta_theta = 0.02
safety_level = 0.95
clip_norm = 1000
return_normalized = true
scale_step_by_penalty = true
seed = 0

[sweep]
prob_weights = 0.1 0.3 0.8 2 4 8 16 32
cum_weights = 10 20 35 60 100 180 300 500
runs = 5

[evaluation]
episodes = 500
seed = 515151

[output]
dir = runs/nav-sweep
""",
    "nav-single-obstacle": """\
[env]
layout = nav-single

[policy]
type = gated-linear

[trainer]
method = prob-spg-reinforce
episodes = 4000
eta_theta = 0.02
safety_level = 0.95
clip_norm = 1000
return_normalized = true
scale_step_by_penalty = true
seed = 0

[sweep]
prob_weights = 0.5 1.5 4 12 35 100 300 900
cum_weights = 30 80 200 500 1200 3000
runs = 1

[evaluation]
episodes = 500
seed = 626262

[output]
dir = runs/nav-single-obstacle
""",
    "oracle-small": """\
[env]
layout = finite:risky

[policy]
type = tabular-softmax

[trainer]
method = prob-spg-reinforce
episodes = 50000
eta_theta = 0.05
eta_lambda = 0.005
safety_level = 0.9
seed = 0

[evaluation]
episodes = 10000
seed = 737373

[output]
dir = runs/oracle-small
""",
}


def load_experiment_config(name_or_path: str) -> ExperimentConfig:
    """Resolve a builtin config name or read a config file."""
    if name_or_path in BUILTIN_CONFIGS:
        return parse_experiment_config(BUILTIN_CONFIGS[name_or_path], name=name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        known = ", ".join(sorted(BUILTIN_CONFIGS))
        raise ConfigError(
            f"{name_or_path!r} is neither a builtin config ({known}) nor an existing file"
        )
    return parse_experiment_config(path.read_text(), name=path.stem)
