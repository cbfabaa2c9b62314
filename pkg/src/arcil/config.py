"""Experiment configuration: JSON parsing, validation, defaulting, hashing."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

log = logging.getLogger("arcil.config")

TASKS = ("gridworld_pi", "car1d", "planar_reach", "planar_push",
         "grad_accuracy", "snr", "theorem2")
AGENTS = ("sarc", "sac", "naive_diff", "bc")
REWARD_KINDS = ("gail", "fmax_rkl", "env")

# every legal hyperparameter key with its default; unknown keys are rejected
HYPER_DEFAULTS = {
    "hidden": [64, 64],
    "lr_policy": None,            # per-agent default resolved at run time
    "lr_critic": None,
    "lr_disc": 3e-4,
    "alpha": None,
    "gamma": 0.99,
    "polyak": 0.995,
    "batch_size": 256,
    "disc_batch_size": 128,
    "buffer_capacity": 100_000,
    "update_every": 20,
    "iterations_per_round": 10,
    "critic_updates_per_policy": None,
    "grad_penalty": 4.0,
    "reward_scale": 1.0,
    "normalize_obs": True,
    "n_expert_trajectories": 64,
    "expert_seed": 1234,
    "grid_width": 5,
    "grid_height": 5,
    "goal_x": None,               # defaults to the far corner
    "goal_y": None,
    "grid_gamma": 0.9,
    "pi_tol": 1e-10,
    "bc_epochs": 10_000,
    "bc_lr": 1e-3,
    "n_snr_samples": 1_000_000,
    "n_theorem2_configs": 20,
    "epoch_grid": list(range(0, 1001, 100)),
    "n_train": 1024,
    "eval_grid": 32,
    "env_noise_std": 1e-4,
}

_TOP_LEVEL_TYPES = {
    "task": str,
    "agent": str,
    "reward_kind": str,
    "seeds": list,
    "max_env_steps": int,
    "eval_every": int,
    "eval_episodes": int,
    "hyperparameters": dict,
}


class ConfigError(ValueError):
    """Invalid experiment configuration; always names the offending field."""


@dataclass
class ExperimentConfig:
    task: str
    agent: str = "sarc"
    reward_kind: str = "fmax_rkl"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    max_env_steps: int = 25_000
    eval_every: int = 1000
    eval_episodes: int = 20
    hyperparameters: dict = field(default_factory=dict)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"field 'task': unknown value {self.task!r}")
        if self.agent not in AGENTS:
            raise ConfigError(f"field 'agent': unknown value {self.agent!r}")
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigError(f"field 'reward_kind': unknown value {self.reward_kind!r}")
        if not self.seeds:
            raise ConfigError("field 'seeds': must be non-empty")
        if not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("field 'seeds': entries must be integers")
        if self.eval_episodes < 1:
            raise ConfigError("field 'eval_episodes': must be >= 1")
        if self.max_env_steps < 0:
            raise ConfigError("field 'max_env_steps': must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("field 'eval_every': must be >= 1")
        for key in self.hyperparameters:
            if key not in HYPER_DEFAULTS:
                raise ConfigError(f"field 'hyperparameters.{key}': unknown key {key!r}")
        return self

    def validate_compatibility(self):
        """Task/agent pairings that cannot run are rejected before any work."""
        self.validate()
        if self.agent == "bc" and self.reward_kind != "env":
            raise ConfigError(
                "field 'agent': bc regresses on expert actions and takes no "
                f"adversarial reward; set reward_kind to 'env', not {self.reward_kind!r}")
        if self.agent in ("sarc", "naive_diff") and self.reward_kind == "env":
            raise ConfigError(
                f"field 'reward_kind': {self.agent} needs a differentiable reward "
                "(gail or fmax_rkl); environment rewards expose no action gradient")
        return self

    def hyper(self, key):
        if key not in HYPER_DEFAULTS:
            raise ConfigError(f"field 'hyperparameters.{key}': unknown key {key!r}")
        if key in self.hyperparameters:
            return self.hyperparameters[key]
        return HYPER_DEFAULTS[key]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def config_hash(self):
        """Stable under field reordering: canonical JSON of all fields with
        defaults materialized."""
        payload = asdict(self)
        payload["hyperparameters"] = {
            k: self.hyper(k) for k in sorted(HYPER_DEFAULTS)}
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def parse_config_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_TOP_LEVEL_TYPES)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"field {name!r}: unknown key {name!r}")
    if "task" not in raw:
        raise ConfigError("field 'task': missing required field")
    for key, expected in _TOP_LEVEL_TYPES.items():
        if key in raw and not isinstance(raw[key], expected):
            raise ConfigError(
                f"field {key!r}: expected {expected.__name__}, "
                f"got {type(raw[key]).__name__}")
    config = ExperimentConfig(**raw).validate()
    for f_name in ("agent", "reward_kind", "seeds", "max_env_steps",
                   "eval_every", "eval_episodes"):
        if f_name not in raw:
            log.info("config default applied: %s = %r", f_name, getattr(config, f_name))
    return config


def parse_config(path):
    """Read and validate a JSON experiment config, filling defaults."""
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_config_dict(raw)
