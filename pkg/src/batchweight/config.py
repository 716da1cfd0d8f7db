"""Experiment configuration: a nested, strictly-validated record that
round-trips losslessly through JSON.

Unknown keys are errors so config typos never pass silently; ``--set``
overrides address fields by dotted path (``train.n_steps=500``).
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

ALGORITHMS = ("one_sided", "jd_bw", "wgan_baseline", "cycle_baseline")
STRATEGIES = ("concat", "one_sided", "composite")
FREEZABLE = ("generator", "discriminator", "weights")


@dataclass
class TrainSection:
    m: int = 128
    n_steps: int = 20000
    d_steps: int = 5
    lr_g: float = 1e-4
    lr_d: float = 2e-4
    lr_w: float = 1e-4
    log_every: int = 25
    checkpoint_every: int = 0
    freeze: list = field(default_factory=list)


@dataclass
class WeightSection:
    strategy: str = "composite"
    clip_ratio: float = 3.0
    relax_every: int = 5000
    relax_factor: float = 1.5
    zero_init: bool = False


@dataclass
class NetsSection:
    gen_hidden: int = 24
    gen_blocks: int = 2
    noise_dim: int = 8
    joint_branch: int = 16
    joint_trunk: int = 32
    joint_layers: int = 2
    marginal_width: int = 32
    marginal_layers: int = 3
    weight_width: int = 24
    weight_layers: int = 2


@dataclass
class CycleSection:
    cycle_weight: float = 10.0
    adv_weight: float = 1.0


@dataclass
class EvalSection:
    n_eval: int = 10000
    smoothing: float = 0.99
    eval_every: int = 0


@dataclass
class ExperimentConfig:
    preset: str = "srmnist2d"
    algorithm: str = "jd_bw"
    seed: int = 0
    out: str = None
    domain: dict = None
    train: TrainSection = field(default_factory=TrainSection)
    weight: WeightSection = field(default_factory=WeightSection)
    nets: NetsSection = field(default_factory=NetsSection)
    cycle: CycleSection = field(default_factory=CycleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.weight.strategy not in STRATEGIES:
            raise ConfigError(f"weight.strategy must be one of {STRATEGIES}")
        if self.train.m < 2:
            raise ConfigError("train.m must be at least 2 (batch softmax needs >1 sample)")
        if self.train.d_steps < 1:
            raise ConfigError("train.d_steps must be at least 1")
        if self.train.n_steps < 0:
            raise ConfigError("train.n_steps must be non-negative")
        for lr_name in ("lr_g", "lr_d", "lr_w"):
            if getattr(self.train, lr_name) <= 0:
                raise ConfigError(f"train.{lr_name} must be positive")
        if self.train.log_every < 1:
            raise ConfigError("train.log_every must be positive")
        unknown = set(self.train.freeze) - set(FREEZABLE)
        if unknown:
            raise ConfigError(f"train.freeze entries must be among {FREEZABLE}, got {unknown}")
        if self.weight.clip_ratio <= 1.0:
            raise ConfigError("weight.clip_ratio must exceed 1")
        if self.weight.relax_factor < 1.0 or self.weight.relax_every < 1:
            raise ConfigError("weight relax schedule must not tighten over time")
        if self.algorithm == "one_sided" and self.weight.strategy != "one_sided":
            raise ConfigError("one_sided training requires weight.strategy = one_sided")
        return self


_SECTIONS = {
    "train": TrainSection,
    "weight": WeightSection,
    "nets": NetsSection,
    "cycle": CycleSection,
    "eval": EvalSection,
}


def _fill(cls, data, prefix):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(prefix + k for k in unknown)}")
    return cls(**data)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - top_names
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            kwargs[key] = _fill(_SECTIONS[key], value, key + ".")
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs).validate()


def config_to_dict(config):
    return dataclasses.asdict(config)


def config_to_json(config):
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data)


def save_config(config, path):
    with open(path, "w") as fh:
        fh.write(config_to_json(config))


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Apply ``key.path=value`` strings on top of `config`, re-validating.

    Values are parsed as JSON literals when possible, else kept as strings.
    """
    data = config_to_dict(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config key {path!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {path!r}")
        node[keys[-1]] = _parse_value(raw)
    return config_from_dict(data)
