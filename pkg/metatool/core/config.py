"""Layered configuration: shipped defaults, an optional user file, CLI overrides."""

import copy
import logging
import math
import os
import pathlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, Mapping, Optional

import yaml

from ..services.confidence import CalibrationModel, ChannelScales
from ..services.controller import ControllerParams
from ..services.designer import DesignConfig, FinetuneConfig
from ..services.discovery import ImpasseConfig, PolicyConfig
from ..services.evaluator import EvaluatorConfig
from ..services.experiments import ExperimentConfig
from ..services.loop import OUTCOMES, LoopConfig
from ..services.toyworld import EnvSpec, TaskSpec, ToolSpec, WorldLimits
from ..types import PathLike
from .errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

DEFAULTS_PACKAGE = "metatool.data"
DEFAULTS_FILE = "defaults.yaml"
CONFIG_ENV = "METATOOL_CONFIG"
SECTIONS = (
    "world", "task", "env", "controller", "confidence", "policy", "impasse",
    "design", "finetune", "evaluator", "experiment", "loop",
)


def load_yaml(path: PathLike) -> Dict[str, Any]:
    """Load a YAML (or JSON) mapping from ``path``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping at the top level")
    return data


def load_defaults() -> Dict[str, Any]:
    """Load the shipped defaults from package data."""
    with resources.files(DEFAULTS_PACKAGE).joinpath(DEFAULTS_FILE).open("r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``; non-mapping values replace."""
    out = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class Settings:
    """Validated configuration aggregate passed to services and commands."""

    world: WorldLimits
    tasks: Dict[str, TaskSpec]
    env: EnvSpec
    controller: ControllerParams
    confidence: ChannelScales
    ece_bins: int
    policy: PolicyConfig
    impasse: ImpasseConfig
    design: DesignConfig
    finetune: FinetuneConfig
    evaluator: EvaluatorConfig
    experiment: ExperimentConfig
    loop: LoopConfig
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def task(self, kind: Optional[str] = None) -> TaskSpec:
        """Task for ``kind``, or the loop's hidden context by default."""
        key = kind or self.loop.context
        if key not in self.tasks:
            raise ConfigError(f"no task configured for {key!r}")
        return self.tasks[key]

    def with_seed_env(self, seed: int) -> EnvSpec:
        return EnvSpec(self.env.object_noise, self.env.bend_noise, self.env.trials, int(seed))


def _section(data: Mapping[str, Any], name: str) -> Dict[str, Any]:
    value = data.get(name) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(value)


def _build(cls: Any, name: str, values: Mapping[str, Any]) -> Any:
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid keys in section {name!r}: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _angle(value: Any) -> Any:
    """Accept radians or strings like ``pi/4``."""
    if isinstance(value, str):
        text = value.replace(" ", "").lower()
        num, _, den = text.partition("/")
        factor = math.pi if "pi" in num else 1.0
        head = num.replace("*pi", "").replace("pi", "") or "1"
        try:
            result = float(head) * factor
            return result / float(den) if den else result
        except ValueError as exc:
            raise ConfigError(f"cannot parse angle {value!r}") from exc
    return value


def build_settings(data: Mapping[str, Any]) -> Settings:
    """Materialize and validate every config section."""
    unknown = sorted(set(data).difference(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")

    world_raw = _section(data, "world")
    if "max_bend" in world_raw:
        world_raw["max_bend"] = _angle(world_raw["max_bend"])
    world = _build(WorldLimits, "world", world_raw)

    tasks: Dict[str, TaskSpec] = {}
    for kind, spec in _section(data, "task").items():
        spec = dict(spec or {})
        spec.setdefault("kind", kind)
        if spec.get("hook_threshold") is not None:
            spec["hook_threshold"] = _angle(spec["hook_threshold"])
        tasks[str(kind)] = _build(TaskSpec, f"task.{kind}", spec)
    if len(tasks) < 2:
        raise ConfigError("config needs at least two task contexts")

    conf_raw = _section(data, "confidence")
    ece_bins = int(conf_raw.pop("ece_bins", 10))
    eval_raw = _section(data, "evaluator")
    temperature = float(eval_raw.pop("temperature", 1.0))
    eval_raw["calibration"] = _build(CalibrationModel, "evaluator", {"temperature": temperature})
    loop_raw = _section(data, "loop")
    loop_raw["toolbox"] = tuple(ToolSpec.from_dict(t) for t in loop_raw.get("toolbox") or ())
    exp_raw = _section(data, "experiment")
    for key in ("seeds", "sigma_grid", "beta_arms"):
        if key in exp_raw:
            exp_raw[key] = tuple(exp_raw[key])

    settings = Settings(
        world=world,
        tasks=tasks,
        env=_build(EnvSpec, "env", _section(data, "env")),
        controller=_build(ControllerParams, "controller", _section(data, "controller")),
        confidence=_build(ChannelScales, "confidence", conf_raw),
        ece_bins=ece_bins,
        policy=_build(PolicyConfig, "policy", _section(data, "policy")),
        impasse=_build(ImpasseConfig, "impasse", _section(data, "impasse")),
        design=_build(DesignConfig, "design", _section(data, "design")),
        finetune=_build(FinetuneConfig, "finetune", _section(data, "finetune")),
        evaluator=_build(EvaluatorConfig, "evaluator", eval_raw),
        experiment=_build(ExperimentConfig, "experiment", exp_raw),
        loop=_build(LoopConfig, "loop", loop_raw),
        raw=dict(data),
    )
    validate_settings(settings)
    return settings


def validate_settings(settings: Settings) -> Settings:
    """Run every section's ``validate``; domain errors surface as ConfigError."""
    try:
        settings.world.validate()
        for task in settings.tasks.values():
            task.validate(settings.world)
        for tool in settings.loop.toolbox:
            tool.validate(settings.world)
        settings.env.validate()
        settings.confidence.validate()
        settings.policy.validate(OUTCOMES)
        settings.impasse.validate()
        settings.design.validate()
        settings.finetune.validate()
        settings.evaluator.validate()
        settings.experiment.validate()
        settings.loop.validate(tuple(settings.tasks))
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    if settings.ece_bins < 1:
        raise ConfigError("confidence.ece_bins must be >= 1")
    return settings


def resolve_config_path(path: Optional[PathLike]) -> Optional[pathlib.Path]:
    """Explicit path first, then ``$METATOOL_CONFIG``."""
    if path:
        return pathlib.Path(path)
    env = os.environ.get(CONFIG_ENV)
    return pathlib.Path(env) if env else None


def load_config(path: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Defaults, deep-merged with the user file and ``overrides``, validated."""
    data = load_defaults()
    source = resolve_config_path(path)
    if source is not None:
        logger.debug("loading config from %s", source)
        user = load_yaml(source)
        unknown = sorted(set(user).difference(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections in {source}: {unknown}")
        data = deep_merge(data, user)
    if overrides:
        data = deep_merge(data, overrides)
    return build_settings(data)
