"""
Pipeline configuration: one YAML file, every section optional.

    paths:      input files and the output directory
    alignment:  AlignmentConfig fields
    task_head:  TaskHeadConfig fields
    sweep:      workers and optional grids per axis
    synth:      SynthConfig fields
    seeds:      evaluation seeds
    threads:    worker threads

Missing keys fall back to the dataclass defaults; unknown keys are errors.
Input paths left unset point into the synthetic bundle under the output
directory, so `synth` followed by any other command works with no file.
"""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

import yaml

from align.trainer import AlignmentConfig, AlignmentConfigError
from synth.world import BUNDLE_FILES, SynthConfig, SynthConfigError
from tasks.training import TaskError, TaskHeadConfig


logger = logging.getLogger(__name__)

DEFAULT_SEEDS = [0, 1, 2, 3, 4]


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    field: Optional[str] = None
    pois: Optional[str] = None
    text: Optional[str] = None
    luc: Optional[str] = None
    regions: Optional[str] = None
    region_mask: Optional[str] = None
    sdm_targets: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: str = 'out'


@dataclass
class SweepConfig:
    workers: int = 1
    lambdas: Optional[List[float]] = None
    buffers: Optional[List[List[float]]] = None
    fractions: Optional[List[float]] = None

    def grid(self, axis: str):
        if axis == 'buffers' and self.buffers is not None:
            return [tuple(pair) for pair in self.buffers]
        return {'lambda': self.lambdas, 'fraction': self.fractions}.get(axis)


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    task_head: TaskHeadConfig = field(default_factory=TaskHeadConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)

    @property
    def output_dir(self) -> str:
        return self.paths.output_dir

    @property
    def synth_dir(self) -> str:
        return os.path.join(self.output_dir, 'synth')

    def path(self, name: str) -> Optional[str]:
        """Configured input path, else the synthetic bundle's file of that name"""
        value = getattr(self.paths, name)
        if value is not None:
            return value
        if name == 'checkpoint':
            return os.path.join(self.output_dir, 'pretrain', 'best.aeth')
        if name in BUNDLE_FILES:
            return os.path.join(self.synth_dir, BUNDLE_FILES[name])
        return None

    def require(self, *names: str):
        """Every named input must exist on disk"""
        for name in names:
            path = self.path(name)
            if path is None:
                raise ConfigError(f"paths.{name} is not set")
            if not os.path.exists(path):
                raise ConfigError(f"paths.{name}: file not found: {path}")

    def validate(self) -> 'PipelineConfig':
        try:
            self.alignment.validate()
            self.task_head.validate()
            self.synth.validate()
        except (AlignmentConfigError, SynthConfigError, TaskError) as e:
            raise ConfigError(str(e)) from e
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.sweep.workers < 1:
            raise ConfigError(f"sweep.workers must be >= 1, got {self.sweep.workers}")
        return self


def _section(cls, values: Any, name: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {name} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(f'{name}.{k}' for k in unknown)}")
    defaults = cls()
    return cls(**{k: _coerce(getattr(defaults, k), v, f"{name}.{k}") for k, v in values.items()})


def _coerce(default: Any, value: Any, key: str) -> Any:
    """Cast scalars to the type of the default (YAML reads 1e-3 as a string)"""
    if value is None or default is None or isinstance(default, (list, str)):
        return value
    kind = type(default)
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be {kind.__name__}, got {value!r}")


SECTIONS = {'paths': PathsConfig, 'alignment': AlignmentConfig, 'task_head': TaskHeadConfig,
            'sweep': SweepConfig, 'synth': SynthConfig}


def config_from_dict(raw: Dict) -> PipelineConfig:
    unknown = sorted(set(raw) - set(SECTIONS) - {'seeds', 'threads'})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = PipelineConfig(**{name: _section(cls, raw.get(name), name) for name, cls in SECTIONS.items()})
    if raw.get('seeds') is not None:
        cfg.seeds = [int(s) for s in raw['seeds']]
    if raw.get('threads') is not None:
        cfg.threads = int(raw['threads'])
    return cfg


def load_config(path: Optional[str] = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, 'r') as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    logger.debug("loaded config %s", path)
    return config_from_dict(raw)


def apply_overrides(cfg: PipelineConfig, seed: Optional[int] = None, threads: Optional[int] = None,
                    out_dir: Optional[str] = None) -> PipelineConfig:
    """Command-line flags win over the file; --seed seeds both generation and pretraining"""
    if seed is not None:
        cfg.alignment = replace(cfg.alignment, seed=seed)
        cfg.synth = replace(cfg.synth, seed=seed)
    if threads is not None:
        cfg.threads = threads
    if out_dir is not None:
        cfg.paths = replace(cfg.paths, output_dir=out_dir)
    return cfg
