"""Run configuration: a small YAML tree validated on load."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .domain import INDICATORS
from .process import PROCESS_MODELS


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class PathsConfig:
    data: str | None = None
    output: str = "output"
    classification: str | None = None


@dataclass
class ModelConfig:
    indicator: str = "primary_proportion"
    process: str = "rw2"
    tau_scale: float = 0.04
    source_prior_sd: float = 0.5
    char_prior_sd: float = 0.5
    slab_prior_sd: float = 1.0
    outlier_term: bool = True


@dataclass
class PreprocessConfig:
    top_fraction: float = 0.1
    bandwidth: float = 5.0
    overrides: list = field(default_factory=list)


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 500
    draws: int = 500
    seed: int = 0
    target_accept: float = 0.9
    max_depth: int = 10
    n_jobs: int = 1


_SECTIONS = {
    "paths": PathsConfig,
    "model": ModelConfig,
    "preprocess": PreprocessConfig,
    "sampler": SamplerConfig,
}


@dataclass
class RunConfig:
    """Everything a command needs besides its input files.

    Sections and keys mirror the YAML file::

        paths: {data: obs.csv, output: out}
        model: {indicator: primary_proportion, tau_scale: 0.04}
        preprocess: {top_fraction: 0.1, bandwidth: 5, overrides: [17, 42]}
        sampler: {chains: 4, warmup: 500, draws: 500, seed: 1}

    Missing keys take defaults; unknown keys are an error.
    """

    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown configuration sections: {unknown}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            values = data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            bad = sorted(set(values) - allowed)
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {bad}")
            sections[name] = section_cls(**values)
        return cls(**sections)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    def with_overrides(self, **sections):
        """Copy with some keys replaced, e.g. ``with_overrides(sampler={"seed": 3})``."""
        data = copy.deepcopy(self.to_dict())
        for name, values in sections.items():
            if name not in data:
                raise ConfigError(f"unknown configuration section {name!r}")
            data[name].update(values)
        return RunConfig.from_dict(data)

    def sha256(self):
        """Hash of the settings that shape results (paths excluded)."""
        payload = {k: v for k, v in self.to_dict().items() if k != "paths"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def validate(self):
        m, p, s = self.model, self.preprocess, self.sampler
        if m.indicator not in INDICATORS:
            raise ConfigError(f"model.indicator must be one of {list(INDICATORS)}, got {m.indicator!r}")
        if m.process not in PROCESS_MODELS:
            raise ConfigError(f"model.process {m.process!r} is not registered; known: {sorted(PROCESS_MODELS)}")
        for key in ("tau_scale", "source_prior_sd", "char_prior_sd", "slab_prior_sd"):
            value = getattr(m, key)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError(f"model.{key} must be a positive number, got {value!r}")
        if not isinstance(m.outlier_term, bool):
            raise ConfigError("model.outlier_term must be true or false")
        if not 0 <= p.top_fraction <= 1:
            raise ConfigError("preprocess.top_fraction must lie in [0, 1]")
        if not p.bandwidth > 0:
            raise ConfigError("preprocess.bandwidth must be positive")
        if not isinstance(p.overrides, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in p.overrides):
            raise ConfigError("preprocess.overrides must be a list of observation ids")
        for key in ("chains", "warmup", "draws", "seed", "max_depth", "n_jobs"):
            value = getattr(s, key)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"sampler.{key} must be an integer, got {value!r}")
        if s.chains < 2:
            raise ConfigError("sampler.chains must be at least 2; convergence diagnostics need several chains")
        if s.draws < 4 or s.warmup < 0:
            raise ConfigError("sampler.draws must be at least 4 and sampler.warmup non-negative")
        if not 0 < s.target_accept < 1:
            raise ConfigError("sampler.target_accept must lie in (0, 1)")
        if s.seed < 0 or s.max_depth < 1 or s.n_jobs < 1:
            raise ConfigError("sampler.seed must be >= 0, max_depth and n_jobs >= 1")

    def estimator_params(self):
        """Keyword arguments for :class:`nosmodel.NOSEstimator`."""
        m, p, s = self.model, self.preprocess, self.sampler
        return {
            "indicator": m.indicator,
            "process": m.process,
            "source_prior_sd": m.source_prior_sd,
            "char_prior_sd": m.char_prior_sd,
            "tau_scale": m.tau_scale,
            "slab_prior_sd": m.slab_prior_sd,
            "outlier_term": m.outlier_term,
            "top_fraction": p.top_fraction,
            "bandwidth": p.bandwidth,
            "overrides": tuple(p.overrides),
            "chains": s.chains,
            "warmup": s.warmup,
            "draws": s.draws,
            "seed": s.seed,
            "target_accept": s.target_accept,
            "max_depth": s.max_depth,
            "n_jobs": s.n_jobs,
        }
