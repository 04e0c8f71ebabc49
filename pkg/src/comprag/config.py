"""Pipeline configuration loaded from ``comprag.toml``.

Example::

    [embedder]
    mode = "hashing"        # or "remote"
    dim = 256
    normalize = true
    url = ""                # remote mode; falls back to COMPRAG_EMBED_URL

    [chunking]
    target_size = 64
    tolerance = 0.1
    strategy = "rule_based"

    [evaluator]
    mode = "fuse"
    alpha = 0.5
    cutoff_m = "unlimited"
    missing_policy = "keep_semantic"

    [retrieval]
    k = 5

    [generator]
    mode = "template"       # or "remote"
    url = ""                # falls back to COMPRAG_GEN_URL

    [recommender.weights]
    nps = 0.25
    time = 0.25
    review = 0.25
    proximity = 0.25

    [recommender.bounds]
    nps = [-100, 100]
    time = [10, 60]
    review = [0, 5]
    proximity = [0, 10]

    [paths]
    index = "comprag.idx"
    filtration = "filtration.json"

Unknown sections or keys are rejected. Relative paths resolve against the
directory holding the config file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .chunker import ChunkingConfig
from .errors import CompragError, ConfigError, InvalidBounds
from .evaluator import EvaluatorPolicy
from .index import DEFAULT_DIM, Embedder, HashingEmbedder, RemoteEmbedder
from .pipeline import Generator, RemoteGenerator, template_generate
from .recommender import MetricBounds, MetricWeights, bounds_from_mapping, weights_from_mapping

DEFAULT_CONFIG_NAME = "comprag.toml"


@dataclass(frozen=True)
class EmbedderConfig:
    mode: str = "hashing"
    dim: int = DEFAULT_DIM
    normalize: bool = True
    url: str = ""
    timeout: float = 10.0

    def build(self) -> Embedder:
        if self.mode == "hashing":
            return HashingEmbedder(dim=self.dim, normalize=self.normalize)
        if self.mode == "remote":
            return RemoteEmbedder(self.url or None, dim=self.dim, normalize=self.normalize, timeout=self.timeout)
        raise ConfigError(f"embedder.mode must be 'hashing' or 'remote', got {self.mode!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    mode: str = "template"
    url: str = ""
    timeout: float = 30.0

    def build(self) -> Generator:
        if self.mode == "template":
            return template_generate
        if self.mode == "remote":
            return RemoteGenerator(self.url or None, timeout=self.timeout)
        raise ConfigError(f"generator.mode must be 'template' or 'remote', got {self.mode!r}")


@dataclass(frozen=True)
class PathsConfig:
    index: Path = Path("comprag.idx")
    filtration: Path = Path("filtration.json")


@dataclass(frozen=True)
class PipelineConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    evaluator: EvaluatorPolicy = field(default_factory=EvaluatorPolicy)
    k: int = 5
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    weights: MetricWeights = field(default_factory=MetricWeights)
    bounds: MetricBounds = field(default_factory=MetricBounds)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _take(section: str, data: Any, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return data


def _names(cls: type) -> set[str]:
    return {f.name for f in fields(cls)}


def parse_cutoff(value: Any) -> int | None:
    if value is None or value == "unlimited" or value == 0:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"cutoff_m must be a positive integer or 'unlimited', got {value!r}")
    return value


def config_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    base_dir = base_dir or Path.cwd()
    top = _take(
        "top level",
        data,
        {"embedder", "chunking", "evaluator", "retrieval", "generator", "recommender", "paths"},
    )
    cfg = PipelineConfig()
    try:
        if "embedder" in top:
            cfg = replace(cfg, embedder=EmbedderConfig(**_take("embedder", top["embedder"], _names(EmbedderConfig))))
        if "chunking" in top:
            cfg = replace(cfg, chunking=ChunkingConfig(**_take("chunking", top["chunking"], _names(ChunkingConfig))))
        if "evaluator" in top:
            ev = dict(_take("evaluator", top["evaluator"], _names(EvaluatorPolicy)))
            if "cutoff_m" in ev:
                ev["cutoff_m"] = parse_cutoff(ev["cutoff_m"])
            cfg = replace(cfg, evaluator=EvaluatorPolicy(**ev).validate())
        if "retrieval" in top:
            k = _take("retrieval", top["retrieval"], {"k"}).get("k", cfg.k)
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ConfigError("retrieval.k must be a positive integer")
            cfg = replace(cfg, k=k)
        if "generator" in top:
            cfg = replace(cfg, generator=GeneratorConfig(**_take("generator", top["generator"], _names(GeneratorConfig))))
        if "recommender" in top:
            rec = _take("recommender", top["recommender"], {"weights", "bounds"})
            if "weights" in rec:
                w = _take("recommender.weights", rec["weights"], _names(MetricWeights))
                cfg = replace(cfg, weights=weights_from_mapping(w))
            if "bounds" in rec:
                b = _take("recommender.bounds", rec["bounds"], _names(MetricBounds))
                bounds = bounds_from_mapping(b)
                bounds.check()
                cfg = replace(cfg, bounds=bounds)
        if "paths" in top:
            p = _take("paths", top["paths"], _names(PathsConfig))
            cfg = replace(cfg, paths=PathsConfig(**{k: base_dir / str(v) for k, v in p.items()}))
        else:
            cfg = replace(
                cfg, paths=PathsConfig(base_dir / cfg.paths.index, base_dir / cfg.paths.filtration)
            )
    except ConfigError:
        raise
    except (CompragError, InvalidBounds, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load ``path``, or ``./comprag.toml`` if present, else defaults."""
    if path is None:
        default = Path.cwd() / DEFAULT_CONFIG_NAME
        if not default.exists():
            return config_from_dict({})
        path = default
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)
