"""Declarative pipeline configuration: TOML file + environment interpolation.

String values may reference environment variables as ``${NAME}`` so secrets
(API keys) never land in config files. Relative paths resolve against the
config file's directory. Flags override config values at the CLI layer.
"""

from __future__ import annotations

import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_ENV_RE = re.compile(r"\$\{(\w+)\}")

ALL_TYPES = ("PERSON", "LOCATION", "ORG", "PHONE", "ID_NUMBER", "BANK_CARD", "DATE", "OTHER")


def _interpolate(value, field_name: str):
    if isinstance(value, str):
        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ConfigInvalid(field_name, f"environment variable {name} not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, list):
        return [_interpolate(v, field_name) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v, f"{field_name}.{k}") for k, v in value.items()}
    return value


@dataclass
class CryptoConfig:
    key_file: str = ""
    mode: str = "ecb"
    casefold: bool = False
    encrypt_types: tuple[str, ...] = ALL_TYPES


@dataclass
class GraphConfig:
    threshold: float = 0.5
    pair_budget: int = 200
    k_max: int = 3
    max_tuples: int = 0


@dataclass
class SynthesisConfig:
    kind: str = "qa_pair"
    budget_tokens: int = 2000
    avg_record_tokens: int = 300
    mode: str = "enc-first"
    min_length: int = 20


@dataclass
class BackendConfig:
    kind: str = "mock"
    model: str = ""
    seed: int = 0
    max_attempts: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    per_minute: int = 0
    audit_log: str = ""
    embed_dim: int = 64
    sampling: dict = field(default_factory=dict)


@dataclass
class RagConfigSection:
    chunk_size: int = 1024
    top_k: int = 4
    retrieve_k: int = 0
    mcq_file: str = ""


@dataclass
class PipelineConfig:
    corpus: str = ""
    workdir: str = "out"
    prompts: str = ""
    recognizers: str = ""
    sidecar: tuple[str, ...] = ()
    crypto: CryptoConfig = field(default_factory=CryptoConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    rag: RagConfigSection = field(default_factory=RagConfigSection)
    base_dir: Path = field(default_factory=Path)
    source_path: Path | None = None

    def resolve(self, path_value: str) -> Path:
        p = Path(path_value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def workdir_path(self) -> Path:
        return self.resolve(self.workdir)

    def validate(self, need_corpus: bool = True, need_key: bool = True) -> None:
        if need_corpus:
            if not self.corpus:
                raise ConfigInvalid("paths.corpus", "no corpus path configured")
            if not self.resolve(self.corpus).exists():
                raise ConfigInvalid("paths.corpus", f"{self.corpus} does not exist")
        if need_key:
            if not self.crypto.key_file:
                raise ConfigInvalid("crypto.key_file", "no key file configured")
            if not self.resolve(self.crypto.key_file).exists():
                raise ConfigInvalid("crypto.key_file", f"{self.crypto.key_file} does not exist")
        if self.crypto.mode not in ("ecb", "siv"):
            raise ConfigInvalid("crypto.mode", self.crypto.mode)
        for t in self.crypto.encrypt_types:
            if t not in ALL_TYPES:
                raise ConfigInvalid("crypto.encrypt_types", f"unknown type {t}")
        if not 0.0 <= self.graph.threshold <= 1.0:
            raise ConfigInvalid("graph.threshold", "must be in [0, 1]")
        if self.graph.pair_budget < 0:
            raise ConfigInvalid("graph.pair_budget", "must be >= 0")
        if self.graph.k_max < 2:
            raise ConfigInvalid("graph.k_max", "must be >= 2")
        if self.synthesis.kind not in ("qa_pair", "relation_analysis"):
            raise ConfigInvalid("synthesis.kind", self.synthesis.kind)
        if self.synthesis.mode not in ("enc-first", "enc-after"):
            raise ConfigInvalid("synthesis.mode", self.synthesis.mode)
        if self.synthesis.budget_tokens <= 0:
            raise ConfigInvalid("synthesis.budget_tokens", "must be > 0")
        if self.synthesis.avg_record_tokens <= 0:
            raise ConfigInvalid("synthesis.avg_record_tokens", "must be > 0")
        if self.backend.kind not in ("mock", "http"):
            raise ConfigInvalid("backend.kind", self.backend.kind)
        if self.rag.chunk_size < 16:
            raise ConfigInvalid("rag.chunk_size", "must be >= 16")
        if self.rag.top_k < 1:
            raise ConfigInvalid("rag.top_k", "must be >= 1")


def _section(data: dict, name: str, cls, field_prefix: str):
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigInvalid(field_prefix, "must be a table")
    known = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    kwargs = {}
    for key, value in section.items():
        if key not in known:
            raise ConfigInvalid(f"{field_prefix}.{key}", "unknown field")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and interpolate a TOML config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid("config", f"{path} does not exist")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid("config", f"TOML parse error: {exc}") from exc
    data = _interpolate(data, "config")

    paths = data.get("paths", {})
    cfg = PipelineConfig(
        corpus=paths.get("corpus", ""),
        workdir=paths.get("workdir", "out"),
        prompts=paths.get("prompts", ""),
        recognizers=paths.get("recognizers", ""),
        sidecar=tuple(paths.get("sidecar", []) or ()),
        crypto=_section(data, "crypto", CryptoConfig, "crypto"),
        graph=_section(data, "graph", GraphConfig, "graph"),
        synthesis=_section(data, "synthesis", SynthesisConfig, "synthesis"),
        backend=_section(data, "backend", BackendConfig, "backend"),
        rag=_section(data, "rag", RagConfigSection, "rag"),
        base_dir=path.parent.resolve(),
        source_path=path.resolve(),
    )
    return cfg
