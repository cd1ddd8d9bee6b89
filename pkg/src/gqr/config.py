"""Run configuration: key = value file, overridden by command-line flags."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .llm_backend import ConfigurationError, GenerationConfig

MINI = "@mini"
PATH_KEYS = ("corpus", "qrels", "queries", "prompt_pool", "session_log", "index")


@dataclass
class RunConfig:
    corpus: str | None = None
    qrels: str | None = None
    queries: str | None = None
    prompt_pool: str | None = None
    session_log: str | None = None
    index: str | None = None
    backend: str = "mock"
    mock_mode: str = "hash"
    mock_emit_prob: float = 0.8
    endpoint: str = "https://api.openai.com/v1"
    model: str = "text-davinci-003"
    api_key_env: str = "OPENAI_API_KEY"
    embedding_provider: str = "hashing"
    embedding_endpoint: str = "https://api.openai.com/v1"
    embedding_model: str = "text-embedding-3-small"
    embedding_dims: int = 256
    temperature: float = 0.7
    max_tokens: int = 256
    k: int = 6
    n_examples: int = 10
    retries: int = 3
    timeout: float = 30.0
    k1: float = 1.2
    b: float = 0.75
    stopwords: bool = False
    stem: bool = False
    alpha: float = 0.01
    seed: int = 0
    workers: int = 4

    def validate(self) -> "RunConfig":
        if self.backend not in ("http", "mock"):
            raise ConfigurationError(f"backend must be 'http' or 'mock', got {self.backend!r}")
        if self.embedding_provider not in ("http", "hashing"):
            raise ConfigurationError(f"embedding_provider must be 'http' or 'hashing', got {self.embedding_provider!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")
        self.generation()
        return self

    def generation(self) -> GenerationConfig:
        return GenerationConfig(
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            k=self.k,
            n_examples=self.n_examples,
            retries=self.retries,
            timeout=self.timeout,
        )

    def require(self, *keys: str) -> None:
        """Fail unless each path key is set and points at an existing file."""
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ConfigurationError(f"missing required setting: {key}")
            if not Path(value).is_file():
                raise FileNotFoundError(value)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw.strip()


def resolve_config_path(path: str) -> Path:
    if path == MINI:
        return Path(str(resources.files("gqr").joinpath("data/mini/mini.cfg")))
    return Path(path)


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Relative file paths are resolved against the config file's directory.
    """
    path = resolve_config_path(str(path))
    if not path.is_file():
        raise FileNotFoundError(str(path))
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string("[run]\n" + path.read_text("utf-8"), str(path))
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        # the injected section header shifts every line by one
        raise ConfigurationError(f"{path}: bad config line {lineno - 1}: {line}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"{path}: duplicate config key {exc.option!r} at line {exc.lineno - 1}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {' '.join(str(exc).split())}") from None
    values = {}
    for key, raw in parser["run"].items():
        if key not in _TYPES:
            raise ConfigurationError(f"{path}: unknown config key {key!r}")
        value = _coerce(key, raw)
        if key in PATH_KEYS and value and not Path(value).is_absolute():
            value = str(path.parent / value)
        values[key] = value
    return values


def build_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults < config file < overrides (``None`` overrides are ignored)."""
    cfg = RunConfig()
    merged = read_config_file(path) if path else {}
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return dataclasses.replace(cfg, **merged).validate()
