"""Pipeline configuration: one JSON file, overridable per command by flags.

Relative paths are resolved against the config file's directory. Secrets are
never stored here; the endpoint token is read from ``NAVCOT_API_TOKEN``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import InvalidConfig


@dataclass
class Paths:
    graphs: str | None = None
    captions: str | None = None
    episodes: str | None = None
    labels: str | None = None
    landmarks: str | None = None
    similarity: str | None = None
    aug_episodes: str | None = None
    script: str | None = None
    output_dir: str = "out"


@dataclass
class RunSection:
    max_steps: int = 15
    history_mode: str = "last"
    temperature: float = 0.0
    fallback_policy: str = "first_nonstop"
    parallelism: int = 1


@dataclass
class BackendSection:
    kind: str = "oracle"
    url: str | None = None
    model: str = "navcot"
    timeout: float = 60.0
    max_retries: int = 5
    backoff_base: float = 0.5
    requests_per_second: float | None = None
    max_tokens: int = 512


@dataclass
class LabelSection:
    similarity: str = "table"  # table | exact | http
    similarity_url: str | None = None
    extract: str = "cache"  # cache | http


@dataclass
class ExportSection:
    task: str = "cot"
    aug_n: int | None = None
    aug_seed: int = 0
    history_mode: str = "last"
    include_example: bool = True
    char_budget: int | None = 1600


_SECTIONS = {"paths": Paths, "run": RunSection, "backend": BackendSection,
             "label": LabelSection, "export": ExportSection}


@dataclass
class Config:
    paths: Paths = field(default_factory=Paths)
    run: RunSection = field(default_factory=RunSection)
    backend: BackendSection = field(default_factory=BackendSection)
    label: LabelSection = field(default_factory=LabelSection)
    export: ExportSection = field(default_factory=ExportSection)
    seed: int = 0
    base_dir: str = field(default=".", compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "Config":
        unknown = set(d) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            section = d.get(name, {})
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise InvalidConfig(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**section)
        return cls(**kwargs, seed=int(d.get("seed", 0)), base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{path}: {e}") from e
        return cls.from_dict(data, base_dir=str(path.parent))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def path(self, name: str, required: bool = True, must_exist: bool = True) -> Path | None:
        p = self.resolve(getattr(self.paths, name))
        if p is None:
            if required:
                raise InvalidConfig(f"paths.{name} is not set")
            return None
        if must_exist and not p.exists():
            raise InvalidConfig(f"paths.{name} = {p} does not exist")
        return p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output_dir)
