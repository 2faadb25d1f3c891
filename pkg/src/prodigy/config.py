"""Run configuration: one JSON document plus dotted-key overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .prompt import AugConfig
from .train import TaskConfig, TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (maps to exit status 2)."""


@dataclass
class GraphPaths:
    edges: str
    features: str
    labels: str | None = None
    label_features: str | None = None
    directed: bool = False
    num_relations: int | None = None


@dataclass
class EvalParams:
    ways: int = 3
    shots: int = 3
    queries: int = 4
    num_tasks: int = 500
    pool_size: int = 10
    train_fraction: float = 0.5
    head_epochs: int = 100
    head_lr: float = 1e-2
    contrastive_batch: int = 32


@dataclass
class RunConfig:
    graph: GraphPaths
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    eval: EvalParams = field(default_factory=EvalParams)
    seed: int = 0
    output_dir: str = "runs/default"
    method: str = "prodigy"

    def __post_init__(self):
        # the run seed drives training too; one knob, no drift between them
        self.train.seed = int(self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["nm_to_mt_ratio"] = list(self.train.nm_to_mt_ratio)
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


_SECTIONS = {"graph": GraphPaths, "train": TrainConfig, "task": TaskConfig,
             "aug": AugConfig, "eval": EvalParams}


def toy_config_path() -> Path:
    """Config for the toy graph shipped with the package."""
    return Path(str(resources.files("prodigy") / "data" / "toy" / "config.json"))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = doc
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
        node[leaf] = _parse_value(value)
    return doc


def _build(cls, section: str, values):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"section {section!r}: {err}") from None


def resolve_seed(doc: dict, cli_seed: int | None) -> int:
    """``--seed`` beats the config file, which beats ``PRODIGY_SEED``, which beats 0."""
    if cli_seed is not None:
        return int(cli_seed)
    if "seed" in doc:
        return int(doc["seed"])
    env = os.environ.get("PRODIGY_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PRODIGY_SEED={env!r} is not an integer") from None
    return 0


def load_run_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Read a config file (the bundled toy config if ``path`` is None).

    Relative graph paths are taken relative to the config file and stored
    absolute, so the echoed ``config.json`` works from any directory.
    """
    path = Path(path) if path is not None else toy_config_path()
    try:
        doc = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    doc = apply_overrides(doc, overrides)
    unknown = sorted(set(doc) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    if "graph" not in doc:
        raise ConfigError("config needs a 'graph' section with edges and features paths")
    graph = dict(doc["graph"])
    for key in ("edges", "features", "labels", "label_features"):
        if graph.get(key):
            graph[key] = str((path.parent / graph[key]).resolve())
    parts = {name: _build(cls, name, graph if name == "graph" else doc.get(name, {}))
             for name, cls in _SECTIONS.items()}
    model = doc.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("section 'model' must be an object")
    method = doc.get("method", "prodigy")
    if method not in ("prodigy", "contrastive"):
        raise ConfigError(f"method must be 'prodigy' or 'contrastive', not {method!r}")
    return RunConfig(model=dict(model), seed=resolve_seed(doc, seed),
                     output_dir=str(doc.get("output_dir", "runs/default")), method=method,
                     **parts)
