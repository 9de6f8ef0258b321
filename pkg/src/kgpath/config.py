"""Run configuration: a YAML document mirrored into dataclasses.

Every pipeline stage reads the same RunConfig; command-line ``--set``
overrides use dotted paths (``training.epochs=10``) with YAML-typed
values.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .inference import InferenceConfig
from .scorer import ScorerConfig
from .synth import SynthConfig
from .training import TrainingConfig


@dataclass(frozen=True)
class MiningConfig:
    k: int = 15
    max_hop: int = 2
    # Positives and negatives are stored in the same serialized form, each
    # ending with the end-of-path marker, which is also the form beam search
    # scores at inference. If only one side carried the marker, the contrast
    # would be solvable from the marker alone and the scorer would never have
    # to read the query. The premature-stop negative gives the marker an
    # explicit wrong position so stopping early is trained against.
    terminated: bool = True
    include_eop_negative: bool = True


@dataclass(frozen=True)
class DiagnosticsConfig:
    shortcut_threshold: float = 0.95
    tail_fraction: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs, resolvable from one file."""

    output_dir: str = "runs/default"
    graph_file: str = ""
    qa_file: str = ""
    seed: int = 0
    similarity_backend: str = "reference"
    scorer: ScorerConfig = field(default_factory=lambda: ScorerConfig(dtype="float32"))
    mining: MiningConfig = field(default_factory=MiningConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    synth: SynthConfig | None = None
    retrieval_scorer: str = "trained"  # or "similarity" for the frozen baseline

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "scorer": ScorerConfig,
    "mining": MiningConfig,
    "training": TrainingConfig,
    "inference": InferenceConfig,
    "diagnostics": DiagnosticsConfig,
    "synth": SynthConfig,
}


def _hydrate(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = copy.deepcopy(data or {})
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if value is None:
                kwargs[key] = None if key == "synth" else _SECTION_TYPES[key]()
            else:
                kwargs[key] = _hydrate(_SECTION_TYPES[key], value)
        else:
            kwargs[key] = value
    unknown = set(kwargs) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**kwargs)


def load_config(path: str, overrides: list[str] | None = None) -> RunConfig:
    """Read a YAML config file and apply dotted-path overrides."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
    for override in overrides or []:
        apply_override(data, override)
    return config_from_dict(data)


def apply_override(data: dict, override: str) -> None:
    """Set ``a.b.c=value`` inside a nested dict, parsing value as YAML."""
    if "=" not in override:
        raise ValueError(f"override must look like key=value, got {override!r}")
    dotted, _, raw = override.partition("=")
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ValueError(f"empty key in override {override!r}")
    node = data
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = yaml.safe_load(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
