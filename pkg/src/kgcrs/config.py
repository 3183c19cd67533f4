"""Run configuration: one dataclass per section, loaded from a TOML file.

Defaults follow the published settings where one exists (m=64, four
propagation steps, margin 4, gamma 0.7, T=15, K=10, rewards 1/0.1/-0.01/-0.3,
beta 0.1); the rest are documented choices.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    interactions: str = ""
    item_attrs: str = ""
    facets: str = ""
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    min_interactions: int = 10


@dataclass
class EmbedConfig:
    dim: int = 64                 # per-step embedding size m
    n_layers: int = 4             # propagation steps; output size is n_layers * dim
    margin: float = 4.0
    lr: float = 0.001
    pretrain_epochs: int = 5
    epochs: int = 10
    batch_size: int = 256
    attention: str = "raw"        # "raw" or "softmax" (per-neighbourhood normalisation)
    max_degree: int = 0           # 0 = unlimited
    item_loss: str = "pointwise"  # "pointwise" cross-entropy or "bpr"
    train_attrs: str = "sample"   # attribute set used as P_u offline: "none", "all", "sample"
    init_noise: float = 0.01      # std of the noise added to identity W


@dataclass
class RewardConfig:
    r_item: float = 1.0
    r_attr: float = 0.1
    r_turn: float = -0.01
    r_quit: float = -0.3
    beta: float = 0.1
    gamma: float = 0.7
    mode: str = "CG"              # "CG" or "FG"


@dataclass
class PolicyConfig:
    hidden: tuple[int, ...] = (64,)
    lr: float = 0.001
    optimizer: str = "sgd"        # "sgd" or "adam"
    pretrain_lr: float = 0.01
    pretrain_epochs: int = 20
    pretrain_sessions: int = 200
    baseline: bool = False        # subtract mean return (off: plain REINFORCE)
    greedy_eval: bool = False
    epochs: int = 1
    sessions: int = 0             # training sessions per run; 0 = one pass over training pairs
    entropy_mode: str = "binary"  # "binary" or "single"


@dataclass
class SessionConfig:
    max_turns: int = 15           # T
    top_k: int = 10               # K
    bins: tuple[int, ...] = (10, 50, 100, 200, 500)
    scheme: str = "binary"        # "binary" or "enumerated"
    finetune_steps: int = 1
    finetune_lr: float = 0.0      # 0 = reuse the offline embedding lr
    reject_filter: bool = False   # negative answers also drop items carrying the attribute
    eval_sessions: int = 500


@dataclass
class AblationConfig:
    graph_con: bool = False       # -graphCon: zero s_user and s_conv
    graph_rec: bool = False       # -graphRec: score from node features, no propagation
    dynamic: bool = False         # -dynamic: never mutate the session graph
    map: bool = False             # -map: identity role projections


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self, *sections: str) -> str:
        """sha256 over the whole config, or over the named sections only."""
        d = self.to_dict()
        if sections:
            d = {k: d[k] for k in sections}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"embed.dim": 8})``."""
        cfg = from_dict(self.to_dict())
        for key, value in overrides.items():
            set_value(cfg, key, value)
        return cfg


_SECTIONS = {"data": DataConfig, "embed": EmbedConfig, "reward": RewardConfig,
             "policy": PolicyConfig, "session": SessionConfig, "ablation": AblationConfig}


def _coerce(current: Any, value: Any) -> Any:
    if isinstance(current, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if isinstance(current, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        kind = type(current[0]) if current else float
        return tuple(kind(v) for v in value)
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return str(value)


def set_value(cfg: RunConfig, key: str, value: Any) -> None:
    section, _, name = key.partition(".")
    if not name:
        if section != "seed":
            raise KeyError(f"unknown config key {key!r}")
        cfg.seed = int(value)
        return
    if section not in _SECTIONS:
        raise KeyError(f"unknown config section {section!r}")
    obj = getattr(cfg, section)
    if not hasattr(obj, name):
        raise KeyError(f"unknown config key {key!r}")
    setattr(obj, name, _coerce(getattr(obj, name), value))


def from_dict(d: dict[str, Any]) -> RunConfig:
    cfg = RunConfig()
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"section {key!r} must be a table")
            for name, v in value.items():
                set_value(cfg, f"{key}.{name}", v)
        else:
            set_value(cfg, key, value)
    return cfg


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path, "rb") as fh:
            cfg = from_dict(tomllib.load(fh))
    for key, value in (overrides or {}).items():
        set_value(cfg, key, value)
    return cfg


def dump_toml(cfg: RunConfig) -> str:
    """Render ``cfg`` as TOML (flat sections, scalar and list values only)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return json.dumps(v)
        return repr(v)

    d = cfg.to_dict()
    lines = [f"seed = {d.pop('seed')}"]
    for section, values in d.items():
        lines.append(f"\n[{section}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in values.items())
    return "\n".join(lines) + "\n"
