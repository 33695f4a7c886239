"""Run configuration: dotted key=value files, STRM_ env overrides, CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..models import ModelConfig
from ..tasks.synthetic import SyntheticConfig

ENV_PREFIX = "STRM_"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    # "constant", "cosine", or "two-phase" (constant lr then cosine finetune)
    schedule: str = "two-phase"
    lr_max: float = 1e-5
    lr_min: float = 1e-7
    steps: int = 200
    finetune_steps: int = 100
    pretrain_clip_len: int = 5
    clip_len: int = 10
    grad_clip: float = 5.0
    # probability of writing the ground-truth mask into memory (VOS training only)
    teacher_forcing: float = 0.0
    checkpoint_every: int = 0
    log_every: int = 10


@dataclass
class DataConfig:
    n_train: int = 32
    n_eval: int = 8
    path: str = ""
    eval_seed: int = 1000
    observe: int = 10
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    precision: int = 32
    out: str = "runs/default"
    deterministic_eval: bool = True

    def validate(self) -> "RunConfig":
        # re-run dataclass checks after overrides
        self.model.__post_init__()
        self.data.synthetic.validate()
        if self.train.clip_len < 2 or self.train.pretrain_clip_len < 2:
            raise ConfigError("clip length must be at least 2")
        if self.model.task == "pred" and min(self.train.clip_len, self.train.pretrain_clip_len) < 4:
            raise ConfigError("prediction clips need at least 4 frames (3 context + 1 target)")
        if self.train.schedule not in ("constant", "cosine", "two-phase"):
            raise ConfigError(f"unknown lr schedule {self.train.schedule!r}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        return self

    @property
    def task(self) -> str:
        return self.model.task

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_ALIASES = {
    "memory.policy": "model.policy",
    "memory.fusion": "model.fusion",
    "memory.k_slots": "model.k_slots",
    "gumbel.tau": "model.tau",
    "run.seed": "seed",
    "run.precision": "precision",
    "run.out": "out",
    "run.task": "model.task",
    "task": "model.task",
    "paths.out": "out",
    "paths.data": "data.path",
    "flags.fusion": "model.fusion",
    "flags.deterministic_eval": "deterministic_eval",
    "flags.scale_logits": "model.scale_logits",
}


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        if not raw:
            return ()
        parts = [p for p in raw.replace(";", " ").split()]
        try:
            if key.endswith("occlusions"):
                return tuple(tuple(int(v) for v in p.split(",")) for p in parts)
            return tuple(type(current[0])(v) if current else float(v) for v in raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} as a comma-separated list") from exc
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from exc
    if current is None:
        for cast in (int, float):
            try:
                return cast(raw)
            except ValueError:
                pass
        return None if raw.lower() in ("none", "") else raw
    return raw


def set_key(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip().lower()
    key = _ALIASES.get(key, key)
    if key.startswith("data.") and key.split(".", 1)[1] in {f.name for f in dataclasses.fields(SyntheticConfig)}:
        key = "data.synthetic." + key.split(".", 1)[1]
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(obj, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, leaf, _coerce(raw, getattr(obj, leaf), key))


def parse_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip() + "."
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((section + k.strip(), v.strip()))
    return pairs


def env_overrides(environ=None) -> list[tuple[str, str]]:
    environ = os.environ if environ is None else environ
    out = []
    for k, v in sorted(environ.items()):
        if k.startswith(ENV_PREFIX):
            out.append((k[len(ENV_PREFIX) :].lower().replace("__", "."), v))
    return out


def load_config(path=None, overrides: list[str] | None = None, environ=None) -> RunConfig:
    """Defaults < config file < STRM_* environment < ``key=value`` overrides."""
    cfg = RunConfig()
    pairs: list[tuple[str, str]] = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        pairs += parse_text(p.read_text(encoding="utf-8"))
    pairs += env_overrides(environ)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        k, v = item.split("=", 1)
        pairs.append((k, v))
    # task first so task-dependent defaults resolve before other keys
    for k, v in sorted(pairs, key=lambda kv: _ALIASES.get(kv[0].lower(), kv[0].lower()) != "model.task"):
        set_key(cfg, k, v)
    if any(_ALIASES.get(k.lower(), k.lower()) == "model.task" for k, _ in pairs):
        _retask(cfg, [k for k, _ in pairs])
    return cfg.validate()


def _retask(cfg: RunConfig, keys: list[str]) -> None:
    # task-dependent defaults not explicitly set
    explicit = {_ALIASES.get(k.lower(), k.lower()) for k in keys}
    if cfg.model.task == "pred":
        for name, val in (("enc_blocks", 6), ("k_slots", 5)):
            if f"model.{name}" not in explicit:
                setattr(cfg.model, name, val)
        if "model.dec_blocks" not in explicit:
            cfg.model.dec_blocks = cfg.model.enc_blocks


def dump_config(cfg: RunConfig) -> str:
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                walk(val, f"{prefix}{f.name}.")
            else:
                if isinstance(val, tuple):
                    if val and isinstance(val[0], tuple):
                        val = " ".join(",".join(str(x) for x in v) for v in val)
                    else:
                        val = ",".join(str(x) for x in val)
                lines.append(f"{prefix}{f.name}={'' if val is None else val}")

    walk(cfg, "")
    return "\n".join(lines) + "\n"
