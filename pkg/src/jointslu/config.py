"""Run configuration: strict JSON <-> dataclasses, plus a stable config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .sluhead import SluHeadConfig

STAGE_KINDS = ("asr_pretrain", "asr_finetune_kt", "slu_adapt", "slu_adapt_kt")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    sizes: list[int] = field(default_factory=lambda: [500, 100, 100])
    noise: float = 0.1
    carrier_prob: float = 0.3
    frame_width: int = 16


@dataclass
class KtConfig:
    width: int = 32
    teacher: str = "synthetic"  # "synthetic" | "file"
    teacher_seed: int = 0
    teacher_file: str | None = None


@dataclass
class StagePlan:
    kind: str = "slu_adapt"
    lam: float = 0.5
    alpha: float = 1.0
    beta: float = 0.1
    tau: float = 0.07
    epochs: int = 30
    lr: float = 1e-3
    lr_schedule: str = "constant"  # "constant" | "cosine" (decays to 0 over the stage)
    batch_size: int = 8
    clip: float = 5.0
    seed: int = 0
    use_boe: bool = True
    use_cls: bool = True
    boe_teacher_forcing: bool = False
    eval_every: int = 0  # 0: evaluate after the last epoch only

    def __post_init__(self) -> None:
        if self.kind not in STAGE_KINDS:
            raise ConfigError(f"unknown stage kind {self.kind!r}; expected one of {STAGE_KINDS}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class PathsConfig:
    corpus: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    grammar: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sluhead: SluHeadConfig = field(default_factory=SluHeadConfig)
    kt: KtConfig = field(default_factory=KtConfig)
    stages: list[StagePlan] = field(default_factory=lambda: [StagePlan()])
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        hint = hints[name]
        origin = typing.get_origin(hint)
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}.{name}")
        elif origin is list and dataclasses.is_dataclass(typing.get_args(hint)[0]):
            kwargs[name] = [_build(typing.get_args(hint)[0], v, f"{where}.{name}[{i}]")
                            for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``override`` replace."""
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def toy_config(seed: int = 0, epochs: int = 30) -> RunConfig:
    """Desk model, default 500/100/100 corpus, one joint SCTC + transducer stage.

    The step size and cosine decay were calibrated once on the seed-0 corpus.
    """
    return RunConfig(seed=seed, stages=[StagePlan(kind="slu_adapt", lam=0.5, epochs=epochs, lr=3e-3,
                                                  lr_schedule="cosine", seed=seed)])
