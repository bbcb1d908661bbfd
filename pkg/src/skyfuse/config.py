"""Run configuration: defaults < JSON config file < command-line flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .errors import ArtifactIOError, FormatError, ParameterError
from .model import TINY, ModelConfig
from .rng import stage_seed
from .training import OptimizerConfig

PRESETS = {"full": ModelConfig(), "tiny": TINY}


@dataclass
class RunConfig:
    """Everything a command needs; a run is reproducible from this alone."""

    command: str = ""
    input: str = ""
    data: str = ""
    checkpoint: str = ""
    out: str = ""
    seed: int = 0
    per_class: int = 8
    replication_target: int = 200
    split: Tuple[float, float, float] = (0.55, 0.25, 0.20)
    video_cap: int = 10
    bins: int = 100
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 100
    batch_size: int = 16
    max_steps: Optional[int] = None
    scheduler_patience: int = 5
    scheduler_factor: float = 0.5
    stop_patience: int = 20

    def stage(self, name: str) -> int:
        """Per-stage seed derived from the global seed."""
        return stage_seed(self.seed, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "model" in kw:
            m = kw["model"]
            if isinstance(m, str):
                if m not in PRESETS:
                    raise ParameterError(f"unknown model preset {m!r}")
                kw["model"] = PRESETS[m]
            else:
                kw["model"] = replace(PRESETS["full"], **m)
        if "optimizer" in kw:
            kw["optimizer"] = OptimizerConfig(**kw["optimizer"])
        if "split" in kw:
            kw["split"] = tuple(float(v) for v in kw["split"])
        return cls(**kw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    try:
        return RunConfig.from_dict(data)
    except TypeError as e:
        raise FormatError(f"{path}: {e}") from e


def parse_split(text: str) -> Tuple[float, float, float]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ParameterError(f"--split expects three comma-separated fractions, got {text!r}") from None
    if len(parts) != 3:
        raise ParameterError(f"--split expects three fractions, got {len(parts)}")
    return parts
