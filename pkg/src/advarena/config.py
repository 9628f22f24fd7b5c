"""Arena configuration: a flat key-value text file, one `key value` pair
per line, with every run-affecting knob in one place. A short hash of the
canonical serialization is stamped into round reports so a leaderboard can
always be traced back to the exact configuration that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ArenaConfig", "load_config", "save_config"]


@dataclass(frozen=True)
class ArenaConfig:
    seed: int = 7
    classes: int = 10
    height: int = 8
    width: int = 8
    channels: int = 1
    # split sizes are totals, spread evenly over classes
    train_total: int = 200
    validation_total: int = 50
    round_total: int = 50
    final_total: int = 50
    query_budget: int = 1000
    query_timeout: float = 0.1
    sample_deadline: float = 90.0
    refine_steps: int = 12
    boundary_iterations: int = 200
    pgd_steps: int = 10
    train_epochs: int = 40
    learning_rate: float = 0.5
    adv_epsilon: float = 0.5
    noise_sigma: float = 0.1
    stage_start: int = 4
    top_pool: int = 10
    top_k: int = 5
    continuous_samples: int = 20
    rate_limit_hours: float = 24.0
    workers: int = 1

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        for name in ("train_total", "validation_total", "round_total",
                     "final_total"):
            total = getattr(self, name)
            if total % self.classes:
                raise ValueError(
                    f"{name}={total} not divisible by classes={self.classes}"
                )
        if self.top_k > self.top_pool:
            raise ValueError("top_k cannot exceed top_pool")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def per_class(self, total: int) -> int:
        return total // self.classes

    def serialize(self) -> str:
        lines = []
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            lines.append(f"{field.name} {value!r}"
                         if isinstance(value, str) else
                         f"{field.name} {value}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:12]


def save_config(config: ArenaConfig, path: Path) -> None:
    Path(path).write_text(config.serialize())


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def load_config(path: Path, overrides: dict | None = None) -> ArenaConfig:
    """Read a config file; unknown keys are an error, missing keys keep
    their defaults. `overrides` (already-typed values) win over the file."""
    fields = {f.name: f for f in dataclasses.fields(ArenaConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            key, raw = line.split(None, 1)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected 'key value'")
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(fields[key], raw)
    if overrides:
        values.update(overrides)
    return ArenaConfig(**values)
