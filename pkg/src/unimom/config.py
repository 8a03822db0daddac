"""Run configuration: one JSON file drives a whole backtest.

Flags given on the command line override file values; unknown keys in the
file are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


def _default_domains() -> dict:
    return {
        "lstm_layers": [1, 2, 3],
        "lstm_hidden": [64, 126, 252, 512],
        "n_experts": [3, 6, 9, 12],
        "task_layers": [2, 3, 4],
        "task_hidden": [64, 126, 252, 512],
    }


@dataclass
class RunConfig:
    seed: int = 0
    grid_budget: int = 24
    full_grid: bool = False
    grid_domains: dict = field(default_factory=_default_domains)
    enforce_grid_domains: bool = True
    sequence_length: int = 63
    batch_days: int = 126
    tau: float = 0.01
    symmetric_soft_cap: bool = False
    loss_variant: str = "softcap"
    cost_rate: float = 0.0003
    sigma_target: float = 0.15
    tsmom_vol_window: int = 63
    first_train_years: int = 10
    val_fraction: float = 0.2
    max_epochs: int = 20
    patience: int = 5
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    mvo_min_history: int = 252
    mvo_rebalance_days: int = 21
    mvo_resolution: float = 0.01
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.cost_rate < 0:
            raise ValueError("cost_rate must be non-negative")
        if self.grid_budget < 1:
            raise ValueError("grid_budget must be at least 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.loss_variant not in ("softcap", "sharpe"):
            raise ValueError(f"unknown loss_variant {self.loss_variant!r}")
        if self.batch_days < 2:
            raise ValueError("batch_days must be at least 2")
        if self.sequence_length < 1 or self.first_train_years < 1:
            raise ValueError("sequence_length and first_train_years must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        expected = set(_default_domains())
        if set(self.grid_domains) != expected:
            raise ValueError(f"grid_domains must have keys {sorted(expected)}")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def override(self, **kwargs) -> "RunConfig":
        """A copy with the given (non-None) fields replaced."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
