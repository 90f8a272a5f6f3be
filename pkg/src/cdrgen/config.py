"""Run configuration and seed-stream plumbing.

A run is described by one JSON document. Loading applies defaults for
absent keys, validates referenced paths, and records the fully resolved
configuration so it can be written next to the run outputs. The master
seed expands into named substreams so each consumer of randomness can be
pinned independently in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import ScheduleConfig
from .network import ModelConfig

STREAM_NAMES = ("data", "init", "diffusion", "sampling")


class ConfigError(ValueError):
    """Raised when a run configuration cannot be used."""


def seed_streams(master_seed: int,
                 names: tuple[str, ...] = STREAM_NAMES
                 ) -> dict[str, np.random.Generator]:
    """Expand one master seed into independent named generators.

    Streams are spawned in the fixed order of ``names``, so the same
    master seed always yields the same stream for a given name no matter
    which subset the caller uses.
    """
    base = np.random.SeedSequence(master_seed)
    children = base.spawn(len(names))
    return {name: np.random.default_rng(child)
            for name, child in zip(names, children)}


@dataclass
class OptimizerSettings:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_steps: int = 1000
    t_batch: int = 1
    lr_final_fraction: float = 1.0

    def validate(self) -> None:
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.train_steps < 1:
            raise ConfigError("train_steps must be at least 1")
        if self.t_batch < 1:
            raise ConfigError("t_batch must be at least 1")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise ConfigError("lr_final_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, payload: dict) -> "OptimizerSettings":
        return cls(**payload)


@dataclass
class RunConfig:
    """Everything one command needs, resolvable from a single JSON file."""

    manifest: str = ""
    out_dir: str = "runs/default"
    seed: int = 0
    checkpoint_every: int = 500
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def validate(self, require_manifest: bool = True) -> None:
        if require_manifest:
            if not self.manifest:
                raise ConfigError("manifest path is required")
            if not Path(self.manifest).exists():
                raise ConfigError(f"manifest not found: {self.manifest}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        self.model.validate()
        self.schedule.validate()
        self.optimizer.validate()
        if self.model.total_steps != self.schedule.total_steps:
            raise ConfigError(
                "model and schedule disagree on total_steps "
                f"({self.model.total_steps} vs {self.schedule.total_steps})"
            )

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "optimizer": self.optimizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        payload = dict(payload)
        known = {"manifest", "out_dir", "seed", "checkpoint_every",
                 "model", "schedule", "optimizer"}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model = ModelConfig.from_dict(payload["model"]) \
            if "model" in payload else ModelConfig()
        schedule = ScheduleConfig.from_dict(payload["schedule"]) \
            if "schedule" in payload else ScheduleConfig()
        optimizer = OptimizerSettings.from_dict(payload["optimizer"]) \
            if "optimizer" in payload else OptimizerSettings()
        return cls(
            manifest=payload.get("manifest", ""),
            out_dir=payload.get("out_dir", "runs/default"),
            seed=int(payload.get("seed", 0)),
            checkpoint_every=int(payload.get("checkpoint_every", 500)),
            model=model,
            schedule=schedule,
            optimizer=optimizer,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(payload)

    def dump(self, path) -> None:
        """Write the fully resolved configuration, defaults included."""
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
