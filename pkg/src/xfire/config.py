"""Run configuration: scenario, windowing and per-model hyperparameters."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .traffic import ScenarioConfig

PROFILES = ("desk", "paper")


def _model_defaults(profile: str) -> dict:
    desk = profile == "desk"
    return {
        "ae": {"hidden_sizes": [390, 370, 390], "learning_rate": 1e-3, "batch_size": 64,
               "max_epochs": 20 if desk else 100, "patience": 5},
        "rf": {"n_trees": 100, "max_features": "sqrt", "min_samples_leaf": 1, "max_depth": None,
               "bootstrap": True, "max_samples": 20000 if desk else None},
        "cnn": {"learning_rate": 3e-6, "batch_size": 32, "max_epochs": 40 if desk else 200, "patience": 10},
        "lstm": {"hidden_sizes": [64, 64], "learning_rate": 1e-3, "batch_size": 32, "max_epochs": 100,
                 "patience": 10, "forget_bias": 1.0},
    }


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    split_seed: int | None = None
    windows: dict = field(default_factory=lambda: {
        "cnn_train_stride": 5, "cnn_eval_stride": 1, "ae_stride": 1, "lstm_train_stride": 16,
    })
    models: dict = field(default_factory=lambda: _model_defaults("desk"))
    buffer_capacity: int = 7
    profile: str = "desk"

    @classmethod
    def for_profile(cls, profile: str = "desk", **scenario_overrides) -> "RunConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
        n = 1000 if profile == "desk" else 6000
        scenario = ScenarioConfig(**{"n_instances": n, **scenario_overrides})
        return cls(scenario=scenario, models=_model_defaults(profile), profile=profile)

    @property
    def effective_split_seed(self) -> int:
        return self.scenario.master_seed if self.split_seed is None else self.split_seed

    def model_params(self, kind: str) -> dict:
        params = copy.deepcopy(self.models[kind])
        for key in ("hidden_sizes",):
            if key in params:
                params[key] = tuple(params[key])
        params.setdefault("random_state", self.scenario.master_seed)
        return params

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "scenario": self.scenario.to_dict(),
            "split_seed": self.split_seed,
            "windows": dict(self.windows),
            "models": copy.deepcopy(self.models),
            "buffer_capacity": self.buffer_capacity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls.for_profile(d.get("profile", "desk"))
        scenario = {**base.scenario.to_dict(), **d.get("scenario", {})}
        models = base.models
        for kind, params in d.get("models", {}).items():
            models.setdefault(kind, {}).update(params)
        return cls(
            scenario=ScenarioConfig.from_dict(scenario),
            split_seed=d.get("split_seed"),
            windows={**base.windows, **d.get("windows", {})},
            models=models,
            buffer_capacity=d.get("buffer_capacity", base.buffer_capacity),
            profile=d.get("profile", "desk"),
        )

    def save(self, path) -> None:
        from . import __version__

        d = {**self.to_dict(), "xfire_version": __version__, "numpy_version": np.__version__}
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
