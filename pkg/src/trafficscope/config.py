"""Pipeline configuration with centralized defaults.

A config is loaded from JSON, overridden by CLI flags, validated before any
stage runs, and serialized into the output directory so every run is
reproducible from its artifacts alone.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from typing import Mapping

from .impact import SubgraphParams
from .ioutil import sha256_obj
from .structdeps import DependencyParams
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    graph_path: str = "graph.json"
    traffic_path: str = "traffic.csv"
    events_path: str = "events.json"
    lenient: bool = False
    min_samples: int = 4
    train_from: dt.date | None = None
    train_to: dt.date | None = None
    subgraph: SubgraphParams = field(default_factory=SubgraphParams)
    tau: float = 0.5
    knn_k: int = 3
    theta_overlap: float = 0.2
    deps: DependencyParams = field(default_factory=DependencyParams)
    as_of: dt.datetime | None = None  # None: end of ingested data
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 < self.theta_overlap <= 1.0:
            raise ConfigError(f"theta_overlap must be in (0, 1], got {self.theta_overlap}")
        if self.min_samples < 1:
            raise ConfigError("min_samples must be >= 1")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.train_from and self.train_to and self.train_to < self.train_from:
            raise ConfigError("train_to precedes train_from")
        self.synth.validate()

    def to_dict(self) -> dict:
        return {
            "graph_path": self.graph_path,
            "traffic_path": self.traffic_path,
            "events_path": self.events_path,
            "lenient": self.lenient,
            "min_samples": self.min_samples,
            "train_from": self.train_from.isoformat() if self.train_from else None,
            "train_to": self.train_to.isoformat() if self.train_to else None,
            "subgraph": {
                "max_radius_m": self.subgraph.max_radius_m,
                "seed_radius_m": self.subgraph.seed_radius_m,
                "window_before_min": self.subgraph.window_before_min,
                "window_after_min": self.subgraph.window_after_min,
            },
            "tau": self.tau,
            "knn_k": self.knn_k,
            "theta_overlap": self.theta_overlap,
            "deps": {
                "delta0_m": self.deps.delta0_m,
                "d_max_m": self.deps.d_max_m,
                "score_min": self.deps.score_min,
            },
            "as_of": self.as_of.strftime("%Y-%m-%dT%H:%M") if self.as_of else None,
            "synth": self.synth.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        base = cls()
        unknown = set(doc) - set(base.to_dict())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key, value in doc.items():
            if value is None:
                continue
            if key in ("train_from", "train_to"):
                kwargs[key] = dt.date.fromisoformat(value)
            elif key == "as_of":
                kwargs[key] = dt.datetime.fromisoformat(value)
            elif key == "subgraph":
                kwargs[key] = SubgraphParams(**value)
            elif key == "deps":
                kwargs[key] = DependencyParams(**value)
            elif key == "synth":
                kwargs[key] = SynthConfig.from_dict(value)
            else:
                kwargs[key] = value
        return replace(base, **kwargs)

    def fingerprint(self) -> str:
        return sha256_obj(self.to_dict())
