"""Exemplar-based prediction of event impact.

A distance-weighted k-nearest-neighbour model over event metadata only
(venue, category, weekday, start slot, capacity), so predictions need no
traffic data from the event period. Training stores the historical exemplars
verbatim; the model serializes to JSON and reloads to identical predictions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .impact import ImpactCurve
from .ingest import Event, Venue
from .timegrid import SLOTS_PER_DAY


class PredictError(ValueError):
    pass


@dataclass(frozen=True)
class EventFeatures:
    venue_id: str
    category: str
    weekday: int
    slot: int
    capacity: int

    @classmethod
    def from_event(cls, event: Event, venue: Venue | None) -> "EventFeatures":
        capacity = venue.capacity if venue is not None and venue.capacity is not None else 0
        return cls(
            venue_id=event.venue_id,
            category=event.category,
            weekday=event.start.weekday,
            slot=event.start.slot,
            capacity=capacity,
        )

    def to_json_dict(self) -> dict:
        return {
            "venue_id": self.venue_id,
            "category": self.category,
            "weekday": self.weekday,
            "slot": self.slot,
            "capacity": self.capacity,
        }


@dataclass(frozen=True)
class FeatureWeights:
    venue: float = 2.0
    category: float = 1.0
    weekday: float = 0.5
    slot: float = 0.5
    capacity: float = 0.25

    def to_json_dict(self) -> dict:
        return {
            "venue": self.venue,
            "category": self.category,
            "weekday": self.weekday,
            "slot": self.slot,
            "capacity": self.capacity,
        }


@dataclass(frozen=True)
class Exemplar:
    event_id: str
    features: EventFeatures
    radius_m: float
    curve: tuple[tuple[int, float], ...]


def _circular(a: int, b: int, period: int) -> int:
    d = abs(a - b) % period
    return min(d, period - d)


class ImpactPredictor:
    """k-NN over stored exemplars with a fixed mixed categorical/circular metric."""

    def __init__(
        self,
        exemplars: Sequence[Exemplar],
        k: int = 3,
        weights: FeatureWeights = FeatureWeights(),
    ):
        if not exemplars:
            raise PredictError("training requires at least one exemplar")
        self.exemplars = sorted(exemplars, key=lambda e: e.event_id)
        self.k = max(1, min(k, len(self.exemplars)))
        self.weights = weights
        self.max_capacity = max(e.features.capacity for e in self.exemplars)

    # ----------------------------------------------------------- training

    @classmethod
    def train(
        cls,
        records: Sequence[tuple[Event, Venue | None, float, ImpactCurve | None]],
        k: int = 3,
        weights: FeatureWeights = FeatureWeights(),
    ) -> "ImpactPredictor":
        """Build from (event, venue, spatial radius, temporal curve) records."""
        exemplars = [
            Exemplar(
                event_id=event.id,
                features=EventFeatures.from_event(event, venue),
                radius_m=radius,
                curve=curve.samples if curve is not None else (),
            )
            for event, venue, radius, curve in records
        ]
        return cls(exemplars, k=k, weights=weights)

    # ----------------------------------------------------------- distance

    def feature_distance(self, a: EventFeatures, b: EventFeatures) -> float:
        w = self.weights
        d = 0.0
        if a.venue_id != b.venue_id:
            d += w.venue
        if a.category != b.category:
            d += w.category
        d += w.weekday * _circular(a.weekday, b.weekday, 7) / 7.0
        d += w.slot * _circular(a.slot, b.slot, SLOTS_PER_DAY) / SLOTS_PER_DAY
        if self.max_capacity > 0:
            d += w.capacity * abs(a.capacity - b.capacity) / self.max_capacity
        return d

    def neighbors(self, features: EventFeatures) -> list[tuple[float, Exemplar]]:
        scored = [(self.feature_distance(features, e.features), e) for e in self.exemplars]
        scored.sort(key=lambda pair: (pair[0], pair[1].event_id))
        return scored[: self.k]

    # --------------------------------------------------------- prediction

    def predict_spatial(self, event: Event, venue: Venue | None) -> float:
        """Distance-weighted mean of the k nearest exemplars' radii."""
        neighbors = self.neighbors(EventFeatures.from_event(event, venue))
        total = sum(1.0 / (d + 1e-6) for d, _ in neighbors)
        return sum(e.radius_m / (d + 1e-6) for d, e in neighbors) / total

    def predict_temporal(self, event: Event, venue: Venue | None) -> ImpactCurve:
        """Per-offset distance-weighted mean of the neighbor curves.

        A neighbor missing an offset is excluded at that offset only.
        """
        neighbors = self.neighbors(EventFeatures.from_event(event, venue))
        by_offset: dict[int, list[tuple[float, float]]] = {}
        for d, exemplar in neighbors:
            for offset, value in exemplar.curve:
                by_offset.setdefault(offset, []).append((1.0 / (d + 1e-6), value))
        samples = []
        for offset in sorted(by_offset):
            pairs = by_offset[offset]
            total = sum(w for w, _ in pairs)
            samples.append((offset, sum(w * v for w, v in pairs) / total))
        return ImpactCurve(ref_id=event.id, samples=tuple(samples))

    # ------------------------------------------------------ serialization

    def fingerprint(self) -> str:
        canonical = json.dumps(self._payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def _payload(self) -> dict:
        return {
            "k": self.k,
            "weights": self.weights.to_json_dict(),
            "exemplars": [
                {
                    "event_id": e.event_id,
                    "features": e.features.to_json_dict(),
                    "radius_m": e.radius_m,
                    "curve": [[o, v] for o, v in e.curve],
                }
                for e in self.exemplars
            ],
        }

    def to_json_dict(self) -> dict:
        doc = {"format_version": 1}
        doc.update(self._payload())
        doc["max_capacity"] = self.max_capacity
        doc["fingerprint"] = self.fingerprint()
        return doc

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "ImpactPredictor":
        exemplars = [
            Exemplar(
                event_id=raw["event_id"],
                features=EventFeatures(**raw["features"]),
                radius_m=float(raw["radius_m"]),
                curve=tuple((int(o), float(v)) for o, v in raw["curve"]),
            )
            for raw in doc["exemplars"]
        ]
        weights = FeatureWeights(**doc["weights"])
        return cls(exemplars, k=int(doc["k"]), weights=weights)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ImpactPredictor":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))
