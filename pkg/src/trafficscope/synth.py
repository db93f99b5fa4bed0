"""Synthetic scenario generator.

Produces a rectangular grid road network, a deterministic baseline traffic
matrix with a rush-hour shape plus bounded uniform noise, a venue/event
catalog, and venue-centred congestion injections (speed multiplied by a
factor on all units within a radius during a window relative to each event
start). Everything is a pure function of the config, so a fixed seed yields
byte-identical outputs.

Ground truth for each injected event (the exact unit set and window) is
returned so recovery quality of the analytics can be measured.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint, geo_distance
from .graph import RoadGraph, Unit
from .ingest import Catalog, Event, TrafficStore, Venue
from .timegrid import SLOTS_PER_DAY, TimeBin

MIN_SPEED_KMH = 3.0

# interior grid positions (fractions of the grid extent) venues are assigned to
_VENUE_SPOTS = [
    (0.25, 0.25),
    (0.75, 0.75),
    (0.25, 0.75),
    (0.75, 0.25),
    (0.5, 0.5),
    (0.15, 0.55),
    (0.85, 0.45),
    (0.5, 0.15),
]

_CATEGORIES = ("football", "concert", "fair")


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionSpec:
    """Congestion injected around a venue: speed *= multiplier inside the radius
    during [start + offset_start_min, start + offset_end_min)."""

    radius_m: float = 1000.0
    multiplier: float = 0.5
    offset_start_min: int = 0
    offset_end_min: int = 60


@dataclass(frozen=True)
class SynthConfig:
    grid_nx: int = 12
    grid_ny: int = 12
    spacing_m: float = 500.0
    origin_lon: float = 9.70
    origin_lat: float = 52.35
    bidirectional: bool = True
    speed_limit_kmh: float = 50.0
    start_date: dt.date = dt.date(2017, 10, 2)
    n_days: int = 28
    noise_kmh: float = 2.5
    n_venues: int = 4
    n_events: int = 12
    n_future_events: int = 3
    injection: InjectionSpec = field(default_factory=InjectionSpec)
    seed: int = 1234

    def validate(self) -> None:
        if self.grid_nx < 2 or self.grid_ny < 2:
            raise SynthConfigError("grid must be at least 2x2")
        if self.spacing_m <= 0:
            raise SynthConfigError("spacing_m must be > 0")
        if self.n_days % 7 != 0 or self.n_days <= 0:
            raise SynthConfigError("n_days must be a positive multiple of 7")
        if not 0 < self.injection.multiplier <= 1:
            raise SynthConfigError("injection multiplier must be in (0, 1]")
        if self.injection.offset_end_min <= self.injection.offset_start_min:
            raise SynthConfigError("injection window must be non-empty")
        if self.injection.offset_start_min % 15 or self.injection.offset_end_min % 15:
            raise SynthConfigError("injection offsets must be multiples of 15 minutes")
        if self.n_venues < 1 or self.n_venues > len(_VENUE_SPOTS):
            raise SynthConfigError(f"n_venues must be in [1, {len(_VENUE_SPOTS)}]")
        if self.n_events < 0 or self.n_future_events < 0:
            raise SynthConfigError("event counts must be >= 0")
        if self.speed_limit_kmh <= 0:
            raise SynthConfigError("speed_limit_kmh must be > 0")
        if self.noise_kmh < 0:
            raise SynthConfigError("noise_kmh must be >= 0")

    def to_dict(self) -> dict:
        return {
            "grid_nx": self.grid_nx,
            "grid_ny": self.grid_ny,
            "spacing_m": self.spacing_m,
            "origin_lon": self.origin_lon,
            "origin_lat": self.origin_lat,
            "bidirectional": self.bidirectional,
            "speed_limit_kmh": self.speed_limit_kmh,
            "start_date": self.start_date.isoformat(),
            "n_days": self.n_days,
            "noise_kmh": self.noise_kmh,
            "n_venues": self.n_venues,
            "n_events": self.n_events,
            "n_future_events": self.n_future_events,
            "injection": {
                "radius_m": self.injection.radius_m,
                "multiplier": self.injection.multiplier,
                "offset_start_min": self.injection.offset_start_min,
                "offset_end_min": self.injection.offset_end_min,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthConfig":
        cfg = cls()
        known = cfg.to_dict()
        unknown = set(doc) - set(known)
        if unknown:
            raise SynthConfigError(f"unknown synth config keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key, value in doc.items():
            if key == "start_date":
                kwargs[key] = dt.date.fromisoformat(value)
            elif key == "injection":
                kwargs[key] = InjectionSpec(**value)
            else:
                kwargs[key] = value
        return replace(cfg, **kwargs)


@dataclass(frozen=True)
class EventTruth:
    """What was actually injected for one event."""

    event_id: str
    unit_ids: tuple[str, ...]
    offsets_min: tuple[int, ...]
    radius_m: float

    def to_json_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "unit_ids": list(self.unit_ids),
            "offsets_min": list(self.offsets_min),
            "radius_m": self.radius_m,
        }


@dataclass
class SynthResult:
    graph: RoadGraph
    traffic: TrafficStore
    catalog: Catalog
    truth: dict[str, EventTruth]


def default_profile() -> np.ndarray:
    """Baseline load by slot: flat 0.05 with smooth morning/evening peaks of 0.2."""
    slots = np.arange(SLOTS_PER_DAY)
    profile = np.full(SLOTS_PER_DAY, 0.05)
    for center, width, height in ((33, 6.0, 0.15), (70, 7.0, 0.15)):
        profile += height * np.exp(-0.5 * ((slots - center) / width) ** 2)
    return profile


def build_grid_graph(cfg: SynthConfig) -> RoadGraph:
    """Rectangular lattice; one unit per edge direction when bidirectional."""
    lat_step = cfg.spacing_m / (EARTH_RADIUS_M * math.pi / 180.0)
    lon_step = lat_step / math.cos(math.radians(cfg.origin_lat))
    nodes: dict[str, GeoPoint] = {}
    for ix in range(cfg.grid_nx):
        for iy in range(cfg.grid_ny):
            nodes[f"n{ix}-{iy}"] = GeoPoint(cfg.origin_lon + ix * lon_step, cfg.origin_lat + iy * lat_step)

    units: list[Unit] = []

    def add_unit(a: str, b: str, tag: str) -> None:
        length = geo_distance(nodes[a], nodes[b])
        units.append(
            Unit(
                id=f"u{tag}",
                from_node=a,
                to_node=b,
                speed_limit_kmh=cfg.speed_limit_kmh,
                length_m=length,
                geometry=(nodes[a], nodes[b]),
            )
        )

    for ix in range(cfg.grid_nx):
        for iy in range(cfg.grid_ny):
            if ix + 1 < cfg.grid_nx:
                add_unit(f"n{ix}-{iy}", f"n{ix + 1}-{iy}", f"{ix}-{iy}E")
                if cfg.bidirectional:
                    add_unit(f"n{ix + 1}-{iy}", f"n{ix}-{iy}", f"{ix}-{iy}W")
            if iy + 1 < cfg.grid_ny:
                add_unit(f"n{ix}-{iy}", f"n{ix}-{iy + 1}", f"{ix}-{iy}N")
                if cfg.bidirectional:
                    add_unit(f"n{ix}-{iy + 1}", f"n{ix}-{iy}", f"{ix}-{iy}S")
    return RoadGraph(nodes, units)


def _place_venues(cfg: SynthConfig, graph: RoadGraph) -> dict[str, Venue]:
    venues = {}
    for i in range(cfg.n_venues):
        fx, fy = _VENUE_SPOTS[i]
        ix = round(fx * (cfg.grid_nx - 1))
        iy = round(fy * (cfg.grid_ny - 1))
        location = graph.nodes[f"n{ix}-{iy}"]
        vid = f"v{i}"
        venues[vid] = Venue(id=vid, name=f"Venue {i}", location=location, capacity=1000 + 500 * i)
    return venues


def _schedule_events(cfg: SynthConfig, venues: dict[str, Venue]) -> list[Event]:
    """Deterministic scatter: per venue, events land on distinct weekdays so a
    (unit, weekday, slot) group never accumulates more than one injected sample.
    """
    n_weeks = cfg.n_days // 7
    events = []
    for i in range(cfg.n_events):
        venue_idx = i % cfg.n_venues
        seq = i // cfg.n_venues
        week = (2 * seq + venue_idx) % n_weeks
        weekday = (venue_idx + 2 * seq) % 7
        slot = 68 + 4 * ((venue_idx + seq) % 3)  # 17:00 / 18:00 / 19:00
        day = cfg.start_date + dt.timedelta(days=7 * week + (weekday - cfg.start_date.weekday()) % 7)
        category = _CATEGORIES[i % len(_CATEGORIES)]
        events.append(
            Event(
                id=f"ev{i:03d}",
                venue_id=f"v{venue_idx}",
                name=f"{category.capitalize()} #{i} at Venue {venue_idx}",
                category=category,
                start=TimeBin(day, slot),
            )
        )
    for k in range(cfg.n_future_events):
        venue_idx = k % cfg.n_venues
        day = cfg.start_date + dt.timedelta(days=cfg.n_days + 1 + 2 * k)
        category = _CATEGORIES[k % len(_CATEGORIES)]
        events.append(
            Event(
                id=f"fv{k:03d}",
                venue_id=f"v{venue_idx}",
                name=f"Upcoming {category} #{k} at Venue {venue_idx}",
                category=category,
                start=TimeBin(day, 72),
            )
        )
    return events


def generate(cfg: SynthConfig) -> SynthResult:
    cfg.validate()
    graph = build_grid_graph(cfg)
    venues = _place_venues(cfg, graph)
    events = _schedule_events(cfg, venues)
    catalog = Catalog(venues, events)

    unit_ids = sorted(graph.units)
    n_units = len(unit_ids)
    n_bins = cfg.n_days * SLOTS_PER_DAY
    profile = default_profile()
    base_speed = cfg.speed_limit_kmh * (1.0 - profile)
    speeds = np.tile(base_speed, (n_units, cfg.n_days))

    rng = np.random.default_rng(cfg.seed)
    if cfg.noise_kmh > 0:
        speeds = speeds + rng.uniform(-cfg.noise_kmh, cfg.noise_kmh, size=(n_units, n_bins))

    ref_lon = np.array([graph.reference_point(uid).lon for uid in unit_ids])
    ref_lat = np.array([graph.reference_point(uid).lat for uid in unit_ids])

    first_index = TimeBin(cfg.start_date, 0).index()
    spec = cfg.injection
    offsets = tuple(range(spec.offset_start_min, spec.offset_end_min, 15))
    truth: dict[str, EventTruth] = {}
    for event in events:
        venue = venues[event.venue_id]
        dists = _haversine_vec(ref_lon, ref_lat, venue.location.lon, venue.location.lat)
        in_radius = np.flatnonzero(dists <= spec.radius_m)
        cols = []
        for off in offsets:
            col = event.start.index() + off // 15 - first_index
            if 0 <= col < n_bins:
                cols.append(col)
        if cols:
            speeds[np.ix_(in_radius, cols)] *= spec.multiplier
        truth[event.id] = EventTruth(
            event_id=event.id,
            unit_ids=tuple(unit_ids[i] for i in in_radius),
            offsets_min=offsets,
            radius_m=float(dists[in_radius].max()) if in_radius.size else 0.0,
        )

    np.clip(speeds, MIN_SPEED_KMH, None, out=speeds)
    store = TrafficStore(unit_ids, cfg.start_date, speeds)
    return SynthResult(graph=graph, traffic=store, catalog=catalog, truth=truth)


def _haversine_vec(lon: np.ndarray, lat: np.ndarray, lon0: float, lat0: float) -> np.ndarray:
    phi1 = np.radians(lat)
    phi0 = math.radians(lat0)
    dphi = phi1 - phi0
    dlam = np.radians(lon - lon0)
    s = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * math.cos(phi0) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(s)))


def write_traffic_csv(store: TrafficStore, path) -> None:
    """Traffic CSV with fixed 3-decimal speeds so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("unit_id,timestamp,speed_kmh\n")
        for unit_id, bin_, speed in store.records():
            fh.write(f"{unit_id},{bin_.isoformat()},{speed:.3f}\n")
