"""Parsers for traffic speed records and the venue/event catalog.

The traffic CSV has the header ``unit_id,timestamp,speed_kmh`` with ISO-8601
timestamps. Records are snapped down to the 15-minute grid, duplicates for the
same (unit, bin) are averaged, and records referencing unknown units are
dropped and counted. Missing (unit, bin) observations stay absent; nothing is
imputed.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .geo import GeoPoint
from .graph import RoadGraph
from .timegrid import SLOTS_PER_DAY, TimeBin, parse_timestamp

TRAFFIC_COLUMNS = ("unit_id", "timestamp", "speed_kmh")


class IngestError(ValueError):
    """Raised for malformed input files (strict mode) and catalog violations."""


@dataclass
class IngestReport:
    rows_read: int = 0
    kept: int = 0
    dropped_unknown_unit: int = 0
    deduplicated: int = 0
    malformed: int = 0
    unknown_units: set[str] = field(default_factory=set)

    def to_json_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "kept": self.kept,
            "dropped_unknown_unit": self.dropped_unknown_unit,
            "deduplicated": self.deduplicated,
            "malformed": self.malformed,
            "unknown_units": sorted(self.unknown_units),
        }


class TrafficStore:
    """Immutable per-unit speed matrix on the 15-minute grid.

    Rows are units (sorted by id), columns are consecutive bins covering whole
    days from `start_day`; absent observations are NaN.
    """

    def __init__(self, unit_ids: Sequence[str], start_day: dt.date, speeds: np.ndarray):
        if speeds.ndim != 2 or speeds.shape[0] != len(unit_ids):
            raise ValueError("speeds must be (n_units, n_bins)")
        if speeds.shape[1] % SLOTS_PER_DAY != 0:
            raise ValueError("speeds must cover whole days")
        self.unit_ids: list[str] = sorted(unit_ids)
        if self.unit_ids != list(unit_ids):
            raise ValueError("unit_ids must be sorted")
        self._index = {uid: i for i, uid in enumerate(self.unit_ids)}
        self.start_day = start_day
        self.speeds = speeds
        self.speeds.setflags(write=False)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_bins(self) -> int:
        return self.speeds.shape[1]

    @property
    def n_days(self) -> int:
        return self.n_bins // SLOTS_PER_DAY

    @property
    def n_observations(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.speeds)))

    def first_bin(self) -> TimeBin:
        return TimeBin(self.start_day, 0)

    def last_bin(self) -> TimeBin:
        return TimeBin.from_index(self.first_bin().index() + self.n_bins - 1)

    def column_of(self, bin_: TimeBin) -> int | None:
        col = bin_.index() - self.first_bin().index()
        return col if 0 <= col < self.n_bins else None

    def bin_of_column(self, col: int) -> TimeBin:
        return TimeBin.from_index(self.first_bin().index() + col)

    def unit_row(self, unit_id: str) -> np.ndarray:
        return self.speeds[self._index[unit_id]]

    def has_unit(self, unit_id: str) -> bool:
        return unit_id in self._index

    def speed(self, unit_id: str, bin_: TimeBin) -> float | None:
        col = self.column_of(bin_)
        if col is None:
            return None
        value = self.speeds[self._index[unit_id], col]
        return None if np.isnan(value) else float(value)

    def records(self) -> Iterator[tuple[str, TimeBin, float]]:
        first_index = self.first_bin().index()
        rows, cols = np.nonzero(~np.isnan(self.speeds))
        for r, c in zip(rows.tolist(), cols.tolist()):
            yield self.unit_ids[r], TimeBin.from_index(first_index + c), float(self.speeds[r, c])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrafficStore):
            return NotImplemented
        return (
            self.unit_ids == other.unit_ids
            and self.start_day == other.start_day
            and self.speeds.shape == other.speeds.shape
            and bool(np.array_equal(self.speeds, other.speeds, equal_nan=True))
        )


def store_from_observations(
    unit_ids: Sequence[str],
    observations: Sequence[tuple[int, int, float]],
) -> tuple[TrafficStore, int]:
    """Build a store from (unit_row, absolute_bin_index, speed) triples.

    Duplicate (unit, bin) observations are averaged. Returns the store and the
    number of rows folded into an existing cell.
    """
    ordered = sorted(unit_ids)
    if not observations:
        today = dt.date(1970, 1, 1)
        empty = np.full((len(ordered), SLOTS_PER_DAY), np.nan)
        return TrafficStore(ordered, today, empty), 0
    rows = np.fromiter((o[0] for o in observations), dtype=np.int64, count=len(observations))
    bins = np.fromiter((o[1] for o in observations), dtype=np.int64, count=len(observations))
    speeds = np.fromiter((o[2] for o in observations), dtype=np.float64, count=len(observations))
    first_day_ordinal = int(bins.min()) // SLOTS_PER_DAY
    last_day_ordinal = int(bins.max()) // SLOTS_PER_DAY
    n_bins = (last_day_ordinal - first_day_ordinal + 1) * SLOTS_PER_DAY
    cols = bins - first_day_ordinal * SLOTS_PER_DAY
    total = np.zeros((len(ordered), n_bins))
    count = np.zeros((len(ordered), n_bins), dtype=np.int64)
    np.add.at(total, (rows, cols), speeds)
    np.add.at(count, (rows, cols), 1)
    with np.errstate(invalid="ignore"):
        matrix = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    deduplicated = int(len(observations) - np.count_nonzero(count))
    store = TrafficStore(ordered, dt.date.fromordinal(first_day_ordinal), matrix)
    return store, deduplicated


def load_traffic(
    path: str | Path, graph: RoadGraph, strict: bool = True
) -> tuple[TrafficStore, IngestReport]:
    """Load a traffic CSV into a store, validating against the graph's units."""
    report = IngestReport()
    unit_ids = sorted(graph.units)
    index = {uid: i for i, uid in enumerate(unit_ids)}
    observations: list[tuple[int, int, float]] = []

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRAFFIC_COLUMNS:
            raise IngestError(f"{path}:1: expected header {','.join(TRAFFIC_COLUMNS)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            report.rows_read += 1
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 columns, got {len(row)}")
                unit_id = row[0].strip()
                ts = parse_timestamp(row[1])
                speed = float(row[2])
                if speed < 0:
                    raise ValueError(f"negative speed {speed}")
            except ValueError as exc:
                if strict:
                    raise IngestError(f"{path}:{lineno}: {exc}") from exc
                report.malformed += 1
                continue
            row_idx = index.get(unit_id)
            if row_idx is None:
                report.dropped_unknown_unit += 1
                report.unknown_units.add(unit_id)
                continue
            report.kept += 1
            observations.append((row_idx, TimeBin.from_datetime(ts).index(), speed))

    store, deduplicated = store_from_observations(unit_ids, observations)
    report.deduplicated = deduplicated
    return store, report


# --------------------------------------------------------------- event data


@dataclass(frozen=True)
class Venue:
    id: str
    name: str
    location: GeoPoint
    capacity: int | None = None


@dataclass(frozen=True)
class Event:
    id: str
    venue_id: str
    name: str
    category: str
    start: TimeBin
    end: TimeBin | None = None

    def __post_init__(self) -> None:
        if self.end is not None and not self.end > self.start:
            raise IngestError(f"event {self.id!r}: end must be after start")


@dataclass
class Catalog:
    venues: dict[str, Venue]
    events: list[Event]

    def __post_init__(self) -> None:
        for event in self.events:
            if event.venue_id not in self.venues:
                raise IngestError(f"event {event.id!r} references unknown venue {event.venue_id!r}")
        self.events = sorted(self.events, key=lambda e: (e.start, e.id))

    def venue_of(self, event: Event) -> Venue:
        return self.venues[event.venue_id]

    def event(self, event_id: str) -> Event:
        for event in self.events:
            if event.id == event_id:
                return event
        raise KeyError(event_id)

    def events_at(self, venue_id: str) -> list[Event]:
        return [e for e in self.events if e.venue_id == venue_id]

    def to_json_dict(self) -> dict:
        return {
            "venues": [
                {
                    "id": v.id,
                    "name": v.name,
                    "lon": v.location.lon,
                    "lat": v.location.lat,
                    "capacity": v.capacity,
                }
                for v in sorted(self.venues.values(), key=lambda v: v.id)
            ],
            "events": [
                {
                    "id": e.id,
                    "venue_id": e.venue_id,
                    "name": e.name,
                    "category": e.category,
                    "start": e.start.isoformat(),
                    "end": e.end.isoformat() if e.end else None,
                }
                for e in self.events
            ],
        }


def _bin_from_field(raw: str, context: str) -> TimeBin:
    try:
        return TimeBin.from_datetime(parse_timestamp(raw))
    except ValueError as exc:
        raise IngestError(f"{context}: bad timestamp {raw!r}: {exc}") from exc


def catalog_from_json_dict(doc: Mapping) -> Catalog:
    venues: dict[str, Venue] = {}
    for i, raw in enumerate(doc.get("venues", [])):
        try:
            venue = Venue(
                id=str(raw["id"]),
                name=str(raw.get("name", raw["id"])),
                location=GeoPoint(float(raw["lon"]), float(raw["lat"])),
                capacity=int(raw["capacity"]) if raw.get("capacity") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"venues[{i}]: {exc}") from exc
        if venue.id in venues:
            raise IngestError(f"venues[{i}].id: duplicate venue id {venue.id!r}")
        venues[venue.id] = venue
    events = []
    for i, raw in enumerate(doc.get("events", [])):
        try:
            event_id = str(raw["id"])
            event = Event(
                id=event_id,
                venue_id=str(raw["venue_id"]),
                name=str(raw.get("name", event_id)),
                category=str(raw.get("category", "")),
                start=_bin_from_field(str(raw["start"]), f"event {raw.get('id')!r}"),
                end=_bin_from_field(str(raw["end"]), f"event {raw.get('id')!r}") if raw.get("end") else None,
            )
        except IngestError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"events[{i}]: {exc}") from exc
        events.append(event)
    return Catalog(venues, events)


def load_events(path: str | Path) -> Catalog:
    """Load the venues/events JSON catalog; events come back sorted by start."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: not valid JSON: {exc}") from exc
    return catalog_from_json_dict(doc)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
