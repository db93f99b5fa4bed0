"""The immutable result bundle served to clients.

A snapshot holds the graph, the catalog, all computed layers, and input
fingerprints, cross-referenced at build time: any dangling id fails the build
with a message naming every offender, and no partial snapshot is produced.
Snapshots are never mutated after construction; the server swaps whole
instances atomically.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .graph import RoadGraph
from .impact import ImpactCurve, TypicallyAffectedSubgraph
from .ingest import Catalog, Event, catalog_from_json_dict
from .structdeps import DependencyPair, StableSubgraph
from .timegrid import TimeBin, parse_timestamp


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class ImpactRecord:
    """Historical impact of one event."""

    event_id: str
    units: tuple[str, ...]
    radius_m: float
    argmax_unit: str | None
    curve: ImpactCurve | None
    connected: bool = True
    skip_reason: str | None = None


@dataclass(frozen=True)
class PredictionRecord:
    event_id: str
    radius_m: float
    curve: ImpactCurve


@dataclass
class Snapshot:
    graph: RoadGraph
    catalog: Catalog
    as_of: dt.datetime
    impacts: dict[str, ImpactRecord] = field(default_factory=dict)
    predictions: dict[str, PredictionRecord] = field(default_factory=dict)
    tas: dict[str, TypicallyAffectedSubgraph] = field(default_factory=dict)
    subgraphs: list[StableSubgraph] = field(default_factory=list)
    dependencies: list[DependencyPair] = field(default_factory=list)
    fingerprints: dict[str, str] = field(default_factory=dict)

    def event_kind(self, event: Event) -> str:
        return "historical" if event.start.start() <= self.as_of else "future"

    def subgraph(self, subgraph_id: int) -> StableSubgraph:
        for s in self.subgraphs:
            if s.id == subgraph_id:
                return s
        raise KeyError(subgraph_id)

    def partners_of(self, subgraph_id: int) -> list[DependencyPair]:
        found = [p for p in self.dependencies if subgraph_id in (p.a, p.b)]
        return sorted(found, key=lambda p: (-p.score, p.a, p.b))


def build_snapshot(
    graph: RoadGraph,
    catalog: Catalog,
    as_of: dt.datetime,
    impacts: Sequence[ImpactRecord] = (),
    predictions: Sequence[PredictionRecord] = (),
    tas: Sequence[TypicallyAffectedSubgraph] = (),
    subgraphs: Sequence[StableSubgraph] = (),
    dependencies: Sequence[DependencyPair] = (),
    fingerprints: Mapping[str, str] | None = None,
) -> Snapshot:
    """Assemble and cross-validate a snapshot; raises on any dangling reference."""
    problems: list[str] = []
    event_ids = {e.id for e in catalog.events}
    known_units = set(graph.units)

    def check_units(owner: str, unit_ids) -> None:
        missing = sorted(set(unit_ids) - known_units)
        if missing:
            problems.append(f"{owner} references unknown units {missing}")

    for record in impacts:
        if record.event_id not in event_ids:
            problems.append(f"impact record references unknown event {record.event_id!r}")
        check_units(f"impact record {record.event_id!r}", record.units)
    for record in predictions:
        if record.event_id not in event_ids:
            problems.append(f"prediction record references unknown event {record.event_id!r}")
    for entry in tas:
        if entry.venue_id not in catalog.venues:
            problems.append(f"typically-affected record references unknown venue {entry.venue_id!r}")
        check_units(f"typically-affected record {entry.venue_id!r}", entry.frequencies)
    subgraph_ids = set()
    for subgraph in subgraphs:
        if subgraph.id in subgraph_ids:
            problems.append(f"duplicate subgraph id {subgraph.id}")
        subgraph_ids.add(subgraph.id)
        check_units(f"subgraph {subgraph.id}", subgraph.units)
    for pair in dependencies:
        for side in (pair.a, pair.b):
            if side not in subgraph_ids:
                problems.append(f"dependency pair ({pair.a}, {pair.b}) references unknown subgraph {side}")
    if problems:
        raise SnapshotError("snapshot build failed:\n  " + "\n  ".join(problems))

    return Snapshot(
        graph=graph,
        catalog=catalog,
        as_of=as_of,
        impacts={r.event_id: r for r in impacts},
        predictions={r.event_id: r for r in predictions},
        tas={t.venue_id: t for t in tas},
        subgraphs=sorted(subgraphs, key=lambda s: s.id),
        dependencies=list(dependencies),
        fingerprints=dict(fingerprints or {}),
    )


# ------------------------------------------------------------------- JSON


def _curve_json(curve: ImpactCurve | None) -> list | None:
    return curve.to_json_list() if curve is not None else None


def to_json_dict(snapshot: Snapshot) -> dict:
    return {
        "format_version": 1,
        "as_of": snapshot.as_of.strftime("%Y-%m-%dT%H:%M"),
        "fingerprints": dict(sorted(snapshot.fingerprints.items())),
        "graph": snapshot.graph.to_json_dict(),
        "catalog": snapshot.catalog.to_json_dict(),
        "impacts": [
            {
                "event_id": r.event_id,
                "units": list(r.units),
                "radius_m": r.radius_m,
                "argmax_unit": r.argmax_unit,
                "curve": _curve_json(r.curve),
                "connected": r.connected,
                "skip_reason": r.skip_reason,
            }
            for r in sorted(snapshot.impacts.values(), key=lambda r: r.event_id)
        ],
        "predictions": [
            {
                "event_id": r.event_id,
                "radius_m": r.radius_m,
                "curve": r.curve.to_json_list(),
            }
            for r in sorted(snapshot.predictions.values(), key=lambda r: r.event_id)
        ],
        "tas": [
            {
                "venue_id": t.venue_id,
                "tau": t.tau,
                "n_events": t.n_events,
                "frequencies": dict(sorted(t.frequencies.items())),
                "units": list(t.units),
            }
            for t in sorted(snapshot.tas.values(), key=lambda t: t.venue_id)
        ],
        "subgraphs": [
            {
                "id": s.id,
                "units": s.sorted_units(),
                "activity": [b.isoformat() for b in s.sorted_activity()],
            }
            for s in snapshot.subgraphs
        ],
        "dependencies": [
            {
                "a": p.a,
                "b": p.b,
                "mi_bits": p.mi_bits,
                "distance_m": p.distance_m,
                "score": p.score,
            }
            for p in snapshot.dependencies
        ],
    }


def from_json_dict(doc: Mapping) -> Snapshot:
    graph = RoadGraph.from_json_dict(doc["graph"])
    catalog = catalog_from_json_dict(doc["catalog"])
    impacts = [
        ImpactRecord(
            event_id=raw["event_id"],
            units=tuple(raw["units"]),
            radius_m=float(raw["radius_m"]),
            argmax_unit=raw.get("argmax_unit"),
            curve=ImpactCurve.from_json_list(raw["event_id"], raw["curve"]) if raw.get("curve") is not None else None,
            connected=bool(raw.get("connected", True)),
            skip_reason=raw.get("skip_reason"),
        )
        for raw in doc.get("impacts", [])
    ]
    predictions = [
        PredictionRecord(
            event_id=raw["event_id"],
            radius_m=float(raw["radius_m"]),
            curve=ImpactCurve.from_json_list(raw["event_id"], raw["curve"]),
        )
        for raw in doc.get("predictions", [])
    ]
    tas = [
        TypicallyAffectedSubgraph(
            venue_id=raw["venue_id"],
            tau=float(raw["tau"]),
            n_events=int(raw["n_events"]),
            frequencies={k: float(v) for k, v in raw["frequencies"].items()},
            units=tuple(raw["units"]),
        )
        for raw in doc.get("tas", [])
    ]
    subgraphs = [
        StableSubgraph(
            id=int(raw["id"]),
            units=set(raw["units"]),
            activity={TimeBin.parse(stamp) for stamp in raw["activity"]},
        )
        for raw in doc.get("subgraphs", [])
    ]
    dependencies = [
        DependencyPair(
            a=int(raw["a"]),
            b=int(raw["b"]),
            mi_bits=float(raw["mi_bits"]),
            distance_m=float(raw["distance_m"]),
            score=float(raw["score"]),
        )
        for raw in doc.get("dependencies", [])
    ]
    return build_snapshot(
        graph=graph,
        catalog=catalog,
        as_of=parse_timestamp(doc["as_of"]),
        impacts=impacts,
        predictions=predictions,
        tas=tas,
        subgraphs=subgraphs,
        dependencies=dependencies,
        fingerprints=doc.get("fingerprints", {}),
    )


def save(snapshot: Snapshot, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(snapshot), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path: str | Path) -> Snapshot:
    with open(path, encoding="utf-8") as fh:
        return from_json_dict(json.load(fh))
