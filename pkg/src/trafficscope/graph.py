"""Directed multigraph of junction nodes and road-segment units.

Units are the atomic spatial elements of every analytics step. The graph is
immutable after construction: all adjacency is precomputed, and reference
points (polyline midpoints) are cached on first use, so instances are safe to
share across threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geo import GeoPoint, geo_distance, polyline_midpoint

ENDPOINT_TOLERANCE_DEG = 1e-6


class GraphError(ValueError):
    """Raised for structurally invalid graphs or unresolvable references."""


@dataclass(frozen=True)
class Unit:
    """One directed road segment: `from_node` -> `to_node`."""

    id: str
    from_node: str
    to_node: str
    speed_limit_kmh: float
    length_m: float
    geometry: tuple[GeoPoint, ...]

    def __post_init__(self) -> None:
        if self.speed_limit_kmh <= 0:
            raise GraphError(f"unit {self.id!r}: speed_limit_kmh must be > 0")
        if self.length_m <= 0:
            raise GraphError(f"unit {self.id!r}: length_m must be > 0")
        if len(self.geometry) < 2:
            raise GraphError(f"unit {self.id!r}: geometry needs at least 2 points")


class RoadGraph:
    """Directed multigraph with precomputed unit adjacency.

    Two units are directed-adjacent when one's head node equals the other's
    tail node; they are undirected neighbors when they share any endpoint.
    Parallel units between the same node pair are allowed.
    """

    def __init__(self, nodes: Mapping[str, GeoPoint], units: Iterable[Unit]):
        self.nodes: dict[str, GeoPoint] = dict(nodes)
        self.units: dict[str, Unit] = {}
        for unit in units:
            if unit.id in self.units:
                raise GraphError(f"duplicate unit id {unit.id!r}")
            self._check_endpoints(unit)
            self.units[unit.id] = unit

        incident: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        outgoing: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for unit in self.units.values():
            incident[unit.from_node].append(unit.id)
            incident[unit.to_node].append(unit.id)
            outgoing[unit.from_node].append(unit.id)

        self._successors: dict[str, tuple[str, ...]] = {}
        self._predecessors: dict[str, list[str]] = {uid: [] for uid in self.units}
        self._neighbors: dict[str, tuple[str, ...]] = {}
        for unit in self.units.values():
            succ = tuple(sorted(outgoing[unit.to_node]))
            self._successors[unit.id] = succ
            for other in succ:
                self._predecessors[other].append(unit.id)
            near = set(incident[unit.from_node]) | set(incident[unit.to_node])
            near.discard(unit.id)
            self._neighbors[unit.id] = tuple(sorted(near))
        self._reference_points: dict[str, GeoPoint] = {}

    def _check_endpoints(self, unit: Unit) -> None:
        for field, node_id in (("from", unit.from_node), ("to", unit.to_node)):
            if node_id not in self.nodes:
                raise GraphError(f"unit {unit.id!r}: {field} references unknown node {node_id!r}")
        for label, node_id, point in (
            ("first", unit.from_node, unit.geometry[0]),
            ("last", unit.to_node, unit.geometry[-1]),
        ):
            node = self.nodes[node_id]
            if abs(node.lon - point.lon) > ENDPOINT_TOLERANCE_DEG or abs(node.lat - point.lat) > ENDPOINT_TOLERANCE_DEG:
                raise GraphError(
                    f"unit {unit.id!r}: {label} geometry point {point.lon, point.lat} "
                    f"does not coincide with node {node_id!r} at {node.lon, node.lat}"
                )

    def successors(self, unit_id: str) -> tuple[str, ...]:
        return self._successors[unit_id]

    def predecessors(self, unit_id: str) -> tuple[str, ...]:
        return tuple(sorted(self._predecessors[unit_id]))

    def neighbors(self, unit_id: str) -> tuple[str, ...]:
        """Units sharing an endpoint node with `unit_id` (undirected adjacency)."""
        return self._neighbors[unit_id]

    def reference_point(self, unit_id: str) -> GeoPoint:
        """The unit's polyline midpoint; stands for the unit in distance computations."""
        cached = self._reference_points.get(unit_id)
        if cached is None:
            cached = polyline_midpoint(self.units[unit_id].geometry)
            self._reference_points[unit_id] = cached
        return cached

    def distance_to(self, unit_id: str, point: GeoPoint) -> float:
        return geo_distance(self.reference_point(unit_id), point)

    # ------------------------------------------------------------------ I/O

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "RoadGraph":
        nodes: dict[str, GeoPoint] = {}
        for i, raw in enumerate(doc.get("nodes", [])):
            try:
                node_id = str(raw["id"])
                point = GeoPoint(float(raw["lon"]), float(raw["lat"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"nodes[{i}]: {exc}") from exc
            if node_id in nodes:
                raise GraphError(f"nodes[{i}].id: duplicate node id {node_id!r}")
            nodes[node_id] = point
        units = []
        for i, raw in enumerate(doc.get("units", [])):
            try:
                unit = Unit(
                    id=str(raw["id"]),
                    from_node=str(raw["from"]),
                    to_node=str(raw["to"]),
                    speed_limit_kmh=float(raw["speed_limit_kmh"]),
                    length_m=float(raw["length_m"]),
                    geometry=tuple(GeoPoint(float(lon), float(lat)) for lon, lat in raw["geometry"]),
                )
            except GraphError as exc:
                raise GraphError(f"units[{i}]: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"units[{i}]: {exc}") from exc
            units.append(unit)
        try:
            return cls(nodes, units)
        except GraphError as exc:
            raise GraphError(f"graph document invalid: {exc}") from exc

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {"id": nid, "lon": p.lon, "lat": p.lat} for nid, p in sorted(self.nodes.items())
            ],
            "units": [
                {
                    "id": u.id,
                    "from": u.from_node,
                    "to": u.to_node,
                    "speed_limit_kmh": u.speed_limit_kmh,
                    "length_m": u.length_m,
                    "geometry": [[p.lon, p.lat] for p in u.geometry],
                }
                for u in sorted(self.units.values(), key=lambda u: u.id)
            ],
        }

    @classmethod
    def load(cls, path: str | Path) -> "RoadGraph":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise GraphError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json_dict(doc)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def connected_components(unit_ids: Iterable[str], graph: RoadGraph) -> list[set[str]]:
    """Partition `unit_ids` by undirected adjacency (shared endpoint node).

    Components are ordered by their smallest contained unit id, so the output
    is deterministic for a given input set.
    """
    pending = set(unit_ids)
    for uid in pending:
        if uid not in graph.units:
            raise GraphError(f"unknown unit id {uid!r}")
    components: list[set[str]] = []
    for start in sorted(pending):
        if start not in pending:
            continue
        component = {start}
        pending.discard(start)
        queue = deque([start])
        while queue:
            current = queue.popleft()
            for other in graph.neighbors(current):
                if other in pending:
                    pending.discard(other)
                    component.add(other)
                    queue.append(other)
        components.append(component)
    return components
