"""GeoJSON builders for the map layers, plus a structural validator."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .graph import RoadGraph
from .ingest import Venue


def feature_collection(features: Sequence[dict]) -> dict:
    return {"type": "FeatureCollection", "features": list(features)}


def unit_feature(graph: RoadGraph, unit_id: str, properties: Mapping) -> dict:
    unit = graph.units[unit_id]
    return {
        "type": "Feature",
        "geometry": {
            "type": "LineString",
            "coordinates": [[p.lon, p.lat] for p in unit.geometry],
        },
        "properties": {"unit_id": unit_id, **properties},
    }


def units_collection(graph: RoadGraph, unit_ids: Iterable[str], layer: str,
                     extra: Mapping | None = None) -> dict:
    props = dict(extra or {})
    return feature_collection(
        [unit_feature(graph, uid, {"layer": layer, **props}) for uid in sorted(unit_ids)]
    )


def subgraph_feature(graph: RoadGraph, subgraph_id: int, unit_ids: Iterable[str]) -> dict:
    """One MultiLineString per stable subgraph so the UI can select it whole."""
    coordinates = [
        [[p.lon, p.lat] for p in graph.units[uid].geometry] for uid in sorted(unit_ids)
    ]
    return {
        "type": "Feature",
        "geometry": {"type": "MultiLineString", "coordinates": coordinates},
        "properties": {"layer": "dependencies", "subgraph_id": subgraph_id},
    }


def subgraphs_collection(graph: RoadGraph, subgraphs: Iterable) -> dict:
    return feature_collection(
        [subgraph_feature(graph, s.id, s.units) for s in sorted(subgraphs, key=lambda s: s.id)]
    )


def venue_circle_feature(venue: Venue, radius_m: float, layer: str = "venue_circle") -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [venue.location.lon, venue.location.lat]},
        "properties": {"layer": layer, "venue_id": venue.id, "radius_m": radius_m},
    }


class GeoJsonError(ValueError):
    pass


_GEOMETRY_DEPTH = {"Point": 1, "LineString": 2, "MultiLineString": 3, "Polygon": 3, "MultiPolygon": 4}


def _check_positions(coords, depth: int, path: str) -> None:
    if depth == 1:
        if (
            not isinstance(coords, (list, tuple))
            or len(coords) < 2
            or not all(isinstance(c, (int, float)) for c in coords)
        ):
            raise GeoJsonError(f"{path}: not a position: {coords!r}")
        return
    if not isinstance(coords, (list, tuple)) or not coords:
        raise GeoJsonError(f"{path}: expected a non-empty coordinate array")
    for i, inner in enumerate(coords):
        _check_positions(inner, depth - 1, f"{path}[{i}]")


def validate(obj: Mapping, path: str = "$") -> None:
    """Raise GeoJsonError unless `obj` is a structurally valid GeoJSON value."""
    kind = obj.get("type")
    if kind == "FeatureCollection":
        features = obj.get("features")
        if not isinstance(features, list):
            raise GeoJsonError(f"{path}.features: missing or not a list")
        for i, feature in enumerate(features):
            validate(feature, f"{path}.features[{i}]")
    elif kind == "Feature":
        if "properties" not in obj:
            raise GeoJsonError(f"{path}: feature without properties")
        geometry = obj.get("geometry")
        if geometry is not None:
            validate(geometry, f"{path}.geometry")
    elif kind in _GEOMETRY_DEPTH:
        if "coordinates" not in obj:
            raise GeoJsonError(f"{path}: geometry without coordinates")
        _check_positions(obj["coordinates"], _GEOMETRY_DEPTH[kind], f"{path}.coordinates")
    else:
        raise GeoJsonError(f"{path}: unknown GeoJSON type {kind!r}")
