"""WGS84 points, great-circle distances, and polyline helpers.

All distances are meters on a spherical earth (radius 6,371,000 m). The
sub-meter error of the spherical model is irrelevant at the km scale the
analytics operate on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range [-180, 180]: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range [-90, 90]: {self.lat}")


def geo_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points, in meters (haversine)."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    s = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def polyline_length_m(points: Sequence[GeoPoint]) -> float:
    """Cumulative great-circle length of a polyline, in meters."""
    return sum(geo_distance(p, q) for p, q in zip(points, points[1:]))


def point_along(points: Sequence[GeoPoint], distance_m: float) -> GeoPoint:
    """Point at `distance_m` along the polyline, clamped to its ends.

    Interpolates linearly in lon/lat within a leg, which is accurate at
    road-segment scale.
    """
    if not points:
        raise ValueError("empty polyline")
    if distance_m <= 0.0:
        return points[0]
    acc = 0.0
    for p, q in zip(points, points[1:]):
        leg = geo_distance(p, q)
        if acc + leg >= distance_m and leg > 0.0:
            f = (distance_m - acc) / leg
            return GeoPoint(p.lon + f * (q.lon - p.lon), p.lat + f * (q.lat - p.lat))
        acc += leg
    return points[-1]


def polyline_midpoint(points: Sequence[GeoPoint]) -> GeoPoint:
    """Point at half the polyline's cumulative length."""
    if len(points) < 2:
        raise ValueError("polyline needs at least 2 points")
    return point_along(points, polyline_length_m(points) / 2.0)
