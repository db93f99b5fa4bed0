"""Event-level congestion analytics.

For a historical event the affected subgraph is grown in four steps:
candidates are units within `max_radius_m` of the venue that are affected at
some bin of the event window; seeds are the candidates within `seed_radius_m`;
the subgraph is every candidate reachable from a seed through undirected
adjacency restricted to candidates. The spatial impact is the maximal
venue-to-unit distance inside the subgraph, and the temporal impact is the
mean free-flow delay on the venue's typically affected units per 15-minute
offset from the event start.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .affectedness import AffectednessMask
from .graph import RoadGraph, connected_components
from .ingest import Event, TrafficStore, Venue
from .timegrid import TimeBin

DELAY_MIN_SPEED_KMH = 1.0


class ImpactError(ValueError):
    pass


@dataclass(frozen=True)
class SubgraphParams:
    max_radius_m: float = 10_000.0
    seed_radius_m: float = 1_000.0
    window_before_min: int = 120
    window_after_min: int = 240

    def __post_init__(self) -> None:
        if self.seed_radius_m > self.max_radius_m:
            raise ImpactError("seed_radius_m must not exceed max_radius_m")
        if self.window_before_min % 15 or self.window_after_min % 15:
            raise ImpactError("window bounds must be multiples of 15 minutes")

    def offsets_min(self) -> list[int]:
        return list(range(-self.window_before_min, self.window_after_min + 1, 15))


@dataclass
class AffectedSubgraph:
    event_id: str
    units: tuple[str, ...]
    # per unit: first and last affected bin inside the event window
    spans: dict[str, tuple[TimeBin, TimeBin]] = field(default_factory=dict)
    connected: bool = True

    @property
    def is_empty(self) -> bool:
        return not self.units

    @property
    def unit_set(self) -> frozenset[str]:
        return frozenset(self.units)


def event_window_bins(event: Event, params: SubgraphParams) -> list[TimeBin]:
    return [event.start.offset(off) for off in params.offsets_min()]


def affected_subgraph(
    event: Event,
    venue: Venue,
    graph: RoadGraph,
    mask: AffectednessMask,
    params: SubgraphParams = SubgraphParams(),
) -> AffectedSubgraph:
    """Grow the event's affected subgraph from near-venue seeds.

    Returns an empty subgraph when no unit qualifies; that is a valid result,
    not an error.
    """
    window = event_window_bins(event, params)
    candidates: dict[str, tuple[TimeBin, TimeBin]] = {}
    seeds: list[str] = []
    for unit_id in mask.unit_ids:
        distance = graph.distance_to(unit_id, venue.location)
        if distance > params.max_radius_m:
            continue
        hits = [b for b in window if mask.is_affected(unit_id, b)]
        if not hits:
            continue
        candidates[unit_id] = (hits[0], hits[-1])
        if distance <= params.seed_radius_m:
            seeds.append(unit_id)

    reached: set[str] = set()
    queue = deque(sorted(seeds))
    reached.update(queue)
    while queue:
        current = queue.popleft()
        for other in graph.neighbors(current):
            if other in candidates and other not in reached:
                reached.add(other)
                queue.append(other)

    units = tuple(sorted(reached))
    connected = len(connected_components(reached, graph)) <= 1
    return AffectedSubgraph(
        event_id=event.id,
        units=units,
        spans={uid: candidates[uid] for uid in units},
        connected=connected,
    )


@dataclass
class TypicallyAffectedSubgraph:
    """Units present in at least a tau-fraction of a venue's event subgraphs."""

    venue_id: str
    tau: float
    n_events: int
    frequencies: dict[str, float]
    units: tuple[str, ...]

    @classmethod
    def at_threshold(cls, venue_id: str, frequencies: Mapping[str, float], n_events: int, tau: float
                     ) -> "TypicallyAffectedSubgraph":
        if not 0.0 < tau <= 1.0:
            raise ImpactError(f"tau must be in (0, 1], got {tau}")
        units = tuple(sorted(u for u, f in frequencies.items() if f >= tau))
        return cls(venue_id=venue_id, tau=tau, n_events=n_events,
                   frequencies=dict(frequencies), units=units)


def typically_affected_subgraph(
    venue_id: str,
    event_subgraphs: Sequence[AffectedSubgraph],
    tau: float = 0.5,
) -> TypicallyAffectedSubgraph:
    if not event_subgraphs:
        raise ImpactError(f"venue {venue_id!r}: typically affected subgraph needs at least one event")
    counts: dict[str, int] = {}
    for subgraph in event_subgraphs:
        for unit_id in subgraph.units:
            counts[unit_id] = counts.get(unit_id, 0) + 1
    n = len(event_subgraphs)
    frequencies = {uid: c / n for uid, c in counts.items()}
    return TypicallyAffectedSubgraph.at_threshold(venue_id, frequencies, n, tau)


@dataclass(frozen=True)
class SpatialImpact:
    event_id: str
    radius_m: float
    argmax_unit: str | None

    def __post_init__(self) -> None:
        if self.radius_m < 0:
            raise ImpactError("impact radius must be >= 0")


def spatial_impact(subgraph: AffectedSubgraph, venue: Venue, graph: RoadGraph) -> SpatialImpact:
    """Maximal venue-to-unit distance within the subgraph; 0 when empty."""
    radius = 0.0
    argmax: str | None = None
    for unit_id in subgraph.units:  # sorted, so ties resolve to the smallest id
        distance = graph.distance_to(unit_id, venue.location)
        if distance > radius:
            radius = distance
            argmax = unit_id
    return SpatialImpact(event_id=subgraph.event_id, radius_m=radius, argmax_unit=argmax)


def delay_s_per_km(speed_kmh: float, limit_kmh: float) -> float:
    """Travel-time excess versus free flow at the limit, in seconds per km.

    Speeds are floored at 1 km/h so a standstill maps to a large finite delay.
    """
    if limit_kmh <= 0:
        raise ImpactError(f"speed limit must be > 0, got {limit_kmh}")
    effective = max(speed_kmh, DELAY_MIN_SPEED_KMH)
    return max(0.0, 3600.0 * (1.0 / effective - 1.0 / limit_kmh))


@dataclass
class ImpactCurve:
    """Delay samples over 15-minute offsets relative to the event start."""

    ref_id: str
    samples: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        offsets = [o for o, _ in self.samples]
        if any(o % 15 for o in offsets):
            raise ImpactError("curve offsets must be multiples of 15 minutes")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ImpactError("curve offsets must be strictly increasing")

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(o for o, _ in self.samples)

    def value_at(self, offset: int) -> float | None:
        for o, v in self.samples:
            if o == offset:
                return v
        return None

    def peak_offset(self) -> int | None:
        """Offset of the maximal delay; earliest wins on ties; None when empty."""
        if not self.samples:
            return None
        return max(self.samples, key=lambda s: (s[1], -s[0]))[0]

    def to_json_list(self) -> list[list[float]]:
        return [[o, v] for o, v in self.samples]

    @classmethod
    def from_json_list(cls, ref_id: str, raw: Iterable[Sequence[float]]) -> "ImpactCurve":
        return cls(ref_id, tuple((int(o), float(v)) for o, v in raw))


def temporal_impact(
    event: Event,
    tas: TypicallyAffectedSubgraph,
    traffic: TrafficStore,
    graph: RoadGraph,
    params: SubgraphParams = SubgraphParams(),
) -> ImpactCurve:
    """Mean delay over the typically affected units per offset from event start.

    Offsets where no typically affected unit has an observation are omitted.
    """
    if not tas.units:
        raise ImpactError(f"venue {tas.venue_id!r}: typically affected subgraph is empty")
    samples = []
    for offset in params.offsets_min():
        bin_ = event.start.offset(offset)
        values = []
        for unit_id in tas.units:
            speed = traffic.speed(unit_id, bin_)
            if speed is None:
                continue
            values.append(delay_s_per_km(speed, graph.units[unit_id].speed_limit_kmh))
        if values:
            samples.append((offset, sum(values) / len(values)))
    return ImpactCurve(ref_id=event.id, samples=tuple(samples))
