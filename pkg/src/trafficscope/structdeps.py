"""Structurally dependent subgraph detection.

Affected units are clustered per time bin into connected components
(region growing over undirected adjacency). Timestep clusters are merged
chronologically into stable subgraphs by maximal Jaccard overlap, followed by
a transitive-union pass that enforces pairwise disjoint unit sets. Pairs of
stable subgraphs within a distance gate are scored by binary mutual
information of their activity series, damped by spatial distance:
score = MI / (1 + distance / delta0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet, Collection, Iterable, Sequence

from .affectedness import AffectednessMask
from .geo import geo_distance
from .graph import RoadGraph, connected_components
from .timegrid import TimeBin


class StructDepsError(ValueError):
    pass


@dataclass(frozen=True)
class TimestepCluster:
    bin: TimeBin
    cluster_id: int
    units: frozenset[str]


def cluster_timestep(bin_: TimeBin, mask: AffectednessMask, graph: RoadGraph) -> list[TimestepCluster]:
    """Connected components of the units affected at `bin_`; singletons allowed."""
    affected = mask.affected_units_at(bin_)
    components = connected_components(affected, graph)
    return [
        TimestepCluster(bin=bin_, cluster_id=i, units=frozenset(component))
        for i, component in enumerate(components)
    ]


@dataclass
class StableSubgraph:
    """Time-merged cluster with the set of bins at which it was active."""

    id: int
    units: set[str]
    activity: set[TimeBin]

    def sorted_units(self) -> list[str]:
        return sorted(self.units)

    def sorted_activity(self) -> list[TimeBin]:
        return sorted(self.activity)


def _jaccard(a: AbstractSet[str], b: AbstractSet[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def merge_subgraphs(
    clusters: Iterable[TimestepCluster],
    theta_overlap: float = 0.2,
) -> list[StableSubgraph]:
    """Greedy chronological merge of timestep clusters into stable subgraphs.

    Each cluster joins the stable subgraph with maximal Jaccard overlap when
    that overlap reaches `theta_overlap` (ties go to the lowest subgraph id),
    extending its unit set and activity; otherwise it founds a new subgraph.
    A final pass unions subgraphs transitively until unit sets are disjoint.
    """
    if not 0.0 < theta_overlap <= 1.0:
        raise StructDepsError(f"theta_overlap must be in (0, 1], got {theta_overlap}")
    ordered = sorted(clusters, key=lambda c: (c.bin, c.cluster_id))
    stable: list[StableSubgraph] = []
    for cluster in ordered:
        best: StableSubgraph | None = None
        best_overlap = 0.0
        for candidate in stable:  # ascending id, so ties keep the lowest
            overlap = _jaccard(cluster.units, candidate.units)
            if overlap > best_overlap:
                best_overlap = overlap
                best = candidate
        if best is not None and best_overlap >= theta_overlap:
            best.units |= cluster.units
            best.activity.add(cluster.bin)
        else:
            stable.append(StableSubgraph(id=len(stable), units=set(cluster.units), activity={cluster.bin}))

    # transitive union: any shared unit collapses the subgraphs involved
    owner: dict[str, StableSubgraph] = {}
    merged: list[StableSubgraph] = []
    for subgraph in stable:
        overlapping = {owner[u].id for u in subgraph.units if u in owner}
        if overlapping:
            target = min((s for s in merged if s.id in overlapping), key=lambda s: s.id)
            absorbed = [s for s in merged if s.id in overlapping and s.id != target.id]
            for other in absorbed:
                target.units |= other.units
                target.activity |= other.activity
                merged.remove(other)
            target.units |= subgraph.units
            target.activity |= subgraph.activity
            for unit in target.units:
                owner[unit] = target
        else:
            fresh = StableSubgraph(id=subgraph.id, units=set(subgraph.units), activity=set(subgraph.activity))
            merged.append(fresh)
            for unit in fresh.units:
                owner[unit] = fresh
    merged.sort(key=lambda s: s.id)
    for i, subgraph in enumerate(merged):
        subgraph.id = i
    return merged


def mutual_information(
    a_activity: AbstractSet[TimeBin],
    b_activity: AbstractSet[TimeBin],
    domain: Collection[TimeBin],
) -> float:
    """Mutual information in bits of two binary activity series over `domain`.

    Treats "active at bin" as a binary variable; 0 * log(0) counts as 0.
    """
    n = len(domain)
    if n == 0:
        raise StructDepsError("mutual information needs a non-empty bin domain")
    n11 = n10 = n01 = n00 = 0
    for bin_ in domain:
        a = bin_ in a_activity
        b = bin_ in b_activity
        if a and b:
            n11 += 1
        elif a:
            n10 += 1
        elif b:
            n01 += 1
        else:
            n00 += 1
    pa = (n11 + n10) / n
    pb = (n11 + n01) / n
    mi = 0.0
    for joint, px, py in (
        (n11 / n, pa, pb),
        (n10 / n, pa, 1.0 - pb),
        (n01 / n, 1.0 - pa, pb),
        (n00 / n, 1.0 - pa, 1.0 - pb),
    ):
        if joint > 0.0:
            mi += joint * math.log2(joint / (px * py))
    return max(0.0, mi)


def subgraph_distance(a: StableSubgraph, b: StableSubgraph, graph: RoadGraph) -> float:
    """Minimum reference-point distance between the two unit sets, meters."""
    if not a.units or not b.units:
        raise StructDepsError("subgraph distance needs two non-empty subgraphs")
    if a.units & b.units:
        return 0.0
    best = math.inf
    points_b = [graph.reference_point(u) for u in sorted(b.units)]
    for ua in sorted(a.units):
        pa = graph.reference_point(ua)
        for pb in points_b:
            d = geo_distance(pa, pb)
            if d < best:
                best = d
    return best


@dataclass(frozen=True)
class DependencyParams:
    delta0_m: float = 1000.0
    d_max_m: float = 5000.0
    score_min: float = 0.05


@dataclass(frozen=True)
class DependencyPair:
    a: int
    b: int
    mi_bits: float
    distance_m: float
    score: float

    def __post_init__(self) -> None:
        if self.a >= self.b:
            raise StructDepsError("dependency pair ids must satisfy a < b")


def score_dependencies(
    subgraphs: Sequence[StableSubgraph],
    domain: Collection[TimeBin],
    graph: RoadGraph,
    params: DependencyParams = DependencyParams(),
) -> list[DependencyPair]:
    """Score candidate pairs (distance <= d_max) and keep those >= score_min.

    Output is sorted by descending score, then ascending (a, b).
    """
    ordered = sorted(subgraphs, key=lambda s: s.id)
    pairs: list[DependencyPair] = []
    for i, first in enumerate(ordered):
        for second in ordered[i + 1:]:
            distance = subgraph_distance(first, second, graph)
            if distance > params.d_max_m:
                continue
            mi = mutual_information(first.activity, second.activity, domain)
            score = mi / (1.0 + distance / params.delta0_m)
            if score >= params.score_min:
                pairs.append(
                    DependencyPair(a=first.id, b=second.id, mi_bits=mi, distance_m=distance, score=score)
                )
    pairs.sort(key=lambda p: (-p.score, p.a, p.b))
    return pairs
