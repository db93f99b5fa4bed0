"""Unit loads and the weekday/slot IQR outlier rule.

The unit load is the relative speed reduction versus the speed limit, clamped
into [0, 1] (observed speeds above the limit count as zero load). Quartiles
are computed per (unit, weekday, slot) group with linear-interpolation
quantiles (index h = (n-1)p, interpolated between floor and ceil), and a bin
is flagged as affected when its load strictly exceeds Q3 + 1.5 * IQR for its
group. Groups with fewer than `min_samples` observations never flag.
"""

from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .graph import RoadGraph
from .ingest import TrafficStore
from .timegrid import SLOTS_PER_DAY, TimeBin

DEFAULT_MIN_SAMPLES = 4
IQR_FACTOR = 1.5


class AffectednessError(ValueError):
    pass


def unit_load(speed_kmh: float, limit_kmh: float) -> float:
    """Relative speed reduction (limit - speed) / limit, clamped into [0, 1]."""
    if limit_kmh <= 0:
        raise AffectednessError(f"speed limit must be > 0, got {limit_kmh}")
    if speed_kmh < 0:
        raise AffectednessError(f"speed must be >= 0, got {speed_kmh}")
    return min(1.0, max(0.0, (limit_kmh - speed_kmh) / limit_kmh))


class LoadSeries:
    """Per-unit load matrix on the same grid as the backing traffic store."""

    def __init__(self, store: TrafficStore, loads: np.ndarray):
        self.unit_ids = store.unit_ids
        self._index = {uid: i for i, uid in enumerate(self.unit_ids)}
        self.start_day = store.start_day
        self.loads = loads
        self.loads.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return self.loads.shape[1]

    def first_bin(self) -> TimeBin:
        return TimeBin(self.start_day, 0)

    def column_of(self, bin_: TimeBin) -> int | None:
        col = bin_.index() - self.first_bin().index()
        return col if 0 <= col < self.n_bins else None

    def load(self, unit_id: str, bin_: TimeBin) -> float | None:
        col = self.column_of(bin_)
        if col is None:
            return None
        value = self.loads[self._index[unit_id], col]
        return None if np.isnan(value) else float(value)

    def weekday_of_columns(self) -> np.ndarray:
        days = np.arange(self.n_bins) // SLOTS_PER_DAY
        return (self.start_day.weekday() + days) % 7

    def slot_of_columns(self) -> np.ndarray:
        return np.arange(self.n_bins) % SLOTS_PER_DAY


def compute_loads(store: TrafficStore, graph: RoadGraph) -> LoadSeries:
    """Vectorized unit_load over every observation in the store."""
    limits = np.empty(store.n_units)
    for i, uid in enumerate(store.unit_ids):
        unit = graph.units.get(uid)
        if unit is None:
            raise AffectednessError(f"store contains unit {uid!r} missing from graph")
        limits[i] = unit.speed_limit_kmh
    loads = (limits[:, None] - store.speeds) / limits[:, None]
    np.clip(loads, 0.0, 1.0, out=loads)
    return LoadSeries(store, loads)


@dataclass(frozen=True)
class ProfileEntry:
    q1: float
    q3: float
    iqr: float
    threshold: float
    sample_count: int
    usable: bool


class AffectednessProfile:
    """Per-(unit, weekday, slot) quartile statistics over a training window."""

    def __init__(
        self,
        unit_ids: list[str],
        q1: np.ndarray,
        q3: np.ndarray,
        counts: np.ndarray,
        min_samples: int,
    ):
        self.unit_ids = unit_ids
        self._index = {uid: i for i, uid in enumerate(unit_ids)}
        self.q1 = q1
        self.q3 = q3
        self.counts = counts
        self.min_samples = min_samples
        usable = counts >= min_samples
        threshold = q3 + IQR_FACTOR * (q3 - q1)
        # unusable groups never flag anything: NaN compares False
        self.threshold = np.where(usable, threshold, np.nan)
        for arr in (self.q1, self.q3, self.counts, self.threshold):
            arr.setflags(write=False)

    def entry(self, unit_id: str, weekday: int, slot: int) -> ProfileEntry:
        i = self._index[unit_id]
        count = int(self.counts[i, weekday, slot])
        usable = count >= self.min_samples
        q1 = float(self.q1[i, weekday, slot]) if count else float("nan")
        q3 = float(self.q3[i, weekday, slot]) if count else float("nan")
        threshold = float(self.threshold[i, weekday, slot]) if usable else float("nan")
        return ProfileEntry(q1, q3, q3 - q1, threshold, count, usable)

    def groups(self) -> Iterator[tuple[str, int, int, ProfileEntry]]:
        for uid in self.unit_ids:
            i = self._index[uid]
            for weekday in range(7):
                for slot in range(SLOTS_PER_DAY):
                    if self.counts[i, weekday, slot]:
                        yield uid, weekday, slot, self.entry(uid, weekday, slot)

    def to_json_dict(self) -> dict:
        units = {}
        for uid in self.unit_ids:
            i = self._index[uid]
            rows = []
            for weekday in range(7):
                for slot in range(SLOTS_PER_DAY):
                    count = int(self.counts[i, weekday, slot])
                    if not count:
                        continue
                    rows.append(
                        [
                            weekday,
                            slot,
                            round(float(self.q1[i, weekday, slot]), 9),
                            round(float(self.q3[i, weekday, slot]), 9),
                            count,
                        ]
                    )
            units[uid] = rows
        return {
            "format_version": 1,
            "min_samples": self.min_samples,
            "columns": ["weekday", "slot", "q1", "q3", "sample_count"],
            "units": units,
        }


def build_profile(
    loads: LoadSeries,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    train_from: dt.date | None = None,
    train_to: dt.date | None = None,
) -> AffectednessProfile:
    """Quartiles per (unit, weekday, slot) over the training window.

    `train_from`/`train_to` restrict the window by calendar day (inclusive);
    by default the full series is pooled.
    """
    if min_samples < 1:
        raise AffectednessError("min_samples must be >= 1")
    n_units = len(loads.unit_ids)
    weekday_cols = loads.weekday_of_columns()
    slot_cols = loads.slot_of_columns()

    in_window = np.ones(loads.n_bins, dtype=bool)
    if train_from is not None or train_to is not None:
        days = loads.start_day.toordinal() + np.arange(loads.n_bins) // SLOTS_PER_DAY
        if train_from is not None:
            in_window &= days >= train_from.toordinal()
        if train_to is not None:
            in_window &= days <= train_to.toordinal()

    q1 = np.full((n_units, 7, SLOTS_PER_DAY), np.nan)
    q3 = np.full((n_units, 7, SLOTS_PER_DAY), np.nan)
    counts = np.zeros((n_units, 7, SLOTS_PER_DAY), dtype=np.int32)
    for weekday in range(7):
        for slot in range(SLOTS_PER_DAY):
            cols = np.flatnonzero((weekday_cols == weekday) & (slot_cols == slot) & in_window)
            if cols.size == 0:
                continue
            group = loads.loads[:, cols]
            observed = np.count_nonzero(~np.isnan(group), axis=1)
            counts[:, weekday, slot] = observed
            if not observed.any():
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", category=RuntimeWarning)
                quartiles = np.nanquantile(group, [0.25, 0.75], axis=1)
            q1[:, weekday, slot] = quartiles[0]
            q3[:, weekday, slot] = quartiles[1]
    return AffectednessProfile(list(loads.unit_ids), q1, q3, counts, min_samples)


class AffectednessMask:
    """Per-unit sets of bins whose load strictly exceeds the group threshold."""

    def __init__(self, unit_ids: list[str], start_day: dt.date, flags: np.ndarray):
        self.unit_ids = unit_ids
        self._index = {uid: i for i, uid in enumerate(unit_ids)}
        self.start_day = start_day
        self.flags = flags
        self.flags.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return self.flags.shape[1]

    def first_bin(self) -> TimeBin:
        return TimeBin(self.start_day, 0)

    def last_bin(self) -> TimeBin:
        return TimeBin.from_index(self.first_bin().index() + self.n_bins - 1)

    def column_of(self, bin_: TimeBin) -> int | None:
        col = bin_.index() - self.first_bin().index()
        return col if 0 <= col < self.n_bins else None

    def is_affected(self, unit_id: str, bin_: TimeBin) -> bool:
        i = self._index.get(unit_id)
        col = self.column_of(bin_)
        if i is None or col is None:
            return False
        return bool(self.flags[i, col])

    def affected_units_at(self, bin_: TimeBin) -> list[str]:
        col = self.column_of(bin_)
        if col is None:
            return []
        return [self.unit_ids[i] for i in np.flatnonzero(self.flags[:, col])]

    def bins_for_unit(self, unit_id: str) -> list[TimeBin]:
        i = self._index.get(unit_id)
        if i is None:
            return []
        first_index = self.first_bin().index()
        return [TimeBin.from_index(first_index + c) for c in np.flatnonzero(self.flags[i])]

    def affected_bins(self) -> Iterator[TimeBin]:
        """Bins at which at least one unit is affected, in chronological order."""
        first_index = self.first_bin().index()
        for c in np.flatnonzero(self.flags.any(axis=0)):
            yield TimeBin.from_index(first_index + int(c))

    @property
    def total_flags(self) -> int:
        return int(np.count_nonzero(self.flags))

    def to_json_dict(self) -> dict:
        return {
            "format_version": 1,
            "start_day": self.start_day.isoformat(),
            "n_bins": self.n_bins,
            "affected": {
                uid: [b.isoformat() for b in self.bins_for_unit(uid)]
                for uid in self.unit_ids
                if self.flags[self._index[uid]].any()
            },
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping, unit_ids: list[str]) -> "AffectednessMask":
        start_day = dt.date.fromisoformat(doc["start_day"])
        n_bins = int(doc["n_bins"])
        flags = np.zeros((len(unit_ids), n_bins), dtype=bool)
        index = {uid: i for i, uid in enumerate(unit_ids)}
        first_index = TimeBin(start_day, 0).index()
        for uid, stamps in doc["affected"].items():
            i = index.get(uid)
            if i is None:
                raise AffectednessError(f"mask references unit {uid!r} missing from graph")
            for stamp in stamps:
                flags[i, TimeBin.parse(stamp).index() - first_index] = True
        return cls(list(unit_ids), start_day, flags)


def classify(loads: LoadSeries, profile: AffectednessProfile) -> AffectednessMask:
    """Flag every observed load strictly above its group threshold."""
    if list(loads.unit_ids) != list(profile.unit_ids):
        raise AffectednessError("loads and profile cover different unit sets")
    weekday_cols = loads.weekday_of_columns()
    slot_cols = loads.slot_of_columns()
    thresholds = profile.threshold[:, weekday_cols, slot_cols]
    with np.errstate(invalid="ignore"):
        flags = loads.loads > thresholds
    return AffectednessMask(list(loads.unit_ids), loads.start_day, flags)
