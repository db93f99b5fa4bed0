"""The canonical 15-minute time grid.

A `TimeBin` is one 15-minute slot of one calendar day (96 slots per day).
Timestamps are snapped *down* to the containing bin. Timestamps are treated
as wall-clock values: a timezone suffix is parsed and then dropped, so mixing
zones within one dataset is an input-data error, not something this layer
repairs.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

SLOTS_PER_DAY = 96
BIN_MINUTES = 15


@dataclass(frozen=True, order=True)
class TimeBin:
    day: dt.date
    slot: int

    def __post_init__(self) -> None:
        if not 0 <= self.slot < SLOTS_PER_DAY:
            raise ValueError(f"slot out of range [0, {SLOTS_PER_DAY - 1}]: {self.slot}")

    @property
    def weekday(self) -> int:
        """0 = Monday .. 6 = Sunday."""
        return self.day.weekday()

    def start(self) -> dt.datetime:
        return dt.datetime.combine(self.day, dt.time()) + dt.timedelta(minutes=BIN_MINUTES * self.slot)

    def index(self) -> int:
        """Absolute bin index; consecutive bins differ by 1 across day boundaries."""
        return self.day.toordinal() * SLOTS_PER_DAY + self.slot

    @classmethod
    def from_index(cls, index: int) -> "TimeBin":
        return cls(dt.date.fromordinal(index // SLOTS_PER_DAY), index % SLOTS_PER_DAY)

    @classmethod
    def from_datetime(cls, ts: dt.datetime) -> "TimeBin":
        minutes = ts.hour * 60 + ts.minute
        return cls(ts.date(), minutes // BIN_MINUTES)

    def offset(self, minutes: int) -> "TimeBin":
        if minutes % BIN_MINUTES != 0:
            raise ValueError(f"offset must be a multiple of {BIN_MINUTES} minutes: {minutes}")
        return TimeBin.from_index(self.index() + minutes // BIN_MINUTES)

    def isoformat(self) -> str:
        return self.start().strftime("%Y-%m-%dT%H:%M")

    @classmethod
    def parse(cls, text: str) -> "TimeBin":
        ts = parse_timestamp(text)
        bin_ = cls.from_datetime(ts)
        if bin_.start() != ts:
            raise ValueError(f"timestamp is not aligned to the {BIN_MINUTES}-minute grid: {text}")
        return bin_


def parse_timestamp(text: str) -> dt.datetime:
    """Parse an ISO-8601 timestamp to a naive wall-clock datetime.

    A trailing 'Z' or explicit offset is accepted; the offset is discarded,
    keeping the written wall-clock value.
    """
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    parsed = dt.datetime.fromisoformat(cleaned)
    return parsed.replace(tzinfo=None)


def snap_to_bin(text: str) -> TimeBin:
    """Parse a timestamp and snap it down to the containing bin."""
    return TimeBin.from_datetime(parse_timestamp(text))


def bin_range(first: TimeBin, last: TimeBin) -> list[TimeBin]:
    """All bins from `first` to `last`, inclusive."""
    if last < first:
        raise ValueError("bin range end precedes start")
    return [TimeBin.from_index(i) for i in range(first.index(), last.index() + 1)]
