"""Pattern algebra over (Z_p* ∪ {⊥})^ℓ.

A pattern is a fixed-length vector of slots. The first ``uri_slots`` slots
encode a slash-separated resource path (one hashed component per slot); the
optional three trailing slots encode a year/month/day epoch. ``None`` is the
wildcard ⊥.
"""
from __future__ import annotations

import calendar
import datetime as dt
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import (
    EmptyComponent,
    InvalidEpoch,
    InvalidPattern,
    InvalidRange,
    LayoutMismatch,
    MalformedEncoding,
    TooManyComponents,
)
from .pairing import GROUP_ORDER, SCALAR_SIZE, hash_to_scalar

Slot = Optional[int]

MAX_SLOTS = 65535
URI_TAG = b"slie:uri:"
TIME_TAG = b"slie:time:"


@dataclass(frozen=True)
class SlotLayout:
    uri_slots: int = 14
    time_slots: int = 3

    def __post_init__(self):
        if self.uri_slots < 1:
            raise InvalidPattern("layout needs at least one URI slot")
        if self.time_slots not in (0, 3):
            raise InvalidPattern("time_slots must be 0 or 3")
        if self.total_slots > MAX_SLOTS:
            raise InvalidPattern(f"layout exceeds {MAX_SLOTS} slots")

    @property
    def total_slots(self) -> int:
        return self.uri_slots + self.time_slots


DEFAULT_LAYOUT = SlotLayout(14, 3)


@dataclass(frozen=True, order=True)
class TimeEpoch:
    """A node of the year / month / day tree."""

    year: int
    month: Optional[int] = None
    day: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.year <= 9999:
            raise InvalidEpoch(f"year {self.year} out of range")
        if self.day is not None and self.month is None:
            raise InvalidEpoch("day given without month")
        if self.month is not None and not 1 <= self.month <= 12:
            raise InvalidEpoch(f"month {self.month} out of range")
        if self.day is not None:
            last = calendar.monthrange(self.year, self.month)[1]
            if not 1 <= self.day <= last:
                raise InvalidEpoch(f"{self.year}-{self.month:02d} has no day {self.day}")

    @classmethod
    def of(cls, day: dt.date) -> TimeEpoch:
        return cls(day.year, day.month, day.day)

    @property
    def first_day(self) -> dt.date:
        return dt.date(self.year, self.month or 1, self.day or 1)

    @property
    def last_day(self) -> dt.date:
        if self.day is not None:
            return self.first_day
        if self.month is not None:
            return dt.date(self.year, self.month, calendar.monthrange(self.year, self.month)[1])
        return dt.date(self.year, 12, 31)

    def components(self) -> tuple[Optional[int], ...]:
        return (self.year, self.month, self.day)

    def __str__(self) -> str:
        parts = [f"{self.year:04d}"]
        if self.month is not None:
            parts.append(f"{self.month:02d}")
        if self.day is not None:
            parts.append(f"{self.day:02d}")
        return "-".join(parts)


@dataclass(frozen=True)
class Pattern:
    layout: SlotLayout
    slots: tuple[Slot, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if len(self.slots) != self.layout.total_slots:
            raise InvalidPattern(
                f"pattern has {len(self.slots)} slots, layout needs {self.layout.total_slots}"
            )
        for v in self.slots:
            if v is not None and not 0 < v < GROUP_ORDER:
                raise InvalidPattern("slot values must lie in [1, p-1]")
        uri = self.slots[: self.layout.uri_slots]
        depth = self._depth(uri)
        if any(v is not None for v in uri[depth:]):
            raise InvalidPattern("URI slots must be filled left to right without gaps")

    @staticmethod
    def _depth(uri: Sequence[Slot]) -> int:
        for i, v in enumerate(uri):
            if v is None:
                return i
        return len(uri)

    @classmethod
    def wildcard(cls, layout: SlotLayout = DEFAULT_LAYOUT) -> Pattern:
        return cls(layout, (None,) * layout.total_slots)

    def __len__(self) -> int:
        return len(self.slots)

    def __getitem__(self, i: int) -> Slot:
        return self.slots[i]

    @property
    def fixed(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.slots) if v is not None)

    @property
    def free(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.slots) if v is None)

    @property
    def uri_depth(self) -> int:
        return self._depth(self.slots[: self.layout.uri_slots])

    def with_epoch(self, epoch: Optional[TimeEpoch]) -> Pattern:
        if self.layout.time_slots == 0:
            if epoch is None:
                return self
            raise InvalidEpoch("layout has no time slots")
        head = self.slots[: self.layout.uri_slots]
        return Pattern(self.layout, head + _epoch_slots(epoch))

    def to_bytes(self) -> bytes:
        n = len(self.slots)
        bitmap = bytearray((n + 7) // 8)
        for i in self.fixed:
            bitmap[i // 8] |= 1 << (i % 8)
        body = b"".join(self.slots[i].to_bytes(SCALAR_SIZE, "big") for i in self.fixed)
        return struct.pack(">HH", n, self.layout.uri_slots) + bytes(bitmap) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> Pattern:
        pattern, used = cls.read(data, 0)
        if used != len(data):
            raise MalformedEncoding("trailing bytes after pattern")
        return pattern

    @classmethod
    def read(cls, data: bytes, offset: int) -> tuple[Pattern, int]:
        """Parse a pattern at ``offset``; returns it and the next offset."""
        try:
            n, uri_slots = struct.unpack_from(">HH", data, offset)
        except struct.error as exc:
            raise MalformedEncoding("truncated pattern header") from exc
        offset += 4
        nbytes = (n + 7) // 8
        bitmap = data[offset : offset + nbytes]
        if len(bitmap) != nbytes:
            raise MalformedEncoding("truncated pattern bitmap")
        offset += nbytes
        if n % 8 and bitmap[-1] >> (n % 8):
            raise MalformedEncoding("bitmap bits set beyond slot count")
        slots: list[Slot] = []
        for i in range(n):
            if bitmap[i // 8] >> (i % 8) & 1:
                chunk = data[offset : offset + SCALAR_SIZE]
                if len(chunk) != SCALAR_SIZE:
                    raise MalformedEncoding("truncated pattern slot")
                slots.append(int.from_bytes(chunk, "big"))
                offset += SCALAR_SIZE
            else:
                slots.append(None)
        try:
            layout = SlotLayout(uri_slots, n - uri_slots)
            return cls(layout, tuple(slots)), offset
        except InvalidPattern as exc:
            raise MalformedEncoding(str(exc)) from exc

    def describe(self) -> str:
        """Short human-readable rendering: fixed slots as hex prefixes, ⊥ as '*'."""
        cells = ["*" if v is None else f"{v:064x}"[:8] for v in self.slots]
        uri = "/".join(cells[: self.layout.uri_slots])
        if self.layout.time_slots:
            return f"[{uri} | {'-'.join(cells[self.layout.uri_slots:])}]"
        return f"[{uri}]"


def _epoch_slots(epoch: Optional[TimeEpoch]) -> tuple[Slot, ...]:
    if epoch is None:
        return (None, None, None)
    return tuple(
        None if c is None else hash_to_scalar(str(c).encode(), TIME_TAG + str(i).encode())
        for i, c in enumerate(epoch.components())
    )


def split_uri(uri: str) -> list[str]:
    """Canonical component list: repeated and trailing slashes collapse."""
    parts = [p for p in uri.split("/") if p != ""]
    for p in parts:
        if not p.strip():
            raise EmptyComponent(f"blank path component in {uri!r}")
    return parts


def pattern_from_uri(
    uri: str, layout: SlotLayout = DEFAULT_LAYOUT, epoch: Optional[TimeEpoch] = None
) -> Pattern:
    parts = split_uri(uri)
    if len(parts) > layout.uri_slots:
        raise TooManyComponents(
            f"{uri!r} has {len(parts)} components, layout allows {layout.uri_slots}"
        )
    uri_slots: list[Slot] = [
        hash_to_scalar(p.encode("utf-8"), URI_TAG + str(i).encode()) for i, p in enumerate(parts)
    ]
    uri_slots += [None] * (layout.uri_slots - len(parts))
    if layout.time_slots == 0:
        if epoch is not None:
            raise InvalidEpoch("layout has no time slots")
        return Pattern(layout, tuple(uri_slots))
    return Pattern(layout, tuple(uri_slots) + _epoch_slots(epoch))


def _check_layouts(a: Pattern, b: Pattern) -> None:
    if a.layout != b.layout:
        raise LayoutMismatch(f"layouts differ: {a.layout} vs {b.layout}")


def matches(key_pattern: Pattern, ct_pattern: Pattern) -> bool:
    """True iff a key for ``key_pattern`` can open a ciphertext for ``ct_pattern``."""
    _check_layouts(key_pattern, ct_pattern)
    return all(k is None or k == c for k, c in zip(key_pattern.slots, ct_pattern.slots))


def extends(parent: Pattern, child: Pattern) -> bool:
    """True iff ``child`` is reachable from ``parent`` by fixing wildcard slots."""
    _check_layouts(parent, child)
    return all(p is None or p == c for p, c in zip(parent.slots, child.slots))


def cover_time_range(start: dt.date, end: dt.date) -> list[TimeEpoch]:
    """Minimal chronological set of epoch-tree nodes covering [start, end] exactly."""
    if start > end:
        raise InvalidRange(f"start {start} is after end {end}")
    out: list[TimeEpoch] = []
    day = start
    while day <= end:
        year_node = TimeEpoch(day.year)
        month_node = TimeEpoch(day.year, day.month)
        if day == year_node.first_day and year_node.last_day <= end:
            node = year_node
        elif day.day == 1 and month_node.last_day <= end:
            node = month_node
        else:
            node = TimeEpoch.of(day)
        out.append(node)
        if node.last_day == dt.date.max:
            break
        day = node.last_day + dt.timedelta(days=1)
    return out


def covered_days(nodes: Iterable[TimeEpoch]) -> list[dt.date]:
    days: list[dt.date] = []
    for node in nodes:
        d = node.first_day
        while d <= node.last_day:
            days.append(d)
            d += dt.timedelta(days=1)
    return days
