# -*- coding: utf-8 -*-

"""
lob_cusum.trades_through
========================
This module extracts trades-through (market events exhausting one or more
displayed limits) from book snapshots and trade prints, and turns them into
event streams for the Hawkes model and the CUSUM detectors.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import LobCusumError, MalformedRow, MissingSnapshot
from .hawkes import MarkedEvent
from .ingest import (
    Aggressor,
    BookSnapshot,
    TradePrint,
    check_monotone,
    int_column,
    read_csv_frame,
)

logger = logging.getLogger(__name__)

TRADES_THROUGH_COLUMNS = ["ts_ns", "side", "depth", "volume"]
MIN_MARK = 1.0


class Side(IntEnum):
    BID = 1
    ASK = -1

    @property
    def stream(self) -> int:
        """Hawkes stream index: A (ask side) is 0, B (bid side) is 1."""
        return 0 if self is Side.ASK else 1


class StreamMode(str, Enum):
    BID = "bid"
    ASK = "ask"
    BOTH = "both"

    @property
    def streams(self) -> tuple:
        return {"bid": (1,), "ask": (0,), "both": (0, 1)}[self.value]


class Multiplicity(str, Enum):
    GROUND = "ground"
    PER_LIMIT = "per-limit"


@dataclass(frozen=True)
class TradeThrough:
    """
    A market event exhausting the first `depth` limits of one side.

    Args:
        timestamp:          nanoseconds
        side:               `Side.BID` when bids were consumed (sell
                            aggressor), `Side.ASK` otherwise
        depth:              number of limits exhausted, >= 1
        volume:             aggregated executed shares
    """

    timestamp: int
    side: Side
    depth: int
    volume: int

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise LobCusumError("Invalid trade-through depth. Must be >= 1.")
        if self.volume <= 0:
            raise LobCusumError("Invalid trade-through volume. Must be positive.")


@dataclass
class EventStream:
    """
    Point stream of one book side. `jumps` holds the counting increment of
    each point: one in ground mode, the exhausted depth in per-limit mode.
    """

    name: str
    times_ns: np.ndarray
    jumps: np.ndarray
    marks: np.ndarray
    depths: np.ndarray

    def __len__(self) -> int:
        return int(self.times_ns.size)

    @property
    def count(self) -> int:
        return int(self.jumps.sum())


def exhausted_depth(levels: Sequence[int], volume: int) -> int:
    """Number of leading levels whose cumulative size is covered by `volume`."""
    return int(np.searchsorted(np.cumsum(levels), volume, side="right"))


def extract(
    snapshots: Sequence[BookSnapshot],
    prints: Sequence[TradePrint],
    depth: Optional[int] = None,
) -> List[TradeThrough]:
    """
    Extracts trades-through. Prints sharing timestamp and aggressor form one
    market event whose volume is matched against the latest snapshot strictly
    before it; reaching the cumulative size of a level counts as exhausting it.

    Args:
        snapshots:          book snapshots sorted by time
        prints:             trade prints sorted by time
        depth:              optional cap on reported depth

    Returns:
        list of `TradeThrough` in time order

    Raises:
        MissingSnapshot
    """
    book_times = np.array([s.timestamp for s in snapshots], dtype=np.int64)
    events = []
    for timestamp, group in itertools.groupby(prints, key=lambda p: p.timestamp):
        volumes: Dict[Aggressor, int] = {}
        for fill in group:
            volumes[fill.aggressor] = volumes.get(fill.aggressor, 0) + fill.size
        index = int(np.searchsorted(book_times, timestamp, side="left")) - 1
        if index < 0:
            raise MissingSnapshot(timestamp)
        book = snapshots[index]
        for aggressor, volume in volumes.items():
            sizes = [size for _, size in book.attacked_levels(aggressor)]
            exhausted = exhausted_depth(sizes, volume)
            if depth is not None:
                exhausted = min(exhausted, depth)
            if exhausted == 0:
                continue
            side = Side.BID if aggressor is Aggressor.SELL else Side.ASK
            events.append(TradeThrough(timestamp, side, exhausted, volume))
    logger.info(f"Extracted {len(events)} trades-through from {len(prints)} prints.")
    return events


def to_streams(
    events: Sequence[TradeThrough],
    mode: StreamMode = StreamMode.BOTH,
    multiplicity: Multiplicity = Multiplicity.GROUND,
) -> Dict[str, EventStream]:
    """
    Splits trades-through into per-side streams, "A" for the ask side and "B"
    for the bid side, keeping the sides selected by `mode`.
    """
    mode, multiplicity = StreamMode(mode), Multiplicity(multiplicity)
    streams = {}
    for side, name in ((Side.ASK, "A"), (Side.BID, "B")):
        if side.stream not in mode.streams:
            continue
        chosen = [e for e in events if e.side is side]
        depths = np.array([e.depth for e in chosen], dtype=np.int64)
        streams[name] = EventStream(
            name=name,
            times_ns=np.array([e.timestamp for e in chosen], dtype=np.int64),
            jumps=(
                depths
                if multiplicity is Multiplicity.PER_LIMIT
                else np.ones_like(depths)
            ),
            marks=np.array([e.volume for e in chosen], dtype=float),
            depths=depths,
        )
    return streams


def merge_streams(streams: Sequence[EventStream], name: str = "merged") -> EventStream:
    """Superposition of streams, stably ordered by time."""
    if not streams:
        empty = np.array([], dtype=np.int64)
        return EventStream(name, empty, empty, np.array([]), empty)
    times = np.concatenate([s.times_ns for s in streams])
    order = np.argsort(times, kind="stable")

    def stacked(attribute: str) -> np.ndarray:
        return np.concatenate([getattr(s, attribute) for s in streams])[order]

    return EventStream(
        name=name,
        times_ns=times[order].astype(np.int64),
        jumps=stacked("jumps"),
        marks=stacked("marks"),
        depths=stacked("depths"),
    )


def per_limit_streams(stream: EventStream, depth: int) -> List[np.ndarray]:
    """
    Arrival times of the per-limit counting processes N^1..N^depth: an event
    exhausting d limits is an arrival of every N^n with n <= d.
    """
    return [stream.times_ns[stream.depths >= n] for n in range(1, depth + 1)]


def to_marked_events(
    events: Sequence[TradeThrough], origin_ns: int
) -> List[MarkedEvent]:
    """
    Converts trades-through into Hawkes events timed in seconds from
    `origin_ns`, with volumes as marks (floored at one share).
    """
    marked = []
    for event in events:
        if event.timestamp < origin_ns:
            raise LobCusumError(
                f"Event at ts_ns={event.timestamp} precedes the session origin."
            )
        marked.append(
            MarkedEvent(
                time=(event.timestamp - origin_ns) / 1e9,
                stream=event.side.stream,
                mark=max(float(event.volume), MIN_MARK),
                depth=event.depth,
            )
        )
    return marked


def from_marked_events(
    events: Sequence[MarkedEvent], origin_ns: int
) -> List[TradeThrough]:
    """Inverse of `to_marked_events` up to rounding of times and volumes."""
    return [
        TradeThrough(
            timestamp=origin_ns + int(round(e.time * 1e9)),
            side=Side.ASK if e.stream == 0 else Side.BID,
            depth=e.depth,
            volume=max(int(round(e.mark)), 1),
        )
        for e in events
    ]


def write_trades_through_csv(events: Sequence[TradeThrough], path: str) -> None:
    rows = [(e.timestamp, int(e.side), e.depth, e.volume) for e in events]
    pd.DataFrame(rows, columns=TRADES_THROUGH_COLUMNS).to_csv(
        path, index=False, lineterminator="\n"
    )


def read_trades_through_csv(path: str) -> List[TradeThrough]:
    """
    Reads a `ts_ns,side,depth,volume` file with side +1 (bid) or -1 (ask).

    Raises:
        MalformedRow, NonMonotoneTime
    """
    frame = read_csv_frame(path, TRADES_THROUGH_COLUMNS)
    lines = np.arange(len(frame)) + 2
    signs = frame["side"].astype(str).str.strip()
    ts = int_column(frame, "ts_ns", lines)
    depths = int_column(frame, "depth", lines)
    volumes = int_column(frame, "volume", lines)
    check_monotone(ts, lines)
    events = []
    for line, t, sign, d, v in zip(lines, ts, signs, depths, volumes):
        if sign not in ("1", "+1", "-1"):
            raise MalformedRow(int(line), f"invalid side '{sign}'")
        if d < 1 or v < 1:
            raise MalformedRow(int(line), "depth and volume must be positive")
        side = Side.ASK if sign == "-1" else Side.BID
        events.append(TradeThrough(int(t), side, int(d), int(v)))
    return events
