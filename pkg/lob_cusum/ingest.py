# -*- coding: utf-8 -*-

"""
lob_cusum.ingest
================
This module parses tick-level order book and trade files into top-K book
snapshots and trade prints, writes them back in the same schemas and
generates synthetic sessions for tests.
"""
import logging
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SessionWindow
from .errors import CrossedBook, LobCusumError, MalformedRow, NonMonotoneTime

logger = logging.getLogger(__name__)

BOOK_COLUMNS = ["ts_ns", "side", "level", "price_ticks", "size"]
TRADE_COLUMNS = ["ts_ns", "price_ticks", "size", "aggressor"]

RowFilter = Callable[[Mapping[str, str]], bool]
Level = Tuple[int, int]


class Aggressor(str, Enum):
    BUY = "B"
    SELL = "S"


@dataclass(frozen=True)
class BookSnapshot:
    """
    Top-K order book at one instant. Levels are `(price_ticks, size)` pairs
    ordered best-first.

    Args:
        timestamp:          nanoseconds
        bids:               bid levels, prices strictly decreasing
        asks:               ask levels, prices strictly increasing
    """

    timestamp: int
    bids: Tuple[Level, ...]
    asks: Tuple[Level, ...]

    @property
    def depth(self) -> int:
        return max(len(self.bids), len(self.asks))

    def attacked_levels(self, aggressor: Aggressor) -> Tuple[Level, ...]:
        """Levels consumed by a market order of the given aggressor."""
        return self.asks if aggressor is Aggressor.BUY else self.bids


@dataclass(frozen=True)
class TradePrint:
    """
    One fill reported by the matching engine.

    Args:
        timestamp:          nanoseconds
        price:              price in ticks
        size:               executed shares, positive
        aggressor:          side of the incoming market order
    """

    timestamp: int
    price: int
    size: int
    aggressor: Aggressor

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise LobCusumError("Invalid trade size. Must be a positive integer.")


@dataclass(frozen=True)
class SynthConfig:
    """
    Synthetic session generator settings.

    Args:
        depth:              number of displayed levels per side
        refresh_rate:       book updates per second without trading
        trade_rate:         market orders per second
        through_prob:       probability a market order exhausts at least the
                            first level
        depth_probs:        distribution of exhausted levels 1..depth given a
                            trade-through
        size_range:         inclusive range of displayed level sizes
        start_price:        initial best bid in ticks
        tick_size:          price step between levels and of every move, in
                            ticks
        start_ns:           timestamp of the opening snapshot
    """

    depth: int = 4
    refresh_rate: float = 1.0
    trade_rate: float = 0.5
    through_prob: float = 0.2
    depth_probs: Tuple[float, ...] = (0.7, 0.2, 0.07, 0.03)
    size_range: Tuple[int, int] = (50, 500)
    start_price: int = 10_000
    tick_size: int = 1
    start_ns: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.depth, int) or self.depth < 1:
            raise LobCusumError("Invalid value for argument 'depth'. Must be >= 1.")
        if self.refresh_rate < 0 or self.trade_rate < 0:
            raise LobCusumError("Invalid event rate. Rates must be non-negative.")
        if not 0.0 <= self.through_prob <= 1.0:
            raise LobCusumError("Invalid value for argument 'through_prob'.")
        probs = np.asarray(self.depth_probs, dtype=float)
        if probs.size != self.depth or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise LobCusumError(
                "Invalid 'depth_probs'. Must be a distribution over 1..depth."
            )
        low, high = self.size_range
        if low < 2 or high < low:
            raise LobCusumError("Invalid 'size_range'. Sizes must be >= 2.")
        if not isinstance(self.tick_size, int) or self.tick_size < 1:
            raise LobCusumError("Invalid value for argument 'tick_size'. Must be >= 1.")
        if self.start_price % self.tick_size:
            raise LobCusumError(
                "Invalid 'start_price'. Must be a multiple of 'tick_size'."
            )
        if self.start_price <= self.floor_price - self.tick_size:
            raise LobCusumError("Invalid 'start_price'. Too close to zero.")

    @property
    def floor_price(self) -> int:
        """Lowest best bid keeping every displayed bid above zero."""
        return self.tick_size * (self.depth + 1)

    @property
    def through_rate(self) -> float:
        """Expected trades-through per second."""
        return self.trade_rate * self.through_prob


def read_csv_frame(path: str, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except FileNotFoundError:
        raise LobCusumError(f"Input file not found: {path}")
    except pd.errors.EmptyDataError:
        raise MalformedRow(1, "missing header")
    except pd.errors.ParserError as exc:
        raise MalformedRow(_parser_error_line(exc), "wrong number of fields")
    except Exception:
        raise LobCusumError(f"Unable to read {path}: {sys.exc_info()[0]}")
    if list(frame.columns) != columns:
        raise MalformedRow(1, f"header must be '{','.join(columns)}'")
    return frame


def _parser_error_line(exc: Exception) -> int:
    # pandas reports "Expected 5 fields in line 7, saw 6"
    words = str(exc).replace(",", " ").split()
    for word, following in zip(words, words[1:]):
        if word == "line" and following.isdigit():
            return int(following)
    return 0


def int_column(frame: pd.DataFrame, name: str, lines: np.ndarray) -> np.ndarray:
    column = frame[name].astype(str).str.strip()
    valid = column.str.fullmatch(r"\d+").to_numpy(dtype=bool)
    if not valid.all():
        bad = int(np.flatnonzero(~valid)[0])
        raise MalformedRow(int(lines[bad]), f"invalid {name} '{column.iat[bad]}'")
    return column.astype("int64").to_numpy()


def _code_column(
    frame: pd.DataFrame, name: str, codes: Sequence[str], lines: np.ndarray
) -> np.ndarray:
    column = frame[name].astype(str).str.strip().to_numpy()
    valid = np.isin(column, codes)
    if not valid.all():
        bad = int(np.flatnonzero(~valid)[0])
        raise MalformedRow(int(lines[bad]), f"invalid {name} '{column[bad]}'")
    return column


def check_monotone(ts: np.ndarray, lines: np.ndarray) -> None:
    backwards = np.flatnonzero(np.diff(ts) < 0)
    if backwards.size:
        raise NonMonotoneTime(int(lines[backwards[0] + 1]))


def _keep_mask(
    frame: pd.DataFrame,
    ts: np.ndarray,
    session: Optional[SessionWindow],
    row_filter: Optional[RowFilter],
) -> np.ndarray:
    keep = np.ones(len(frame), dtype=bool)
    if session is not None:
        keep &= session.contains(ts)
    if row_filter is not None and len(frame):
        keep &= np.array(
            [bool(row_filter(row)) for row in frame.to_dict("records")], dtype=bool
        )
    dropped = int((~keep).sum())
    if dropped:
        logger.info(f"Filtered out {dropped} of {len(frame)} rows.")
    return keep


def _side_levels(
    code: str,
    levels: np.ndarray,
    prices: np.ndarray,
    sizes: np.ndarray,
    lines: np.ndarray,
) -> Tuple[Tuple[Level, ...], int]:
    order = np.argsort(levels, kind="stable")
    levels, prices, sizes, lines = (
        levels[order],
        prices[order],
        sizes[order],
        lines[order],
    )
    gaps = np.flatnonzero(levels != np.arange(1, levels.size + 1))
    if gaps.size:
        raise MalformedRow(
            int(lines[gaps[0]]), "levels must be unique and contiguous from 1"
        )
    steps = np.diff(prices)
    if code == "B":
        bad = np.flatnonzero(steps >= 0)
        reason = "bid prices must strictly decrease with level"
    else:
        bad = np.flatnonzero(steps <= 0)
        reason = "ask prices must strictly increase with level"
    if bad.size:
        raise MalformedRow(int(lines[bad[0] + 1]), reason)
    best_line = int(lines[0]) if lines.size else 0
    return tuple(zip(prices.tolist(), sizes.tolist())), best_line


def parse_book_csv(
    path: str,
    depth: int = 4,
    session: Optional[SessionWindow] = None,
    row_filter: Optional[RowFilter] = None,
) -> List[BookSnapshot]:
    """
    Reads a book file with `ts_ns,side,level,price_ticks,size` rows, one row
    per level. Rows sharing `ts_ns` form one snapshot; levels beyond `depth`
    are discarded.

    Args:
        path:               path to the book CSV
        depth:              number of levels kept per side
        session:            optional session window; rows outside are dropped
        row_filter:         optional predicate over raw rows (column name to
                            string value); rows failing it are dropped

    Returns:
        list of `BookSnapshot` in timestamp order

    Raises:
        MalformedRow, NonMonotoneTime, CrossedBook
    """
    if not isinstance(depth, int) or depth < 1:
        raise LobCusumError("Invalid value for argument 'depth'. Must be >= 1.")

    frame = read_csv_frame(path, BOOK_COLUMNS)
    lines = np.arange(len(frame)) + 2
    ts = int_column(frame, "ts_ns", lines)
    sides = _code_column(frame, "side", ("B", "A"), lines)
    levels = int_column(frame, "level", lines)
    prices = int_column(frame, "price_ticks", lines)
    sizes = int_column(frame, "size", lines)

    for name, values, low in (("level", levels, 1), ("size", sizes, 1)):
        bad = np.flatnonzero(values < low)
        if bad.size:
            raise MalformedRow(int(lines[bad[0]]), f"{name} must be positive")
    check_monotone(ts, lines)

    keep = _keep_mask(frame, ts, session, row_filter) & (levels <= depth)
    ts, sides, levels, prices, sizes, lines = (
        a[keep] for a in (ts, sides, levels, prices, sizes, lines)
    )

    snapshots = []
    # group starts plus the end sentinel
    bounds = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1], True]) if ts.size else []
    for begin, end in zip(bounds[:-1], bounds[1:]):
        group = slice(begin, end)
        books = {}
        for code in ("B", "A"):
            mask = sides[group] == code
            books[code] = _side_levels(
                code,
                levels[group][mask],
                prices[group][mask],
                sizes[group][mask],
                lines[group][mask],
            )
        (bids, bid_line), (asks, ask_line) = books["B"], books["A"]
        if bids and asks and bids[0][0] >= asks[0][0]:
            raise CrossedBook(max(bid_line, ask_line))
        snapshots.append(BookSnapshot(int(ts[begin]), bids, asks))

    logger.info(f"Parsed {len(snapshots)} book snapshots from {path}.")
    return snapshots


def parse_trades_csv(
    path: str,
    session: Optional[SessionWindow] = None,
    row_filter: Optional[RowFilter] = None,
) -> List[TradePrint]:
    """
    Reads a trade file with `ts_ns,price_ticks,size,aggressor` rows.

    Args:
        path:               path to the trades CSV
        session:            optional session window; rows outside are dropped
        row_filter:         optional predicate over raw rows, e.g. to drop
                            block or off-book prints

    Returns:
        list of `TradePrint` in timestamp order

    Raises:
        MalformedRow, NonMonotoneTime
    """
    frame = read_csv_frame(path, TRADE_COLUMNS)
    lines = np.arange(len(frame)) + 2
    ts = int_column(frame, "ts_ns", lines)
    prices = int_column(frame, "price_ticks", lines)
    sizes = int_column(frame, "size", lines)
    aggressors = _code_column(frame, "aggressor", ("B", "S"), lines)

    zero = np.flatnonzero(sizes == 0)
    if zero.size:
        raise MalformedRow(int(lines[zero[0]]), "size must be positive")
    check_monotone(ts, lines)

    keep = _keep_mask(frame, ts, session, row_filter)
    prints = [
        TradePrint(int(t), int(p), int(s), Aggressor(a))
        for t, p, s, a in zip(ts[keep], prices[keep], sizes[keep], aggressors[keep])
    ]
    logger.info(f"Parsed {len(prints)} trade prints from {path}.")
    return prints


def write_book_csv(snapshots: Sequence[BookSnapshot], path: str) -> None:
    rows = []
    for snap in snapshots:
        for code, levels in (("B", snap.bids), ("A", snap.asks)):
            for level, (price, size) in enumerate(levels, start=1):
                rows.append((snap.timestamp, code, level, price, size))
    pd.DataFrame(rows, columns=BOOK_COLUMNS).to_csv(
        path, index=False, lineterminator="\n"
    )


def write_trades_csv(prints: Sequence[TradePrint], path: str) -> None:
    rows = [(p.timestamp, p.price, p.size, p.aggressor.value) for p in prints]
    pd.DataFrame(rows, columns=TRADE_COLUMNS).to_csv(
        path, index=False, lineterminator="\n"
    )


def _draw_book(
    rng: np.random.Generator, timestamp: int, best_bid: int, config: SynthConfig
) -> BookSnapshot:
    low, high = config.size_range
    sizes = rng.integers(low, high + 1, size=2 * config.depth).tolist()
    steps = range(config.depth)
    tick = config.tick_size
    bids = tuple((best_bid - k * tick, sizes[k]) for k in steps)
    asks = tuple((best_bid + (1 + k) * tick, sizes[config.depth + k]) for k in steps)
    return BookSnapshot(timestamp, bids, asks)


def _market_order(
    rng: np.random.Generator, book: BookSnapshot, timestamp: int, config: SynthConfig
) -> Tuple[List[TradePrint], int]:
    aggressor = Aggressor.BUY if rng.random() < 0.5 else Aggressor.SELL
    levels = book.attacked_levels(aggressor)
    sizes = [size for _, size in levels]

    exhausted = 0
    if rng.random() < config.through_prob:
        exhausted = int(rng.choice(config.depth, p=config.depth_probs)) + 1
        partial = 0
        if exhausted < len(sizes):
            partial = int(rng.integers(0, sizes[exhausted]))
        volume = sum(sizes[:exhausted]) + partial
    else:
        volume = int(rng.integers(1, sizes[0]))

    fills = []
    remaining = volume
    for price, size in levels:
        take = min(size, remaining)
        if take == 0:
            break
        fills.append(TradePrint(timestamp, price, take, aggressor))
        remaining -= take
    move = config.tick_size * (exhausted if aggressor is Aggressor.BUY else -exhausted)
    return fills, move


def synth_book(
    seed: int, duration: float, config: Optional[SynthConfig] = None
) -> Tuple[List[BookSnapshot], List[TradePrint]]:
    """
    Generates a synthetic session. Book refreshes and market orders arrive
    as a Poisson stream; every market order is filled against the latest
    snapshot and followed by a replenished snapshot one nanosecond later.

    Args:
        seed:               random seed
        duration:           session length in seconds
        config:             generator settings, `SynthConfig()` by default

    Returns:
        tuple of snapshots and trade prints
    """
    if not duration > 0:
        raise LobCusumError("Invalid value for argument 'duration'. Must be > 0.")
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)

    best_bid = config.start_price
    now = config.start_ns
    end = config.start_ns + int(round(duration * 1e9))
    snapshots = [_draw_book(rng, now, best_bid, config)]
    prints: List[TradePrint] = []
    total_rate = config.refresh_rate + config.trade_rate
    if total_rate == 0:
        return snapshots, prints

    while True:
        now += max(2, int(np.ceil(rng.exponential(1.0 / total_rate) * 1e9)))
        if now >= end:
            break
        if rng.random() < config.trade_rate / total_rate:
            fills, move = _market_order(rng, snapshots[-1], now, config)
            prints.extend(fills)
            best_bid = max(best_bid + move, config.floor_price)
            snapshots.append(_draw_book(rng, now + 1, best_bid, config))
        else:
            step = config.tick_size * int(rng.integers(-1, 2))
            best_bid = max(best_bid + step, config.floor_price)
            snapshots.append(_draw_book(rng, now, best_bid, config))

    logger.debug(
        f"Synthesized {len(snapshots)} snapshots and {len(prints)} prints "
        f"(seed={seed})."
    )
    return snapshots, prints
