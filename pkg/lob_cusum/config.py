# -*- coding: utf-8 -*-

"""
lob_cusum.config
================
This module provides run configuration: the trading session window used to
filter auction phases and the validated configuration of a CLI run.
"""
import datetime
import json
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np

from .errors import ConfigError

DAY_NS = 86_400 * 1_000_000_000

COMMANDS = (
    "ingest",
    "synth",
    "extract",
    "simulate",
    "fit",
    "diagnose",
    "detect",
    "arl",
    "calibrate",
    "verify",
)
STOCHASTIC_COMMANDS = frozenset({"synth", "simulate", "verify"})

_POSITIVE_OPTIONS = (
    "depth",
    "horizon",
    "duration",
    "m",
    "target",
    "reps",
    "rate",
    "lags",
    "n_bins",
    "max_iters",
    "paths",
    "sample_every",
)
_RHO_OPTIONS = ("rho", "rho_up", "rho_down")


def _time_of_day_ns(text: str) -> int:
    try:
        tod = datetime.time.fromisoformat(text.strip())
    except ValueError:
        raise ConfigError(f"Invalid time of day '{text}'. Expected HH:MM:SS.")
    seconds = (tod.hour * 60 + tod.minute) * 60 + tod.second
    return seconds * 1_000_000_000 + tod.microsecond * 1_000


def _format_tod(ns: int) -> str:
    seconds = ns // 1_000_000_000
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


@dataclass(frozen=True)
class SessionWindow:
    """
    Half-open time-of-day window `[start, end)` selecting the continuous
    trading session. Time of day of a timestamp is `ts_ns mod 24h` (UTC).

    Args:
        start_ns:           session start as nanoseconds after midnight
        end_ns:             session end as nanoseconds after midnight

    Example:

    >>> window = SessionWindow.parse("09:30:00-17:00:00")
    >>> window.duration_seconds
    27000.0
    """

    start_ns: int
    end_ns: int

    def __post_init__(self) -> None:
        if not isinstance(self.start_ns, int) or not isinstance(self.end_ns, int):
            raise ConfigError(
                "Invalid type for session bounds. Must be integer nanoseconds."
            )
        if not 0 <= self.start_ns < self.end_ns <= DAY_NS:
            raise ConfigError("Invalid session window. Start must precede end.")

    @classmethod
    def parse(cls, text: str) -> "SessionWindow":
        """
        Parses `HH:MM:SS-HH:MM:SS` notation.

        Args:
            text:           window as two times of day joined by a dash

        Returns:
            `SessionWindow` instance
        """
        if not isinstance(text, str) or text.count("-") != 1:
            raise ConfigError(
                f"Invalid session window '{text}'. Expected HH:MM:SS-HH:MM:SS."
            )
        start, end = text.split("-")
        return cls(_time_of_day_ns(start), _time_of_day_ns(end))

    @property
    def duration_seconds(self) -> float:
        return (self.end_ns - self.start_ns) / 1e9

    def contains(self, ts_ns: Union[int, np.ndarray]) -> Union[bool, np.ndarray]:
        tod = np.mod(ts_ns, DAY_NS)
        inside = (tod >= self.start_ns) & (tod < self.end_ns)
        if isinstance(ts_ns, np.ndarray):
            return inside
        return bool(inside)

    def origin_ns(self, ts_ns: int) -> int:
        """Session start on the day of `ts_ns`."""
        return int(ts_ns) - int(ts_ns) % DAY_NS + self.start_ns

    def __str__(self) -> str:
        return f"{_format_tod(self.start_ns)}-{_format_tod(self.end_ns)}"


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Reads a JSON object of option defaults.

    Args:
        path:               path to a JSON file

    Returns:
        dictionary of option names and values
    """
    try:
        with open(path, "r") as file:
            data = json.load(file)
    except (OSError, json.JSONDecodeError):
        raise ConfigError(f"Unable to read config file '{path}': {sys.exc_info()[0]}")
    if not isinstance(data, dict):
        raise ConfigError("Invalid config file. Top level must be a JSON object.")
    return data


def check_keys(options: Mapping[str, Any], allowed: Iterable[str]) -> None:
    unknown = sorted(set(options) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}.")


@dataclass
class RunConfig:
    """
    Validated configuration of one CLI run.

    Args:
        command:            subcommand name
        options:            subcommand options (paths, model and detector
                            parameters) keyed by option name
        seed:               seed for stochastic subcommands
        session:            session window filtering the input data
    """

    command: str
    options: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    session: Optional[SessionWindow] = None

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown subcommand '{self.command}'.")
        if self.seed is not None and (
            not isinstance(self.seed, int) or isinstance(self.seed, bool)
        ):
            raise ConfigError("Invalid type for argument 'seed'. Must be an integer.")
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ConfigError(f"Subcommand '{self.command}' requires --seed.")
        if self.seed is not None and self.seed < 0:
            raise ConfigError("Invalid value for argument 'seed'. Must be >= 0.")
        for name in _POSITIVE_OPTIONS:
            value = self.options.get(name)
            if value is not None and not value > 0:
                raise ConfigError(f"Invalid value for argument '{name}'. Must be > 0.")
        for name in _RHO_OPTIONS:
            value = self.options.get(name)
            if value is not None and (value <= 0 or value == 1):
                raise ConfigError(
                    f"Invalid value for argument '{name}'. Must be > 0 and != 1."
                )

    @classmethod
    def from_options(
        cls, command: str, options: Mapping[str, Any], allowed: Iterable[str]
    ) -> "RunConfig":
        """
        Builds configuration from parsed options, rejecting unknown keys.

        Args:
            command:        subcommand name
            options:        parsed option values
            allowed:        option names the subcommand accepts

        Returns:
            `RunConfig` instance
        """
        check_keys(options, allowed)
        opts = dict(options)
        seed = opts.pop("seed", None)
        session = opts.pop("session", None)
        if isinstance(session, str):
            session = SessionWindow.parse(session)
        return cls(command=command, options=opts, seed=seed, session=session)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "options": {k: self.options[k] for k in sorted(self.options)},
            "seed": self.seed,
            "session": None if self.session is None else str(self.session),
        }
