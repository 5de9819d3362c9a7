# -*- coding: utf-8 -*-

"""
lob_cusum.cusum
===============
This module provides the streaming CUSUM detectors for a change of intensity
by a factor rho in a point process with simultaneous jumps, the compensator
clocks feeding them and the two-sided regime run over a trading session.

The log-likelihood ratio in units of ln(rho) is `U = N - beta(rho) * Lambda`.
A decrease (rho < 1) is signalled when `sup U - U` exceeds the threshold m,
an increase (rho > 1) when `U - inf U` does.
"""
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import bisect

from .errors import InvalidRho, LobCusumError, TimeRegression
from .hawkes import HawkesParams, IntensityState, MarkedEvent, compensator_increment
from .scale import beta_of_rho
from .trades_through import Multiplicity, StreamMode

logger = logging.getLogger(__name__)

REGIME_COLUMNS = ["ts_ns", "U", "U_tilde", "U_hat", "alarm", "regime"]
CROSSING_TOLERANCE = 1e-9

# compensator increment over [t0, t1] with no events in (t0, t1]
Clock = Callable[[float, float], float]


class Direction(str, Enum):
    UP = "UP"
    DOWN = "DOWN"


class Regime(str, Enum):
    UP = "UP"
    DOWN = "DOWN"
    NEUTRAL = "NEUTRAL"


@dataclass(frozen=True)
class CusumConfig:
    """
    Detector settings.

    Args:
        rho:                post-change intensity ratio, positive and not one
        m:                  alarm threshold, positive
        max_jump:           largest simultaneous jump accepted
    """

    rho: float
    m: float
    max_jump: int = 1

    def __post_init__(self) -> None:
        beta_of_rho(self.rho)
        if not self.m > 0:
            raise LobCusumError("Invalid value for argument 'm'. Must be > 0.")
        if not isinstance(self.max_jump, int) or self.max_jump < 1:
            raise LobCusumError("Invalid value for argument 'max_jump'. Must be >= 1.")

    @property
    def direction(self) -> Direction:
        return Direction.DOWN if self.rho < 1 else Direction.UP

    @property
    def beta(self) -> float:
        return beta_of_rho(self.rho)


@dataclass(frozen=True)
class Alarm:
    time: float
    event_count: int
    direction: Direction


@dataclass
class DetectorState:
    """
    Running state of one detector. `reflected` is `running_max - u` for a
    decrease detector and `u - running_min` for an increase detector.
    """

    u: float = 0.0
    running_max: float = 0.0
    running_min: float = 0.0
    reflected: float = 0.0
    event_count: int = 0
    last_time: float = 0.0
    alarms: List[Alarm] = field(default_factory=list)


def llr_increment(jump: float, compensator: float, rho: float) -> float:
    """Increment of U for a jump of size `jump` and compensator increment."""
    return jump - beta_of_rho(rho) * compensator


class ConstantRateClock:
    """Compensator of a homogeneous Poisson reference with the given rate."""

    def __init__(self, rate: float) -> None:
        if not rate > 0:
            raise LobCusumError("Invalid value for argument 'rate'. Must be > 0.")
        self.rate = rate

    def __call__(self, t0: float, t1: float) -> float:
        return self.rate * (t1 - t0)


class HawkesReferenceClock:
    """
    Compensator of the reference Hawkes model driven by the observed history.
    Events must be recorded as they are passed.

    Args:
        params:             reference model parameters
        streams:            stream indices whose compensators are summed
        scale:              per-stream multipliers, e.g. mean depths
    """

    def __init__(
        self,
        params: HawkesParams,
        streams: Sequence[int] = (0, 1),
        scale: Optional[Sequence[float]] = None,
    ) -> None:
        self.params = params
        self.streams = tuple(streams)
        self.scale = np.ones(2) if scale is None else np.asarray(scale, dtype=float)
        self.state = IntensityState()

    def __call__(self, t0: float, t1: float) -> float:
        return sum(
            self.scale[i] * compensator_increment(t0, t1, i, self.state, self.params)
            for i in self.streams
        )

    def record(self, event: MarkedEvent) -> None:
        self.state.record(event, self.params)


def _restart(state: DetectorState) -> None:
    state.running_max = state.running_min = state.u
    state.reflected = 0.0


def _crossing_time(
    clock: Clock, t0: float, t1: float, budget: float, beta: float
) -> float:
    if budget <= 0:
        return t0
    return float(
        bisect(
            lambda s: beta * clock(t0, s) - budget, t0, t1, xtol=CROSSING_TOLERANCE
        )
    )


def advance(
    config: CusumConfig, state: DetectorState, t: float, clock: Clock
) -> List[Alarm]:
    """
    Moves the detector to `t` without events. The decrease statistic grows
    with the compensator and may cross the threshold, possibly repeatedly
    after restarts; the increase statistic decays and is reflected at zero.

    Returns:
        alarms raised on the way, in time order
    """
    if t < state.last_time:
        raise TimeRegression(f"Cannot step from {state.last_time} back to {t}.")
    beta = config.beta
    alarms = []
    while True:
        drift = beta * clock(state.last_time, t)
        if config.direction is Direction.DOWN and state.reflected + drift > config.m:
            when = _crossing_time(
                clock, state.last_time, t, config.m - state.reflected, beta
            )
            state.u -= beta * clock(state.last_time, when)
            state.last_time = when
            alarm = Alarm(when, state.event_count, Direction.DOWN)
            alarms.append(alarm)
            state.alarms.append(alarm)
            _restart(state)
            continue
        state.u -= drift
        if config.direction is Direction.DOWN:
            state.reflected = state.running_max - state.u
        else:
            state.running_min = min(state.running_min, state.u)
            state.reflected = state.u - state.running_min
        state.last_time = t
        return alarms


def jump(config: CusumConfig, state: DetectorState, size: int) -> Optional[Alarm]:
    """
    Applies a jump of `size` simultaneous events at the current time. Only
    the increase detector can alarm here.
    """
    if size < 0 or size > config.max_jump:
        raise LobCusumError(
            f"Invalid jump size {size}. Must be in 0..{config.max_jump}."
        )
    state.u += size
    state.event_count += size
    if config.direction is Direction.DOWN:
        state.running_max = max(state.running_max, state.u)
        state.reflected = state.running_max - state.u
        return None
    state.reflected = state.u - state.running_min
    if state.reflected > config.m:
        alarm = Alarm(state.last_time, state.event_count, Direction.UP)
        state.alarms.append(alarm)
        _restart(state)
        return alarm
    return None


def detector_step(
    config: CusumConfig, state: DetectorState, t: float, size: int, clock: Clock
) -> List[Alarm]:
    """
    One detector update: quiet advance to `t`, then a jump of `size` events
    at `t` (zero for a pure advance).

    Returns:
        alarms raised during the step
    """
    alarms = advance(config, state, t, clock)
    if size:
        alarm = jump(config, state, size)
        if alarm is not None:
            alarms.append(alarm)
    return alarms


class CusumDetector:
    """
    Single-owner streaming detector.

    Args:
        config:             `CusumConfig` instance
        start_time:         time the statistic starts from

    Example:

    >>> detector = CusumDetector(CusumConfig(rho=1.5, m=5))
    >>> clock = ConstantRateClock(1.0)
    >>> detector.step(0.3, 1, clock)
    []
    """

    def __init__(self, config: CusumConfig, start_time: float = 0.0) -> None:
        if not isinstance(config, CusumConfig):
            raise LobCusumError(
                "Invalid type for argument 'config'. Must be a `CusumConfig`."
            )
        self.config = config
        self.state = DetectorState(last_time=start_time)

    @property
    def statistic(self) -> float:
        return self.state.reflected

    def advance(self, t: float, clock: Clock) -> List[Alarm]:
        return advance(self.config, self.state, t, clock)

    def jump(self, size: int) -> Optional[Alarm]:
        return jump(self.config, self.state, size)

    def step(self, t: float, size: int, clock: Clock) -> List[Alarm]:
        return detector_step(self.config, self.state, t, size, clock)

    def restart(self) -> None:
        _restart(self.state)


@dataclass
class RegimeReport:
    """
    Regime time series of a session: the increase-detector log-likelihood
    ratio `U`, both reflected statistics, alarms and regime labels.
    `ignored_events` counts events of book sides the run does not watch.
    """

    frame: pd.DataFrame
    alarms: List[Alarm]
    ignored_events: int = 0

    def alarm_count(self, direction: Direction) -> int:
        return sum(1 for a in self.alarms if a.direction is direction)

    def to_csv(self, path: str) -> None:
        self.frame.to_csv(path, index=False, lineterminator="\n", float_format="%.9g")


class _TwoSidedRun:
    def __init__(
        self,
        up: CusumDetector,
        down: CusumDetector,
        clock: HawkesReferenceClock,
        origin_ns: int,
    ) -> None:
        self.up = up
        self.down = down
        self.clock = clock
        self.origin_ns = origin_ns
        self.regime = Regime.NEUTRAL
        self.alarms: List[Alarm] = []
        self.rows: List[tuple] = []

    def emit(self, t: float, alarm: str = "0") -> None:
        self.rows.append(
            (
                self.origin_ns + int(round(t * 1e9)),
                self.up.state.u,
                self.down.statistic,
                self.up.statistic,
                alarm,
                self.regime.value,
            )
        )

    def quiet(self, t: float) -> None:
        for alarm in self.down.advance(t, self.clock):
            self.up.advance(alarm.time, self.clock)
            self.up.restart()
            self.regime = Regime.DOWN
            self.alarms.append(alarm)
            self.emit(alarm.time, Direction.DOWN.value)
        self.up.advance(t, self.clock)

    def arrive(self, t: float, size: int) -> None:
        self.quiet(t)
        self.down.jump(size)
        alarm = self.up.jump(size)
        if alarm is None:
            self.emit(t)
            return
        self.down.restart()
        self.regime = Regime.UP
        self.alarms.append(alarm)
        self.emit(t, Direction.UP.value)


def run_two_sided(
    events: Sequence[MarkedEvent],
    ref_params: HawkesParams,
    rho_up: float,
    rho_down: float,
    m: float,
    *,
    multiplicity: Multiplicity = Multiplicity.GROUND,
    mode: StreamMode = StreamMode.BOTH,
    end_time: Optional[float] = None,
    sample_every: Optional[float] = None,
    origin_ns: int = 0,
) -> RegimeReport:
    """
    Runs increase and decrease detectors side by side on one session. The
    reference compensator applies `ref_params` to the session's own history;
    in per-limit mode jumps are event depths and the compensator is scaled by
    the reference mean depth. An alarm of either detector restarts both.

    Args:
        events:             session events sorted by time (seconds from the
                            session origin)
        ref_params:         reference-day model parameters
        rho_up:             ratio of the increase detector, > 1
        rho_down:           ratio of the decrease detector, < 1
        m:                  common threshold
        multiplicity:       ground (unit jumps) or per-limit (depth jumps)
        mode:               book sides counted by the detectors
        end_time:           time the run continues to after the last event,
                            `ref_params.horizon` by default
        sample_every:       optional spacing of extra rows between events
        origin_ns:          timestamp of time zero for the `ts_ns` column

    Returns:
        `RegimeReport` instance
    """
    if not rho_down < 1 < rho_up:
        raise InvalidRho(f"Need rho_down < 1 < rho_up, got {rho_down}, {rho_up}.")
    if sample_every is not None and not sample_every > 0:
        raise LobCusumError("Invalid value for argument 'sample_every'. Must be > 0.")
    multiplicity, mode = Multiplicity(multiplicity), StreamMode(mode)
    per_limit = multiplicity is Multiplicity.PER_LIMIT
    counted = mode.streams
    groups = [
        (t, list(group)) for t, group in itertools.groupby(events, key=lambda e: e.time)
    ]
    sizes = [
        sum((e.depth if per_limit else 1) for e in group if e.stream in counted)
        for _, group in groups
    ]
    max_jump = max(sizes + [1])
    ignored = sum(1 for e in events if e.stream not in counted)
    if ignored:
        logger.debug(f"Ignoring {ignored} events outside mode '{mode.value}'.")

    clock = HawkesReferenceClock(
        ref_params, counted, ref_params.mean_depth if per_limit else None
    )
    run = _TwoSidedRun(
        up=CusumDetector(CusumConfig(rho_up, m, max_jump)),
        down=CusumDetector(CusumConfig(rho_down, m, max_jump)),
        clock=clock,
        origin_ns=origin_ns,
    )
    end = ref_params.horizon if end_time is None else float(end_time)
    samples = iter(np.arange(sample_every, end, sample_every) if sample_every else [])
    next_sample = next(samples, None)

    for (t, group), size in zip(groups, sizes):
        while next_sample is not None and next_sample < t:
            run.quiet(next_sample)
            run.emit(next_sample)
            next_sample = next(samples, None)
        if size:
            run.arrive(t, size)
        else:
            run.quiet(t)
        for event in group:
            clock.record(event)

    while next_sample is not None:
        run.quiet(next_sample)
        run.emit(next_sample)
        next_sample = next(samples, None)
    if end > run.up.state.last_time:
        run.quiet(end)
        run.emit(end)

    logger.info(
        f"Regime run over {len(events)} events: "
        f"{sum(a.direction is Direction.UP for a in run.alarms)} UP and "
        f"{sum(a.direction is Direction.DOWN for a in run.alarms)} DOWN alarms."
    )
    return RegimeReport(
        pd.DataFrame(run.rows, columns=REGIME_COLUMNS), run.alarms, ignored
    )
