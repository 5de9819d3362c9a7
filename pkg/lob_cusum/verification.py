# -*- coding: utf-8 -*-

"""
lob_cusum.verification
======================
This module provides the epsilon-shift constructions that separate
simultaneous jumps of several counting processes, a convergence check of the
reflected CUSUM statistics under the shift, and Monte-Carlo oracles for the
average run length and detection delay of the detectors.

The convergence check runs on drawn Poisson paths by default, or on observed
per-limit streams compensated by a reference rate, a fitted Hawkes model or
any stateless clock.

Every replication draws from `numpy.random.default_rng([seed, rep])`, so
results depend only on the seed and the replication index.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .cusum import (
    Clock,
    ConstantRateClock,
    CusumConfig,
    CusumDetector,
    Direction,
    HawkesReferenceClock,
)
from .errors import LobCusumError
from .hawkes import HawkesParams, MarkedEvent
from .scale import beta_of_rho

logger = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"
EXPONENTIAL_BATCH = 256
DEFAULT_HORIZON = 100.0

Reference = Union[float, HawkesParams, Clock]


@dataclass
class EpsilonShift:
    """
    Shifted arrival times of D counting processes. Stream i (1-based) moves
    by `(i / D) * epsilon * g`, g being the smallest gap between consecutive
    distinct arrivals of all streams up to the moved one, time zero included.

    Args:
        epsilon:            shift scale, positive
        direction:          "forward" or "backward"
        streams:            shifted arrival times per stream
        collisions:         per stream, whether a shifted time reached the
                            neighbouring original arrival
    """

    epsilon: float
    direction: str
    streams: List[np.ndarray]
    collisions: List[bool]

    @property
    def D(self) -> int:
        return len(self.streams)

    @property
    def collided(self) -> bool:
        return any(self.collisions)


def _shift_amounts(
    streams: Sequence[np.ndarray], epsilon: float
) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
    if not epsilon > 0:
        raise LobCusumError("Invalid value for argument 'epsilon'. Must be > 0.")
    arrays = [np.asarray(s, dtype=float) for s in streams]
    for times in arrays:
        if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
            raise LobCusumError("Streams must be sorted non-negative arrival times.")
    distinct = np.unique(np.concatenate([np.zeros(1)] + arrays))
    # smallest gap among distinct arrivals up to each one
    running_gap = np.r_[0.0, np.minimum.accumulate(np.diff(distinct))]
    count = len(arrays)
    amounts = [
        (i / count) * epsilon * running_gap[np.searchsorted(distinct, times)]
        for i, times in enumerate(arrays, start=1)
    ]
    return arrays, amounts, distinct


def shift_forward(streams: Sequence[np.ndarray], epsilon: float) -> EpsilonShift:
    """
    Delays every arrival by its shift amount. A collision is a shifted time
    reaching the next distinct original arrival of any stream.

    Args:
        streams:            sorted arrival times per stream
        epsilon:            shift scale

    Returns:
        `EpsilonShift` instance
    """
    arrays, amounts, distinct = _shift_amounts(streams, epsilon)
    following = np.r_[distinct, np.inf]
    shifted, collisions = [], []
    for times, amount in zip(arrays, amounts):
        moved = times + amount
        shifted.append(moved)
        upcoming = following[np.searchsorted(distinct, times, side="right")]
        collisions.append(bool(np.any(moved >= upcoming)))
    return EpsilonShift(epsilon, FORWARD, shifted, collisions)


def shift_backward(streams: Sequence[np.ndarray], epsilon: float) -> EpsilonShift:
    """
    Advances every arrival by its shift amount, floored at zero. A collision
    is a shifted time reaching the previous distinct original arrival.
    """
    arrays, amounts, distinct = _shift_amounts(streams, epsilon)
    preceding = np.r_[-np.inf, distinct]
    shifted, collisions = [], []
    for times, amount in zip(arrays, amounts):
        moved = np.maximum(times - amount, 0.0)
        shifted.append(moved)
        earlier = preceding[np.searchsorted(distinct, times, side="left")]
        collisions.append(bool(np.any((moved <= earlier) & (times > 0))))
    return EpsilonShift(epsilon, BACKWARD, shifted, collisions)


def counting_process(times: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Number of arrivals in [0, t] for every t of `grid`."""
    return np.searchsorted(np.asarray(times, dtype=float), grid, side="right")


def reference_clock(reference: Reference) -> Clock:
    """
    Fresh compensator clock of a reference model. A positive rate gives a
    homogeneous Poisson clock; `HawkesParams` give a Hawkes clock summing both
    streams, scaled by the mean depths; any other clock is returned as is and
    must not keep state between calls.
    """
    if isinstance(reference, HawkesParams):
        return HawkesReferenceClock(reference, scale=reference.mean_depth)
    if isinstance(reference, (int, float)) and not isinstance(reference, bool):
        return ConstantRateClock(float(reference))
    if callable(reference):
        return reference
    raise LobCusumError(
        "Invalid type for argument 'reference'. Must be a rate, "
        "`HawkesParams` or a clock."
    )


def reference_compensator(
    clock: Clock, times: np.ndarray, history: Sequence[MarkedEvent] = ()
) -> np.ndarray:
    """
    Reference compensator from time zero to each of `times`. A clock with a
    `record` method is fed the `history` events as they are passed.

    Args:
        clock:              compensator clock
        times:              evaluation times, any order
        history:            events sorted by time driving the clock

    Returns:
        array of compensator values
    """
    times = np.asarray(times, dtype=float)
    if isinstance(clock, ConstantRateClock):
        return clock.rate * times
    record = getattr(clock, "record", None)
    events = list(history)
    values = np.empty(times.size)
    total, last, k = 0.0, 0.0, 0
    for index in np.argsort(times, kind="stable"):
        t = float(times[index])
        while k < len(events) and events[k].time < t:
            total += clock(last, events[k].time)
            last = events[k].time
            if record is not None:
                record(events[k])
            k += 1
        total += clock(last, t)
        last = t
        values[index] = total
    return values


def _reflected(
    times: np.ndarray,
    sizes: np.ndarray,
    jump_compensator: np.ndarray,
    checkpoints: np.ndarray,
    checkpoint_compensator: np.ndarray,
    beta: float,
    direction: Direction,
) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    after = np.cumsum(sizes) - beta * jump_compensator
    before = after - sizes
    seen = np.searchsorted(times, checkpoints, side="right")
    counts = np.r_[0.0, np.cumsum(sizes)][seen]
    u = counts - beta * checkpoint_compensator
    if Direction(direction) is Direction.DOWN:
        peaks = np.r_[0.0, np.maximum(np.maximum.accumulate(after), 0.0)]
        return peaks[seen] - u
    troughs = np.r_[0.0, np.minimum(np.minimum.accumulate(before), 0.0)]
    return u - np.minimum(troughs[seen], u)


def reflected_values(
    jump_times: np.ndarray,
    jump_sizes: np.ndarray,
    reference: Reference,
    beta: float,
    checkpoints: np.ndarray,
    direction: Direction,
    history: Sequence[MarkedEvent] = (),
) -> np.ndarray:
    """
    Reflected statistics at `checkpoints` for `U(t) = N(t) - beta * Lambda(t)`,
    Lambda being the reference compensator. The decrease statistic is
    `sup_{s<=t} U(s) - U(t)`, the increase statistic `U(t) - inf_{s<=t} U(s)`;
    neither restarts.

    Args:
        jump_times:         sorted distinct jump times
        jump_sizes:         size of each jump
        reference:          summed reference rate, `HawkesParams` or a clock
        beta:               drift coefficient
        checkpoints:        evaluation times
        direction:          `Direction.DOWN` or `Direction.UP`
        history:            events driving a Hawkes reference

    Returns:
        array of reflected values
    """
    times = np.asarray(jump_times, dtype=float)
    checkpoints = np.asarray(checkpoints, dtype=float)
    compensator = reference_compensator(
        reference_clock(reference), np.r_[times, checkpoints], history
    )
    return _reflected(
        times,
        jump_sizes,
        compensator[: times.size],
        checkpoints,
        compensator[times.size :],
        beta,
        direction,
    )


def _merged(streams: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    times = np.concatenate([np.asarray(s, dtype=float) for s in streams])
    return np.unique(times, return_counts=True)


def reflected_gap(
    streams: Sequence[np.ndarray],
    reference: Reference,
    rho: float,
    epsilon: float,
    checkpoints: np.ndarray,
    history: Sequence[MarkedEvent] = (),
) -> Tuple[np.ndarray, EpsilonShift]:
    """
    Absolute difference of the reflected statistic of the summed streams and
    of their epsilon-shifted version at `checkpoints`. A decrease (rho < 1)
    uses the forward shift, an increase the backward shift; both paths are
    compensated by one reference clock driven by `history`.

    Returns:
        tuple of the gaps and the `EpsilonShift` applied
    """
    beta = beta_of_rho(rho)
    direction = Direction.DOWN if rho < 1 else Direction.UP
    shift = (shift_forward if rho < 1 else shift_backward)(streams, epsilon)
    checkpoints = np.asarray(checkpoints, dtype=float)
    original, moved = _merged(streams), _merged(shift.streams)
    n, k = original[0].size, moved[0].size
    compensator = reference_compensator(
        reference_clock(reference),
        np.r_[original[0], moved[0], checkpoints],
        history,
    )
    at_checkpoints = compensator[n + k :]
    before = _reflected(
        *original, compensator[:n], checkpoints, at_checkpoints, beta, direction
    )
    after = _reflected(
        *moved, compensator[n : n + k], checkpoints, at_checkpoints, beta, direction
    )
    return np.abs(after - before), shift


@dataclass
class ConvergenceReport:
    """
    Mean absolute gaps of the reflected statistic per epsilon, with standard
    errors, collision rates and counts of paths breaking the pathwise
    ordering of counting processes outside collisions.
    """

    rho: float
    epsilons: np.ndarray
    mean_gap: np.ndarray
    std_error: np.ndarray
    collision_rate: np.ndarray
    ordering_violations: np.ndarray
    tolerance: float

    @property
    def decreasing(self) -> bool:
        """Gaps do not increase along the grid beyond two standard errors."""
        bands = 2.0 * np.hypot(self.std_error[:-1], self.std_error[1:])
        return bool(np.all(self.mean_gap[1:] <= self.mean_gap[:-1] + bands))

    @property
    def passed(self) -> bool:
        return self.decreasing and bool(self.mean_gap[-1] < self.tolerance)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "epsilon": self.epsilons.tolist(),
            "mean_gap": self.mean_gap.tolist(),
            "std_error": self.std_error.tolist(),
            "collision_rate": self.collision_rate.tolist(),
            "ordering_violations": self.ordering_violations.tolist(),
            "tolerance": self.tolerance,
            "decreasing": self.decreasing,
            "passed": self.passed,
        }


def _ordering_broken(
    streams: Sequence[np.ndarray], shift: EpsilonShift, grid: np.ndarray
) -> bool:
    for times, moved, collided in zip(streams, shift.streams, shift.collisions):
        if collided:
            continue
        original, shifted = counting_process(times, grid), counting_process(moved, grid)
        if shift.direction == FORWARD and np.any(shifted > original):
            return True
        if shift.direction == BACKWARD and np.any(shifted < original):
            return True
    return False


def _poisson_path(
    rng: np.random.Generator,
    rate: float,
    horizon: float,
    depths: np.ndarray,
    probs: np.ndarray,
) -> List[np.ndarray]:
    times = np.sort(rng.uniform(0.0, horizon, rng.poisson(rate * horizon)))
    drawn = rng.choice(depths, size=times.size, p=probs)
    return [times[drawn >= i] for i in depths]


def _as_paths(streams: Sequence) -> List[List[np.ndarray]]:
    if len(streams) and all(isinstance(s, np.ndarray) for s in streams):
        streams = [streams]
    paths = [[np.asarray(s, dtype=float) for s in path] for path in streams]
    if not paths or any(len(path) == 0 for path in paths):
        raise LobCusumError(
            "Invalid value for argument 'streams'. Each path needs a stream."
        )
    return paths


def _as_histories(
    history: Optional[Sequence], count: int
) -> List[Sequence[MarkedEvent]]:
    if history is None or len(history) == 0:
        return [()] * count
    if all(isinstance(e, MarkedEvent) for e in history):
        history = [history]
    if len(history) != count:
        raise LobCusumError(
            f"Invalid 'history'. Must hold one event list per path, got "
            f"{len(history)} for {count} paths."
        )
    return list(history)


def _default_horizon(
    ref_model: Optional[Reference], paths: Sequence[Sequence[np.ndarray]]
) -> float:
    if isinstance(ref_model, HawkesParams):
        return ref_model.horizon
    last = [float(s[-1]) for path in paths for s in path if s.size]
    return max(last, default=DEFAULT_HORIZON)


def check_reflected_convergence(
    rho: float,
    eps_grid: Sequence[float],
    streams: Optional[Sequence] = None,
    ref_model: Optional[Reference] = None,
    history: Optional[Sequence] = None,
    rate: float = 1.0,
    horizon: Optional[float] = None,
    depth_probs: Sequence[float] = (0.5, 0.3, 0.2),
    paths: int = 1000,
    seed: int = 0,
    tolerance: float = 0.05,
) -> ConvergenceReport:
    """
    Checks that the reflected statistic of epsilon-shifted per-limit streams
    approaches the one with simultaneous jumps. Gaps are averaged over decile
    checkpoints of [0, horizon].

    Observed `streams` are either one path, a list of sorted per-limit arrival
    arrays N^1..N^D in seconds, or a list of such paths. Without them, `paths`
    Poisson paths are drawn at `rate` with depths from `depth_probs`; an event
    of depth d is an arrival of streams 1..d. Standard errors run over paths,
    or over checkpoints when a single path is given.

    Args:
        rho:                post-change ratio selecting the statistic
        eps_grid:           decreasing epsilon values
        streams:            observed per-limit streams, drawn when omitted
        ref_model:          reference rate, `HawkesParams` or a stateless
                            clock; required with observed streams, the
                            drawn paths' summed rate otherwise
        history:            events driving a Hawkes reference, one list per
                            path
        rate:               event rate of drawn paths
        horizon:            checkpoint range, by default the reference
                            horizon, the last observed arrival or 100 seconds
        depth_probs:        distribution of event depths 1..D of drawn paths
        paths:              number of drawn paths
        seed:               random seed of drawn paths
        tolerance:          bound on the mean gap at the smallest epsilon

    Returns:
        `ConvergenceReport` instance
    """
    epsilons = np.asarray(eps_grid, dtype=float)
    if epsilons.size == 0 or np.any(np.diff(epsilons) >= 0) or np.any(epsilons <= 0):
        raise LobCusumError("Invalid epsilon grid. Must be positive and decreasing.")
    if streams is None:
        if not isinstance(paths, int) or paths < 2:
            raise LobCusumError("Invalid value for argument 'paths'. Must be >= 2.")
        probs = np.asarray(depth_probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise LobCusumError("Invalid 'depth_probs'. Must be a distribution.")
        depths = np.arange(1, probs.size + 1)
        horizon = _default_horizon(ref_model, []) if horizon is None else horizon
        observed = [
            _poisson_path(
                np.random.default_rng([seed, p]), rate, horizon, depths, probs
            )
            for p in range(paths)
        ]
        histories: List[Sequence[MarkedEvent]] = [()] * paths
        if ref_model is None:
            ref_model = rate * float(np.dot(depths, probs))
    else:
        if ref_model is None:
            raise LobCusumError("Checking observed streams requires 'ref_model'.")
        observed = _as_paths(streams)
        histories = _as_histories(history, len(observed))
        if horizon is None:
            horizon = _default_horizon(ref_model, observed)
    if not horizon > 0:
        raise LobCusumError("Invalid value for argument 'horizon'. Must be > 0.")
    checkpoints = horizon * np.arange(1, 11) / 10.0

    count = len(observed)
    gaps = np.zeros((count, epsilons.size, checkpoints.size))
    collided = np.zeros((count, epsilons.size), dtype=bool)
    broken = np.zeros((count, epsilons.size), dtype=bool)
    for p, (path, events) in enumerate(zip(observed, histories)):
        for j, epsilon in enumerate(epsilons):
            gap, shift = reflected_gap(
                path, ref_model, rho, epsilon, checkpoints, events
            )
            gaps[p, j] = gap
            collided[p, j] = shift.collided
            broken[p, j] = _ordering_broken(path, shift, checkpoints)

    path_means = gaps.mean(axis=2)
    if count > 1:
        std_error = path_means.std(axis=0, ddof=1) / np.sqrt(count)
    else:
        std_error = gaps[0].std(axis=1, ddof=1) / np.sqrt(checkpoints.size)
    report = ConvergenceReport(
        rho=rho,
        epsilons=epsilons,
        mean_gap=path_means.mean(axis=0),
        std_error=std_error,
        collision_rate=collided.mean(axis=0),
        ordering_violations=broken.sum(axis=0),
        tolerance=tolerance,
    )
    logger.info(
        f"Epsilon-shift check at rho={rho}: mean gaps "
        f"{np.round(report.mean_gap, 6).tolist()} over {count} paths (seed={seed})."
    )
    return report


class _PoissonArrivals:
    """Arrival times of a Poisson process drawn in batches."""

    def __init__(self, rng: np.random.Generator, rate: float, start: float = 0.0):
        self.rng = rng
        self.rate = rate
        self.now = start
        self._gaps = np.empty(0)
        self._index = 0

    def next(self) -> float:
        if self._index == self._gaps.size:
            self._gaps = self.rng.exponential(1.0 / self.rate, EXPONENTIAL_BATCH)
            self._index = 0
        self.now += float(self._gaps[self._index])
        self._index += 1
        return self.now


def _events_to_alarm(
    config: CusumConfig,
    arrival_rate: float,
    clock_rate: float,
    rng: np.random.Generator,
) -> int:
    detector = CusumDetector(config)
    clock = ConstantRateClock(clock_rate)
    arrivals = _PoissonArrivals(rng, arrival_rate)
    while True:
        alarms = detector.step(arrivals.next(), 1, clock)
        if alarms:
            return alarms[0].event_count


def _check_mc(rho: float, m: float, rate: float, reps: int) -> CusumConfig:
    if not rate > 0:
        raise LobCusumError("Invalid value for argument 'rate'. Must be > 0.")
    if not isinstance(reps, int) or reps < 1:
        raise LobCusumError("Invalid value for argument 'reps'. Must be >= 1.")
    return CusumConfig(rho, m)


def _mean_and_error(values: np.ndarray) -> Tuple[float, float]:
    if values.size < 2:
        return float(values.mean()), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def mc_arl(
    rho: float, m: float, rate: float = 1.0, reps: int = 10_000, seed: int = 0
) -> Tuple[float, float]:
    """
    Monte-Carlo average run length: homogeneous Poisson events at `rate`
    with no change, detector of ratio `rho` started fresh, event count at the
    first alarm averaged over `reps` replications.

    Returns:
        tuple of mean event count at alarm and its standard error
    """
    config = _check_mc(rho, m, rate, reps)
    counts = np.array(
        [
            _events_to_alarm(config, rate, rate, np.random.default_rng([seed, rep]))
            for rep in range(reps)
        ],
        dtype=float,
    )
    mean, error = _mean_and_error(counts)
    logger.info(f"MC ARL rho={rho} m={m}: {mean:.4f} +/- {error:.4f} (seed={seed}).")
    return mean, error


def mc_edd(
    rho: float, m: float, rate: float = 1.0, reps: int = 10_000, seed: int = 0
) -> Tuple[float, float]:
    """
    Monte-Carlo detection delay from a fresh detector: events arrive at
    `rho * rate` while the detector compensates at the reference `rate`.

    Returns:
        tuple of mean event count at alarm and its standard error
    """
    config = _check_mc(rho, m, rate, reps)
    counts = np.array(
        [
            _events_to_alarm(
                config, rho * rate, rate, np.random.default_rng([seed, rep])
            )
            for rep in range(reps)
        ],
        dtype=float,
    )
    mean, error = _mean_and_error(counts)
    logger.info(f"MC EDD rho={rho} m={m}: {mean:.4f} +/- {error:.4f} (seed={seed}).")
    return mean, error


@dataclass
class ChangeDelayReport:
    """
    Outcome of runs with an intensity change injected at a known time.

    Args:
        delay_mean:         mean events from the change to the first alarm
                            after it
        delay_std_error:    standard error of the mean delay
        pre_change_events:  events before the change, all paths
        false_alarms:       alarms before the change, all paths
    """

    delay_mean: float
    delay_std_error: float
    pre_change_events: int
    false_alarms: int

    @property
    def events_per_false_alarm(self) -> float:
        if self.false_alarms == 0:
            return float("inf")
        return self.pre_change_events / self.false_alarms


def _delay_after_change(
    config: CusumConfig, rate: float, change_time: float, rng: np.random.Generator
) -> Tuple[int, int, int]:
    detector = CusumDetector(config)
    clock = ConstantRateClock(rate)
    arrivals = _PoissonArrivals(rng, rate)
    false_alarms = 0
    while True:
        t = arrivals.next()
        if t >= change_time:
            break
        false_alarms += len(detector.step(t, 1, clock))
    false_alarms += sum(
        a.time < change_time for a in detector.advance(change_time, clock)
    )
    at_change = detector.state.event_count

    arrivals = _PoissonArrivals(rng, config.rho * rate, start=change_time)
    while True:
        alarms = detector.step(arrivals.next(), 1, clock)
        if alarms:
            return alarms[0].event_count - at_change, at_change, false_alarms


def mc_change_delay(
    rho: float,
    m: float,
    rate: float = 1.0,
    change_time: float = 100.0,
    reps: int = 500,
    seed: int = 0,
) -> ChangeDelayReport:
    """
    Monte-Carlo runs with the Poisson intensity switching from `rate` to
    `rho * rate` at `change_time`. The detector restarts after every alarm
    and compensates at the reference rate throughout.

    Returns:
        `ChangeDelayReport` instance
    """
    config = _check_mc(rho, m, rate, reps)
    if not change_time > 0:
        raise LobCusumError("Invalid value for argument 'change_time'. Must be > 0.")
    outcomes = np.array(
        [
            _delay_after_change(
                config, rate, change_time, np.random.default_rng([seed, rep])
            )
            for rep in range(reps)
        ]
    )
    mean, error = _mean_and_error(outcomes[:, 0].astype(float))
    return ChangeDelayReport(
        delay_mean=mean,
        delay_std_error=error,
        pre_change_events=int(outcomes[:, 1].sum()),
        false_alarms=int(outcomes[:, 2].sum()),
    )
