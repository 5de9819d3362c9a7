# -*- coding: utf-8 -*-

"""
lob_cusum.hawkes
================
This module provides the marked bivariate Hawkes model of ask (A) and bid (B)
trades-through: intensity evaluation, compensator increments, simulation by
thinning, the exact log-likelihood, maximum likelihood fitting and the
stability diagnostic.
"""
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .errors import (
    InsufficientData,
    LobCusumError,
    Nonconvergence,
    NonPositiveIntensity,
    StaleState,
    UnstableParams,
)

logger = logging.getLogger(__name__)

STREAMS = ("A", "B")
DEFAULT_BINS = 14
SCHEMA_VERSION = 1

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class MarkedEvent:
    """
    A point of the marked process.

    Args:
        time:               seconds since the session origin
        stream:             0 for A (ask side), 1 for B (bid side)
        mark:               traded volume, positive
        depth:              number of limits exhausted by the event
    """

    time: float
    stream: int
    mark: float
    depth: int = 1

    def __post_init__(self) -> None:
        if self.stream not in (0, 1):
            raise LobCusumError("Invalid stream. Must be 0 (A) or 1 (B).")
        if not self.time >= 0:
            raise LobCusumError("Invalid event time. Must be non-negative.")
        if not self.mark > 0:
            raise LobCusumError("Invalid mark. Must be positive.")
        if self.depth < 1:
            raise LobCusumError("Invalid depth. Must be >= 1.")


def _matrix(value: ArrayLike, shape: Tuple[int, ...], name: str) -> np.ndarray:
    try:
        array = np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
    except ValueError:
        raise LobCusumError(f"Invalid shape for argument '{name}'. Expected {shape}.")
    return array


@dataclass
class HawkesParams:
    """
    Parameters of the marked bivariate Hawkes model. Index 0 is stream A,
    index 1 is stream B; `alpha[i, j]` is the excitation of stream i by
    events of stream j.

    Args:
        mu:                 baseline rates, shape (2, n_bins), constant on
                            equal sub-intervals ((k-1)T/n, kT/n] of [0, T]
        alpha:              excitation matrix, non-negative
        beta:               decay matrix, positive
        eta:                mark impact exponents, non-negative
        mark_rate:          rates of the exponential mark densities
        horizon:            T in seconds
        mean_depth:         mean exhausted depth per stream
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    mark_rate: np.ndarray
    horizon: float
    mean_depth: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim == 1:
            mu = np.broadcast_to(mu, (2, mu.size))
        if mu.ndim != 2 or mu.shape[0] != 2 or mu.shape[1] < 1:
            raise LobCusumError("Invalid shape for argument 'mu'. Expected (2, bins).")
        self.mu = mu.copy()
        self.alpha = _matrix(self.alpha, (2, 2), "alpha")
        self.beta = _matrix(self.beta, (2, 2), "beta")
        self.eta = _matrix(self.eta, (2,), "eta")
        self.mark_rate = _matrix(self.mark_rate, (2,), "mark_rate")
        self.mean_depth = _matrix(self.mean_depth, (2,), "mean_depth")
        self.horizon = float(self.horizon)

        if np.any(self.mu < 0) or np.any(self.alpha < 0) or np.any(self.eta < 0):
            raise LobCusumError("Invalid parameters. mu, alpha, eta must be >= 0.")
        if np.any(self.beta <= 0) or np.any(self.mark_rate <= 0):
            raise LobCusumError("Invalid parameters. beta, mark_rate must be > 0.")
        if not self.horizon > 0:
            raise LobCusumError("Invalid value for argument 'horizon'. Must be > 0.")
        if np.any(self.mean_depth < 1):
            raise LobCusumError("Invalid 'mean_depth'. Must be >= 1.")

    @classmethod
    def constant(
        cls,
        mu: ArrayLike,
        alpha: ArrayLike,
        beta: ArrayLike,
        horizon: float,
        eta: ArrayLike = 0.0,
        mark_rate: ArrayLike = 1.0,
        n_bins: int = DEFAULT_BINS,
    ) -> "HawkesParams":
        """Parameters with a flat baseline per stream."""
        base = _matrix(mu, (2,), "mu")
        return cls(
            mu=np.repeat(base[:, None], n_bins, axis=1),
            alpha=alpha,
            beta=beta,
            eta=eta,
            mark_rate=mark_rate,
            horizon=horizon,
        )

    @property
    def n_bins(self) -> int:
        return self.mu.shape[1]

    @property
    def bin_width(self) -> float:
        return self.horizon / self.n_bins

    def baseline(self, t: ArrayLike, stream: ArrayLike) -> Any:
        """
        Baseline rate at time `t`; bins are closed on the right and the last
        bin extends past the horizon.
        """
        k = np.clip(np.ceil(np.asarray(t) / self.bin_width).astype(int) - 1, 0, None)
        value = self.mu[stream, np.minimum(k, self.n_bins - 1)]
        return float(value) if np.ndim(value) == 0 else value

    def baseline_integral(self, t0: ArrayLike, t1: ArrayLike, stream: int) -> Any:
        """Integral of the baseline of `stream` over [t0, t1]."""
        width = self.bin_width
        row = self.mu[stream]
        areas = np.r_[0.0, np.cumsum(row) * width]

        def cumulative(t: ArrayLike) -> np.ndarray:
            t = np.asarray(t, dtype=float)
            j = np.clip(np.floor(t / width).astype(int), 0, self.n_bins - 1)
            return areas[j] + row[j] * (t - j * width)

        value = cumulative(t1) - cumulative(t0)
        return float(value) if np.ndim(value) == 0 else value

    def branching_matrix(self) -> np.ndarray:
        return self.alpha / self.beta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "mu": self.mu.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "eta": self.eta.tolist(),
            "mark_rate": self.mark_rate.tolist(),
            "horizon": self.horizon,
            "mean_depth": self.mean_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HawkesParams":
        if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
            raise LobCusumError(
                f"Unsupported params document. Expected 'schema': {SCHEMA_VERSION}."
            )
        fields = {k: v for k, v in data.items() if k != "schema"}
        try:
            return cls(**fields)
        except TypeError:
            raise LobCusumError(f"Invalid params document: {sys.exc_info()[1]}")

    def save(self, path: str) -> None:
        with open(path, "w") as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
            file.write("\n")

    @classmethod
    def load(cls, path: str) -> "HawkesParams":
        try:
            with open(path, "r") as file:
                data = json.load(file)
        except (OSError, json.JSONDecodeError):
            raise LobCusumError(f"Unable to read params '{path}': {sys.exc_info()[0]}")
        return cls.from_dict(data)


def impact(v: ArrayLike, stream: ArrayLike, params: HawkesParams) -> Any:
    """
    Normalized power impact of a mark, `b^eta v^eta / Gamma(1 + eta)` with `b`
    the mark rate of the stream; its mean under the mark density is one.

    Args:
        v:                  mark(s), positive
        stream:             stream index (or array of indices) of the mark(s)
        params:             model parameters

    Returns:
        impact value(s)
    """
    v = np.asarray(v, dtype=float)
    eta = params.eta[stream]
    rate = params.mark_rate[stream]
    value = np.exp(eta * (np.log(rate) + np.log(v)) - gammaln(1.0 + eta))
    return float(value) if np.ndim(value) == 0 else value


class IntensityState:
    """
    Decayed excitation accumulators `acc[i, j] = sum over past j-events of
    g_j(v) exp(-beta_ij (last_time - tau))`, events at `last_time` included.
    """

    def __init__(self) -> None:
        self.acc = np.zeros((2, 2))
        self.last_time = 0.0

    def decayed(self, t: float, params: HawkesParams) -> np.ndarray:
        if t < self.last_time:
            raise StaleState(
                f"State updated at {self.last_time} cannot be queried at {t}."
            )
        return self.acc * np.exp(-params.beta * (t - self.last_time))

    def advance(self, t: float, params: HawkesParams) -> None:
        self.acc = self.decayed(t, params)
        self.last_time = t

    def record(self, event: MarkedEvent, params: HawkesParams) -> None:
        self.advance(event.time, params)
        self.acc[:, event.stream] += impact(event.mark, event.stream, params)

    def copy(self) -> "IntensityState":
        other = IntensityState()
        other.acc = self.acc.copy()
        other.last_time = self.last_time
        return other


def ground_intensity(
    t: float, stream: int, state: IntensityState, params: HawkesParams
) -> float:
    """
    Ground intensity of `stream` at `t`, given a state current as of some
    earlier time with no events since.
    """
    excitation = params.alpha[stream] * state.decayed(t, params)[stream]
    return params.baseline(t, stream) + float(excitation.sum())


def compensator_increment(
    t0: float, t1: float, stream: int, state: IntensityState, params: HawkesParams
) -> float:
    """
    Integral of the ground intensity of `stream` over [t0, t1] in closed form.
    No events may occur in (t0, t1].
    """
    if t1 < t0:
        raise StaleState(f"Interval end {t1} precedes start {t0}.")
    acc = state.decayed(t0, params)[stream]
    decay = params.beta[stream]
    excitation = params.alpha[stream] / decay * acc * -np.expm1(-decay * (t1 - t0))
    return params.baseline_integral(t0, t1, stream) + float(excitation.sum())


def stability(params: HawkesParams) -> Tuple[float, bool]:
    """
    Spectral radius of the branching matrix `alpha / beta` and the stability
    flag (radius below one with finite kernel moments).
    """
    ratio = params.branching_matrix()
    a, b, c, d = ratio[0, 0], ratio[0, 1], ratio[1, 0], ratio[1, 1]
    radius = 0.5 * (a + d + np.sqrt((a - d) ** 2 + 4.0 * b * c))
    finite = bool(np.all(np.isfinite(params.alpha / params.beta**2)))
    return float(radius), bool(radius < 1.0 and finite)


def simulate(
    params: HawkesParams, T: Optional[float] = None, seed: Optional[int] = None
) -> List[MarkedEvent]:
    """
    Simulates the model on [0, T] by thinning. The upper bound is the current
    intensity, which only decays until the next event or baseline bin edge.

    Args:
        params:             model parameters
        T:                  horizon, `params.horizon` by default
        seed:               random seed

    Returns:
        list of `MarkedEvent` in time order
    """
    radius, stable = stability(params)
    if not stable:
        raise UnstableParams(
            f"Spectral radius {radius:.4f} >= 1. Refusing to simulate."
        )
    horizon = params.horizon if T is None else float(T)
    rng = np.random.default_rng(seed)
    width = params.bin_width

    state = IntensityState()
    events: List[MarkedEvent] = []
    t, k = 0.0, 0
    while True:
        edge = (k + 1) * width if k < params.n_bins - 1 else np.inf
        stop = min(edge, horizon)
        base = params.mu[:, k]
        bound = base.sum() + (params.alpha * state.decayed(t, params)).sum()
        candidate = t + rng.exponential(1.0 / bound) if bound > 0 else np.inf
        if candidate >= stop:
            if stop >= horizon:
                break
            t, k = stop, k + 1
            continue
        t = candidate
        rates = base + (params.alpha * state.decayed(t, params)).sum(axis=1)
        u = rng.uniform(0.0, bound)
        if u < rates.sum():
            stream = 0 if u < rates[0] else 1
            mark = rng.exponential(1.0 / params.mark_rate[stream])
            event = MarkedEvent(t, stream, mark)
            state.record(event, params)
            events.append(event)

    logger.debug(f"Simulated {len(events)} events on [0, {horizon}] (seed={seed}).")
    return events


@dataclass
class _EventArrays:
    times: np.ndarray
    streams: np.ndarray
    marks: np.ndarray
    depths: np.ndarray
    previous: np.ndarray

    @classmethod
    def build(cls, events: Sequence[MarkedEvent]) -> "_EventArrays":
        times = np.array([e.time for e in events], dtype=float)
        if np.any(np.diff(times) < 0):
            raise LobCusumError("Events must be sorted by time.")
        return cls(
            times=times,
            streams=np.array([e.stream for e in events], dtype=int),
            marks=np.array([e.mark for e in events], dtype=float),
            depths=np.array([e.depth for e in events], dtype=float),
            # last index strictly earlier in time
            previous=np.searchsorted(times, times, side="left") - 1,
        )


def _decayed_history(
    arrays: _EventArrays, weights: np.ndarray, decay: float
) -> np.ndarray:
    """
    For every event k: sum over events m strictly before it of
    `weights[m] exp(-decay (t_k - t_m))`, as a running log-sum-exp.
    """
    out = np.zeros_like(arrays.times)
    if not arrays.times.size:
        return out
    with np.errstate(divide="ignore"):
        running = np.logaddexp.accumulate(np.log(weights) + decay * arrays.times)
    has = arrays.previous >= 0
    out[has] = np.exp(running[arrays.previous[has]] - decay * arrays.times[has])
    return out


def _log_likelihood(arrays: _EventArrays, params: HawkesParams, T: float) -> float:
    g = impact(arrays.marks, arrays.streams, params) if arrays.times.size else []
    g = np.asarray(g, dtype=float)
    total = T
    intensity = np.asarray(params.baseline(arrays.times, arrays.streams), dtype=float)
    for i in (0, 1):
        total -= params.baseline_integral(0.0, T, i)
        target = arrays.streams == i
        for j in (0, 1):
            source = arrays.streams == j
            decay = params.beta[i, j]
            tail = -np.expm1(-decay * (T - arrays.times[source]))
            total -= params.alpha[i, j] / decay * float(np.sum(g[source] * tail))
            if params.alpha[i, j] > 0:
                history = _decayed_history(arrays, np.where(source, g, 0.0), decay)
                intensity[target] += params.alpha[i, j] * history[target]
    if np.any(intensity <= 0):
        first = int(np.flatnonzero(intensity <= 0)[0])
        raise NonPositiveIntensity(
            f"Ground intensity is zero at event time {arrays.times[first]}."
        )
    rate = params.mark_rate[arrays.streams]
    total += float(np.sum(np.log(intensity)))
    total += float(np.sum(np.log(rate) - rate * arrays.marks))
    return total


def log_likelihood(
    events: Sequence[MarkedEvent], params: HawkesParams, T: Optional[float] = None
) -> float:
    """
    Exact log-likelihood of the marked path relative to the unit rate Poisson
    process, mark density term included.

    Args:
        events:             events sorted by time, within [0, T]
        params:             model parameters
        T:                  horizon, `params.horizon` by default

    Returns:
        log-likelihood value
    """
    horizon = params.horizon if T is None else float(T)
    arrays = _EventArrays.build(events)
    if arrays.times.size and (arrays.times[0] < 0 or arrays.times[-1] > horizon):
        raise LobCusumError("Events must lie within [0, T].")
    return _log_likelihood(arrays, params, horizon)


@dataclass
class FitOptions:
    """
    Likelihood maximization settings.

    Args:
        max_iters:          iteration cap of each quasi-Newton run
        tol:                relative objective tolerance
        fit_eta:            fit mark exponents; when False they stay at init
        eta_grid:           common exponent values profiled before polishing
        log_bounds:         bounds of log-transformed positive parameters
        eta_max:            upper bound of the exponents
    """

    max_iters: int = 500
    tol: float = 1e-10
    fit_eta: bool = True
    eta_grid: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    log_bounds: Tuple[float, float] = (-20.0, 8.0)
    eta_max: float = 3.0

    def __post_init__(self) -> None:
        if not isinstance(self.max_iters, int) or self.max_iters < 1:
            raise LobCusumError("Invalid value for argument 'max_iters'. Must be >= 1.")
        if not self.eta_grid or min(self.eta_grid) < 0:
            raise LobCusumError("Invalid 'eta_grid'. Values must be >= 0.")


@dataclass
class FitDiagnostics:
    log_likelihood: float
    init_log_likelihood: float
    grad_norm: float
    iterations: int
    converged: bool
    spectral_radius: float
    stable: bool
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


class _Objective:
    """Negative log-likelihood per event over packed parameters."""

    def __init__(
        self, arrays: _EventArrays, base: HawkesParams, T: float, free_eta: bool
    ) -> None:
        self.arrays = arrays
        self.base = base
        self.T = T
        self.free_eta = free_eta
        self.scale = max(arrays.times.size, 1)

    def pack(self, params: HawkesParams, low: float) -> np.ndarray:
        positives = np.r_[params.mu.ravel(), params.alpha.ravel(), params.beta.ravel()]
        packed = np.log(np.maximum(positives, np.exp(low)))
        return np.r_[packed, params.eta] if self.free_eta else packed

    def unpack(self, theta: np.ndarray) -> HawkesParams:
        n = self.base.mu.size
        values = np.exp(theta[: n + 8])
        return replace(
            self.base,
            mu=values[:n].reshape(self.base.mu.shape),
            alpha=values[n : n + 4].reshape(2, 2),
            beta=values[n + 4 : n + 8].reshape(2, 2),
            eta=theta[n + 8 :] if self.free_eta else self.base.eta,
        )

    def __call__(self, theta: np.ndarray) -> float:
        try:
            value = _log_likelihood(self.arrays, self.unpack(theta), self.T)
        except NonPositiveIntensity:
            return 1e10
        return -value / self.scale


def _maximize(
    objective: _Objective, start: HawkesParams, opts: FitOptions
) -> Tuple[HawkesParams, Any]:
    low, high = opts.log_bounds
    theta0 = objective.pack(start, low)
    bounds = [(low, high)] * (theta0.size - (2 if objective.free_eta else 0))
    if objective.free_eta:
        bounds += [(0.0, opts.eta_max)] * 2
    result = minimize(
        objective,
        theta0,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": opts.max_iters, "ftol": opts.tol},
    )
    # the optimizer reports its last iterate; never hand back a worse point
    if result.fun > objective(theta0):
        return start, result
    return objective.unpack(result.x), result


def fit_mle(
    events: Sequence[MarkedEvent],
    T: float,
    init: HawkesParams,
    opts: Optional[FitOptions] = None,
) -> Tuple[HawkesParams, FitDiagnostics]:
    """
    Maximum likelihood fit. Mark rates are fitted in closed form (inverse mean
    mark per stream); the ground parameters maximize the log-likelihood by
    bounded L-BFGS-B on log-transformed positives, after a profile search over
    a common mark exponent when `opts.fit_eta` is set.

    Args:
        events:             events sorted by time, at least one per stream
        T:                  observation horizon in seconds
        init:               starting parameters
        opts:               `FitOptions`, defaults when omitted

    Returns:
        tuple of fitted `HawkesParams` and `FitDiagnostics`

    Raises:
        InsufficientData, Nonconvergence
    """
    opts = opts or FitOptions()
    arrays = _EventArrays.build(events)
    counts = np.bincount(arrays.streams, minlength=2) if arrays.times.size else [0, 0]
    if min(counts) < 1:
        raise InsufficientData("Fitting requires at least one event per stream.")

    init_ll = _log_likelihood(arrays, init, T)
    mark_rate = np.array(
        [1.0 / arrays.marks[arrays.streams == i].mean() for i in (0, 1)]
    )
    mean_depth = np.array([arrays.depths[arrays.streams == i].mean() for i in (0, 1)])
    start = replace(init, mark_rate=mark_rate, mean_depth=mean_depth, horizon=T)

    if opts.fit_eta:
        best, best_ll = start, -np.inf
        for eta in opts.eta_grid:
            candidate = replace(start, eta=np.full(2, eta))
            objective = _Objective(arrays, candidate, T, False)
            fitted, _ = _maximize(objective, candidate, opts)
            value = _log_likelihood(arrays, fitted, T)
            logger.debug(f"Profile eta={eta}: log-likelihood {value:.4f}.")
            if value > best_ll:
                best, best_ll = fitted, value
        start = best
    objective = _Objective(arrays, start, T, opts.fit_eta)
    fitted, result = _maximize(objective, start, opts)

    final_ll = _log_likelihood(arrays, fitted, T)
    radius, stable = stability(fitted)
    diagnostics = FitDiagnostics(
        log_likelihood=final_ll,
        init_log_likelihood=init_ll,
        grad_norm=float(np.linalg.norm(getattr(result, "jac", np.zeros(1)))),
        iterations=int(result.nit),
        converged=bool(result.success),
        spectral_radius=radius,
        stable=stable,
        message=str(result.message),
    )
    if not result.success and result.nit >= opts.max_iters:
        raise Nonconvergence(
            f"Likelihood maximization stopped after {result.nit} iterations.",
            params=fitted,
            diagnostics=diagnostics,
        )
    logger.info(
        f"Fitted {arrays.times.size} events: log-likelihood {final_ll:.4f}, "
        f"spectral radius {radius:.4f}, {result.nit} iterations."
    )
    return fitted, diagnostics
