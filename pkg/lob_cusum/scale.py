# -*- coding: utf-8 -*-

"""
lob_cusum.scale
===============
This module provides the scale function W of the CUSUM statistics, its
derivative and integral in closed form, and the average run length (ARL) and
expected detection delay (EDD) formulas built on them. Thresholds are
calibrated by inverting the ARL.

For a post-change intensity ratio rho, `beta(rho) = (rho - 1) / ln(rho)` and

    W(x) = 1/beta * sum_{k=0}^{floor(x)} (-1)^k / k! ((x-k)/beta)^k e^{(x-k)/beta}

ARL counts events under the reference intensity until a false alarm; EDD
counts events after a change until the alarm, started from a fresh detector.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import bisect

from .errors import InvalidRho, KinkPoint, LobCusumError

logger = logging.getLogger(__name__)


def beta_of_rho(rho: float) -> float:
    """Drift coefficient `(rho - 1) / ln(rho)` of the log-likelihood ratio."""
    if not rho > 0 or rho == 1 or not math.isfinite(rho):
        raise InvalidRho(f"Invalid intensity ratio {rho}. Must be > 0 and != 1.")
    return (rho - 1.0) / math.log1p(rho - 1.0)


def _check_beta(beta: float) -> None:
    if not beta > 0:
        raise LobCusumError(f"Invalid scale parameter {beta}. Must be > 0.")


def _power_term(k: int, a: float) -> float:
    """a^k / k! * e^a for a >= 0."""
    if a == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(a) - math.lgamma(k + 1) + a)


def scale_W(x: float, beta: float) -> float:
    """
    Scale function W(x); zero for negative arguments.

    Args:
        x:                  argument
        beta:               drift coefficient, positive

    Returns:
        W(x)
    """
    _check_beta(beta)
    if x < 0:
        return 0.0
    terms = [(-1) ** k * _power_term(k, (x - k) / beta) for k in range(int(x) + 1)]
    return math.fsum(terms) / beta


def scale_W_prime(x: float, beta: float, side: Optional[str] = None) -> float:
    """
    Termwise derivative of W. W has a kink at x = 1 and the series changes
    form at every positive integer, so a side must be chosen there.

    Args:
        x:                  argument, non-negative
        beta:               drift coefficient, positive
        side:               "left" or "right"; required at positive integers

    Returns:
        W'(x), one-sided when `side` is given

    Raises:
        KinkPoint
    """
    _check_beta(beta)
    if side not in (None, "left", "right"):
        raise LobCusumError("Invalid value for argument 'side'. Use left or right.")
    if x < 0:
        return 0.0
    top = int(x)
    if x > 0 and x == top:
        if side is None:
            raise KinkPoint(f"W is not differentiable at integer {x}; choose a side.")
        if side == "left":
            top -= 1
    terms = []
    for k in range(top + 1):
        a = (x - k) / beta
        lower = _power_term(k - 1, a) if k >= 1 else 0.0
        terms.append((-1) ** k * (lower + _power_term(k, a)))
    return math.fsum(terms) / beta**2


def int_W(x: float, beta: float) -> float:
    """Closed-form integral of W over [0, x]."""
    _check_beta(beta)
    if x <= 0:
        return 0.0
    terms = []
    for k in range(int(x) + 1):
        a = (x - k) / beta
        terms.extend((-1) ** j * _power_term(j, a) for j in range(k + 1))
        terms.append(-1.0)
    return math.fsum(terms)


@dataclass(frozen=True)
class ScaleFunctionTable:
    """
    W, right derivative of W and the integral of W evaluated on a regular
    grid; immutable once built.

    Args:
        beta:               drift coefficient
        grid:               evaluation points
        w:                  W on the grid
        w_prime:            right derivative of W on the grid
        int_w:              integral of W from zero on the grid
    """

    beta: float
    grid: np.ndarray
    w: np.ndarray
    w_prime: np.ndarray
    int_w: np.ndarray

    @classmethod
    def build(
        cls, beta: float, x_max: float, step: float = 0.01
    ) -> "ScaleFunctionTable":
        _check_beta(beta)
        if not x_max > 0 or not 0 < step <= x_max:
            raise LobCusumError("Invalid grid. Need 0 < step <= x_max.")
        grid = np.linspace(0.0, x_max, int(round(x_max / step)) + 1)
        return cls(
            beta=beta,
            grid=grid,
            w=np.array([scale_W(x, beta) for x in grid]),
            w_prime=np.array([scale_W_prime(x, beta, side="right") for x in grid]),
            int_w=np.array([int_W(x, beta) for x in grid]),
        )

    @classmethod
    def for_rho(
        cls, rho: float, x_max: float, step: float = 0.01
    ) -> "ScaleFunctionTable":
        return cls.build(beta_of_rho(rho), x_max, step)

    def interpolate(self, x: float, which: str = "w") -> float:
        values = {"w": self.w, "w_prime": self.w_prime, "int_w": self.int_w}[which]
        return float(np.interp(x, self.grid, values))


def _check_range(start: float, m: float) -> None:
    if not m > 0:
        raise LobCusumError(f"Invalid threshold {m}. Must be > 0.")
    if not 0 <= start <= m:
        raise LobCusumError(f"Invalid start value {start}. Must lie in [0, {m}].")


def _require_decrease(rho: float) -> float:
    beta = beta_of_rho(rho)
    if rho > 1:
        raise InvalidRho(f"Decrease detection needs rho < 1, got {rho}.")
    return beta


def _require_increase(rho: float) -> float:
    beta = beta_of_rho(rho)
    if rho < 1:
        raise InvalidRho(f"Increase detection needs rho > 1, got {rho}.")
    return beta


def arl_decrease(y: float, m: float, rho: float) -> float:
    """
    ARL of the decrease detector started at reflected value `y`: the
    integral of W over [y, m].
    """
    beta = _require_decrease(rho)
    _check_range(y, m)
    return int_W(m, beta) - int_W(y, beta)


def arl_increase(v: float, m: float, rho: float) -> float:
    """
    ARL of the increase detector started at reflected value `v`:
    `W(m - v) W(m) / W'(m) - int_0^{m-v} W`, right derivative at integers.
    """
    beta = _require_increase(rho)
    _check_range(v, m)
    ratio = scale_W(m, beta) / scale_W_prime(m, beta, side="right")
    return scale_W(m - v, beta) * ratio - int_W(m - v, beta)


def tilde_W(x: float, rho: float) -> float:
    """
    Scale function for `beta(rho) / rho`, through `rho^(1+x) W(x)` with W
    built from `beta(rho)`.
    """
    return rho ** (1.0 + x) * scale_W(x, beta_of_rho(rho))


def tilde_W_prime(x: float, rho: float, side: Optional[str] = None) -> float:
    beta = beta_of_rho(rho)
    return rho ** (1.0 + x) * (
        math.log(rho) * scale_W(x, beta) + scale_W_prime(x, beta, side=side)
    )


def edd_decrease(y: float, m: float, rho: float) -> float:
    """
    EDD of the decrease detector started at `y`: `rho int_y^m rho^z W(z) dz`,
    evaluated as the integral of the tilde scale function.
    """
    beta = _require_decrease(rho)
    _check_range(y, m)
    tilde = beta / rho
    return int_W(m, tilde) - int_W(y, tilde)


def edd_increase(v: float, m: float, rho: float) -> float:
    """
    EDD of the increase detector started at `v`, the ARL formula with the
    tilde scale function in place of W.
    """
    beta = _require_increase(rho)
    _check_range(v, m)
    ratio = tilde_W(m, rho) / tilde_W_prime(m, rho, side="right")
    return tilde_W(m - v, rho) * ratio - int_W(m - v, beta / rho)


def average_run_length(start: float, m: float, rho: float) -> float:
    if rho < 1:
        return arl_decrease(start, m, rho)
    return arl_increase(start, m, rho)


def expected_detection_delay(start: float, m: float, rho: float) -> float:
    if rho < 1:
        return edd_decrease(start, m, rho)
    return edd_increase(start, m, rho)


def calibrate_threshold(target: float, rho: float) -> float:
    """
    Smallest threshold whose ARL from a fresh detector reaches `target`,
    found by bisection on the increasing map m -> ARL(0, m).

    Args:
        target:             required ARL in events
        rho:                post-change intensity ratio

    Returns:
        threshold m
    """
    if not target > 0:
        raise LobCusumError(f"Invalid target ARL {target}. Must be > 0.")
    beta_of_rho(rho)

    def excess(m: float) -> float:
        return average_run_length(0.0, m, rho) - target if m > 0 else -target

    if rho > 1 and arl_increase(0.0, 1e-12, rho) >= target:
        return 0.0
    upper = 1.0
    while excess(upper) < 0:
        upper *= 2.0
    m = bisect(excess, 0.0, upper, xtol=1e-12, maxiter=500)
    logger.debug(f"Calibrated m={m:.9f} for target ARL {target} at rho={rho}.")
    return float(m)


def arl_surface(rhos: Sequence[float], ms: Sequence[float]) -> pd.DataFrame:
    """ARL and EDD from a fresh detector over a (rho, m) grid."""
    rows: List[dict] = []
    for rho in rhos:
        for m in ms:
            rows.append(
                {
                    "rho": rho,
                    "m": m,
                    "arl": average_run_length(0.0, m, rho),
                    "edd": expected_detection_delay(0.0, m, rho),
                }
            )
    return pd.DataFrame(rows, columns=["rho", "m", "arl", "edd"])
