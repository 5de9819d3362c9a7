# -*- coding: utf-8 -*-

from contextlib import nullcontext as does_not_raise
import logging
import math

import numpy as np
import pytest

from lob_cusum.cusum import (
    REGIME_COLUMNS,
    ConstantRateClock,
    CusumConfig,
    CusumDetector,
    Direction,
    HawkesReferenceClock,
    Regime,
    llr_increment,
    run_two_sided,
)
from lob_cusum.errors import InvalidRho, LobCusumError, TimeRegression
from lob_cusum.hawkes import MarkedEvent
from lob_cusum.scale import beta_of_rho
from lob_cusum.trades_through import Multiplicity, StreamMode


@pytest.fixture
def burst():
    return [MarkedEvent(1.0 + 0.01 * k, 0, 10.0) for k in range(10)]


class TestCusumConfig:
    """
    Test CusumConfig validation
    """

    @pytest.mark.parametrize(
        "kwargs,expectation",
        [
            ({"rho": 1.5, "m": 5.0}, does_not_raise()),
            ({"rho": 0.5, "m": 1.0, "max_jump": 4}, does_not_raise()),
            ({"rho": 1.0, "m": 5.0}, pytest.raises(InvalidRho)),
            ({"rho": 1.5, "m": 0.0}, pytest.raises(LobCusumError)),
            ({"rho": 1.5, "m": 5.0, "max_jump": 0}, pytest.raises(LobCusumError)),
        ],
    )
    def test_validation(self, kwargs, expectation):
        with expectation:
            CusumConfig(**kwargs)

    @pytest.mark.parametrize(
        "rho,direction", [(0.5, Direction.DOWN), (1.5, Direction.UP)]
    )
    def test_direction(self, rho, direction):
        assert CusumConfig(rho, 1.0).direction is direction

    def test_llr_increment(self):
        assert llr_increment(1, 2.0, 1.5) == pytest.approx(1 - 2.0 * beta_of_rho(1.5))


class TestClocks:
    """
    Test compensator clocks
    """

    def test_constant_rate(self):
        assert ConstantRateClock(2.0)(1.0, 4.0) == 6.0

    def test_constant_rate_invalid(self):
        with pytest.raises(LobCusumError):
            ConstantRateClock(0.0)

    @pytest.mark.parametrize(
        "streams,scale,expected",
        [((0, 1), None, 2.0), ((0,), None, 1.0), ((0, 1), [2.0, 1.0], 3.0)],
    )
    def test_hawkes_reference(self, poisson_params, streams, scale, expected):
        clock = HawkesReferenceClock(poisson_params, streams, scale)
        assert clock(1.0, 3.0) == pytest.approx(expected)

    def test_hawkes_reference_records(self, hawkes_params):
        clock = HawkesReferenceClock(hawkes_params)
        before = clock(1.0, 2.0)
        clock.record(MarkedEvent(1.0, 0, 100.0))
        assert clock(1.0, 2.0) > before


class TestCusumDetector:
    """
    Test the streaming detector
    """

    def test_invalid_config(self):
        with pytest.raises(LobCusumError) as exc:
            CusumDetector({"rho": 1.5, "m": 5})
        assert "Must be a `CusumConfig`" in str(exc.value)

    def test_jump_alarm(self):
        detector = CusumDetector(CusumConfig(rho=1.5, m=2.0, max_jump=3))
        alarm = detector.jump(3)
        assert alarm.direction is Direction.UP
        assert alarm.event_count == 3
        assert alarm.time == 0.0
        assert detector.statistic == 0.0

    def test_no_alarm_at_threshold(self):
        detector = CusumDetector(CusumConfig(rho=1.5, m=2.0, max_jump=2))
        assert detector.jump(2) is None
        assert detector.statistic == 2.0

    @pytest.mark.parametrize("size", [-1, 4])
    def test_invalid_jump(self, size):
        detector = CusumDetector(CusumConfig(rho=1.5, m=2.0, max_jump=3))
        with pytest.raises(LobCusumError) as exc:
            detector.jump(size)
        assert "Must be in 0..3" in str(exc.value)

    def test_decrease_never_alarms_on_jump(self):
        detector = CusumDetector(CusumConfig(rho=0.5, m=1.0, max_jump=5))
        assert detector.jump(5) is None
        assert detector.statistic == 0.0

    def test_linear_drift_crossings(self):
        detector = CusumDetector(CusumConfig(rho=0.5, m=1.0), start_time=3.0)
        alarms = detector.advance(13.0, ConstantRateClock(1.0))
        period = 1.0 / beta_of_rho(0.5)
        assert period == pytest.approx(2 * math.log(2))
        assert len(alarms) == 7
        for k, alarm in enumerate(alarms, start=1):
            assert alarm.time == pytest.approx(3.0 + k * period, abs=1e-7)
            assert alarm.direction is Direction.DOWN
            assert alarm.event_count == 0
        assert detector.statistic == pytest.approx(
            beta_of_rho(0.5) * (13.0 - alarms[-1].time)
        )

    def test_increase_reflected_at_zero(self):
        detector = CusumDetector(CusumConfig(rho=1.5, m=5.0))
        clock = ConstantRateClock(1.0)
        detector.jump(1)
        detector.advance(0.5, clock)
        assert detector.statistic == pytest.approx(1 - 0.5 * beta_of_rho(1.5))
        detector.advance(10.0, clock)
        assert detector.statistic == 0.0
        assert detector.state.u == pytest.approx(1 - 10.0 * beta_of_rho(1.5))

    def test_time_regression(self):
        detector = CusumDetector(CusumConfig(rho=0.5, m=1.0))
        detector.advance(2.0, ConstantRateClock(1.0))
        with pytest.raises(TimeRegression):
            detector.advance(1.0, ConstantRateClock(1.0))

    def test_step_example(self):
        detector = CusumDetector(CusumConfig(rho=1.5, m=5))
        assert detector.step(0.3, 1, ConstantRateClock(1.0)) == []
        assert detector.state.event_count == 1

    @pytest.mark.parametrize("rho", [0.5, 1.5])
    def test_reflection_invariants(self, rho):
        rng = np.random.default_rng(17)
        config = CusumConfig(rho=rho, m=3.0, max_jump=3)
        detector = CusumDetector(config)
        clock = ConstantRateClock(1.0)
        t = 0.0
        for _ in range(2000):
            t += rng.exponential(1.0 / rho)
            detector.step(t, int(rng.integers(1, 4)), clock)
            state = detector.state
            assert 0.0 <= state.reflected <= config.m
            if config.direction is Direction.DOWN:
                assert state.reflected == pytest.approx(state.running_max - state.u)
            else:
                assert state.reflected == pytest.approx(state.u - state.running_min)
        assert detector.state.alarms
        assert all(a.direction is config.direction for a in detector.state.alarms)

    def test_restart(self):
        detector = CusumDetector(CusumConfig(rho=1.5, m=5.0))
        detector.jump(1)
        detector.restart()
        assert detector.statistic == 0.0
        assert detector.state.running_min == detector.state.u


class TestRunTwoSided:
    """
    Test the two-sided regime run
    """

    def test_invalid_rhos(self, poisson_params):
        with pytest.raises(InvalidRho):
            run_two_sided([], poisson_params, rho_up=1.5, rho_down=1.2, m=5.0)

    def test_invalid_sampling(self, poisson_params):
        with pytest.raises(LobCusumError):
            run_two_sided([], poisson_params, 1.5, 0.5, 5.0, sample_every=0.0)

    def test_empty_stream_only_decreases(self, poisson_params):
        report = run_two_sided([], poisson_params, rho_up=1.5, rho_down=0.5, m=5.0)
        period = 5.0 / beta_of_rho(0.5)
        assert report.alarm_count(Direction.UP) == 0
        assert report.alarm_count(Direction.DOWN) == 28
        assert report.alarms[0].time == pytest.approx(period, abs=1e-8)
        frame = report.frame
        assert list(frame.columns) == REGIME_COLUMNS
        assert len(frame) == 29
        assert frame["alarm"].tolist() == ["DOWN"] * 28 + ["0"]
        assert set(frame["regime"]) == {Regime.DOWN.value}
        last = frame.iloc[-1]
        assert last["ts_ns"] == 200 * 1_000_000_000
        assert last["U"] == pytest.approx(-200.0 * beta_of_rho(1.5))
        assert last["U_tilde"] == pytest.approx(beta_of_rho(0.5) * 200.0 - 28 * 5.0)
        assert last["U_hat"] == 0.0

    def test_burst_raises_increase(self, poisson_params, burst):
        report = run_two_sided(burst, poisson_params, 1.5, 0.5, m=5.0)
        first, second = report.alarms[:2]
        assert first.direction is Direction.UP
        assert first.event_count == 6
        assert first.time == pytest.approx(1.05)
        assert second.direction is Direction.DOWN
        assert second.time == pytest.approx(1.09 + 5.0 / beta_of_rho(0.5), abs=1e-6)
        regimes = report.frame["regime"].tolist()
        assert regimes[:5] == ["NEUTRAL"] * 5
        assert regimes[5] == "UP"
        assert report.frame["alarm"].iloc[5] == "UP"

    def test_unobserved_side_ignored(self, poisson_params, burst):
        report = run_two_sided(burst, poisson_params, 1.5, 0.5, 5.0, mode="bid")
        assert report.alarm_count(Direction.UP) == 0
        assert report.ignored_events == 10

    def test_unobserved_side_logged(self, poisson_params, burst, caplog):
        caplog.set_level(logging.DEBUG, logger="lob_cusum.cusum")
        run_two_sided(burst, poisson_params, 1.5, 0.5, 5.0, mode=StreamMode.BID)
        assert "Ignoring 10 events outside mode 'bid'" in caplog.text

    def test_both_sides_ignore_nothing(self, poisson_params, burst):
        report = run_two_sided(burst, poisson_params, 1.5, 0.5, 5.0)
        assert report.ignored_events == 0

    def test_options_keyword_only(self, poisson_params):
        with pytest.raises(TypeError):
            run_two_sided([], poisson_params, 1.5, 0.5, 5.0, Multiplicity.GROUND)

    def test_per_limit_jumps(self, poisson_params):
        events = [MarkedEvent(1.0, 1, 5.0, depth=3), MarkedEvent(1.001, 1, 5.0, 3)]
        ground = run_two_sided(events, poisson_params, 1.5, 0.5, 5.0)
        per_limit = run_two_sided(
            events, poisson_params, 1.5, 0.5, 5.0, multiplicity=Multiplicity.PER_LIMIT
        )
        assert ground.alarm_count(Direction.UP) == 0
        assert per_limit.alarm_count(Direction.UP) == 1
        assert per_limit.alarms[0].event_count == 6

    def test_simultaneous_events_jump_together(self, poisson_params):
        events = [MarkedEvent(2.0, 0, 1.0), MarkedEvent(2.0, 1, 1.0)]
        report = run_two_sided(events, poisson_params, 1.5, 0.5, 5.0)
        assert report.frame["ts_ns"].iloc[0] == 2_000_000_000
        assert report.frame["U"].iloc[0] == pytest.approx(2 - 2.0 * beta_of_rho(1.5))

    def test_sampling_and_origin(self, poisson_params):
        report = run_two_sided(
            [],
            poisson_params,
            1.5,
            0.5,
            5.0,
            mode=StreamMode.BOTH,
            sample_every=50.0,
            origin_ns=10,
        )
        ts = report.frame["ts_ns"].to_numpy()
        assert len(ts) == 32
        assert np.all(np.diff(ts) >= 0)
        for sample in (50, 100, 150):
            assert sample * 1_000_000_000 + 10 in ts

    def test_end_time(self, poisson_params):
        report = run_two_sided([], poisson_params, 1.5, 0.5, 5.0, end_time=10.0)
        assert report.alarm_count(Direction.DOWN) == 1
        assert report.frame["ts_ns"].iloc[-1] == 10_000_000_000

    def test_to_csv(self, poisson_params, tmp_path):
        report = run_two_sided([], poisson_params, 1.5, 0.5, 5.0, end_time=10.0)
        path = tmp_path / "regimes.csv"
        report.to_csv(str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "ts_ns,U,U_tilde,U_hat,alarm,regime"
        assert lines[1].startswith("693147180")
        assert lines[1].endswith(",DOWN,DOWN")
