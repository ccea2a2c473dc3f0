"""Thermal twin tests: frozen fixed points, an independent Euler oracle, and
the integrator's structural properties."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from twinloop.errors import InvalidInput, InvalidState
from twinloop.twin import TwinParams, TwinState, rollout, steady_state, step

PARAMS = TwinParams()

# Frozen analytic fixed points for the default parameters: the sensor gains
# 0.1 degC and the heater 0.2 degC per percent duty above 23 degC ambient.
SS_DUTY_0 = (23.0, 23.0)
SS_DUTY_50 = (33.0, 28.0)
SS_DUTY_100 = (43.0, 33.0)


def euler_oracle(state, duty, horizon, dt=0.001, params=PARAMS):
    """Independent explicit-Euler integration of the same ODE pair."""
    th, ts = state.t_heater, state.t_sensor
    q = params.alpha * duty
    n = int(round(horizon / dt))
    for _ in range(n):
        dh = (q + params.u_ha * (params.t_amb - th) + params.u_hs * (ts - th)) / params.c_h
        ds = (params.u_hs * (th - ts) + params.u_sa * (params.t_amb - ts)) / params.c_s
        th += dt * dh
        ts += dt * ds
    return th, ts


class TestSteadyState:
    def test_ambient_fixed_point_at_zero_duty(self):
        assert steady_state(PARAMS, 0.0) == pytest.approx(SS_DUTY_0, abs=1e-12)

    def test_full_duty(self):
        assert steady_state(PARAMS, 100.0) == pytest.approx(SS_DUTY_100, abs=1e-9)

    def test_half_duty_is_linear_in_duty(self):
        assert steady_state(PARAMS, 50.0) == pytest.approx(SS_DUTY_50, abs=1e-9)

    def test_degenerate_conductances_rejected(self):
        broken = TwinParams(u_ha=0.0, u_hs=0.0, u_sa=0.0)
        with pytest.raises(InvalidState):
            steady_state(broken, 50.0)

    def test_duty_out_of_range(self):
        with pytest.raises(InvalidInput):
            steady_state(PARAMS, 120.0)


class TestStep:
    def test_equilibrium_holds_at_ambient(self):
        out = step(PARAMS, TwinState(23.0, 23.0, 0.0), 0.0, 60.0)
        assert out.t_heater == pytest.approx(23.0, abs=1e-12)
        assert out.t_sensor == pytest.approx(23.0, abs=1e-12)
        assert out.clock == 60.0

    def test_clock_advances_by_exactly_dt(self):
        out = step(PARAMS, TwinState(24.0, 24.0, 7.25), 30.0, 0.37)
        assert out.clock == 7.25 + 0.37

    def test_post_turnoff_sensor_keeps_rising(self):
        # Hot heater node at 43 degC still feeds the sensor: the initial
        # sensor slope is (0.1*16 - 0.1*4)/20 = +0.06 degC/s.
        state = TwinState(43.0, 27.0, 0.0)
        previous = state.t_sensor
        for _ in range(100):
            state = step(PARAMS, state, 0.0, 0.1)
            assert state.t_sensor > previous
            previous = state.t_sensor
        first = step(PARAMS, TwinState(43.0, 27.0, 0.0), 0.0, 0.001)
        assert (first.t_sensor - 27.0) / 0.001 == pytest.approx(0.06, rel=1e-3)

    def test_long_heat_soak_reaches_steady_state(self):
        out = step(PARAMS, TwinState(23.0, 23.0, 0.0), 100.0, 3600.0)
        assert out.t_sensor == pytest.approx(SS_DUTY_100[1], abs=0.05)

    def test_deterministic_bit_for_bit(self):
        a = step(PARAMS, TwinState(25.3, 24.1, 0.0), 73.5, 12.34)
        b = step(PARAMS, TwinState(25.3, 24.1, 0.0), 73.5, 12.34)
        assert (a.t_heater, a.t_sensor, a.clock) == (b.t_heater, b.t_sensor, b.clock)

    def test_duty_out_of_range(self):
        with pytest.raises(InvalidInput):
            step(PARAMS, TwinState(23.0, 23.0, 0.0), -1.0, 1.0)
        with pytest.raises(InvalidInput):
            step(PARAMS, TwinState(23.0, 23.0, 0.0), 100.5, 1.0)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(InvalidInput):
            step(PARAMS, TwinState(23.0, 23.0, 0.0), 0.0, 0.0)

    def test_non_finite_state_rejected(self):
        with pytest.raises(InvalidState):
            step(PARAMS, TwinState(math.nan, 23.0, 0.0), 0.0, 1.0)
        with pytest.raises(InvalidState):
            step(PARAMS, TwinState(23.0, math.inf, 0.0), 0.0, 1.0)


class TestRollout:
    def test_ambient_rollout_sample_count_and_values(self):
        trajectory = rollout(PARAMS, TwinState(23.0, 23.0, 0.0), 0.0, 5.0)
        assert len(trajectory) == 6
        assert trajectory[0] == (0.0, 23.0)
        assert [t for t, _ in trajectory] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        assert all(ts == pytest.approx(23.0, abs=1e-12) for _, ts in trajectory)

    def test_endpoint_matches_step(self):
        state = TwinState(26.0, 24.5, 3.0)
        trajectory = rollout(PARAMS, state, 80.0, 41.7)
        end_clock, end_sensor = trajectory[-1]
        direct = step(PARAMS, state, 80.0, 41.7)
        assert end_clock == pytest.approx(direct.clock, abs=1e-9)
        assert end_sensor == pytest.approx(direct.t_sensor, abs=1e-9)

    def test_cold_start_heating_is_monotone(self):
        trajectory = rollout(PARAMS, TwinState(23.0, 23.0, 0.0), 100.0, 600.0)
        temps = [ts for _, ts in trajectory]
        assert all(b >= a for a, b in zip(temps, temps[1:]))

    def test_fractional_start_clock(self):
        trajectory = rollout(PARAMS, TwinState(23.0, 23.0, 0.25), 100.0, 2.0)
        assert [t for t, _ in trajectory] == [0.25, 1.0, 2.0, 2.25]

    def test_bad_horizon(self):
        with pytest.raises(InvalidInput):
            rollout(PARAMS, TwinState(23.0, 23.0, 0.0), 0.0, 0.0)


class TestAgainstEulerOracle:
    @pytest.mark.parametrize(
        "segments",
        [
            [(100.0, 600.0)],
            [(0.0, 120.0), (100.0, 300.0), (0.0, 180.0)],
            [(100.0, 90.0), (0.0, 60.0), (100.0, 90.0), (30.0, 360.0)],
        ],
    )
    def test_rk4_matches_fine_euler(self, segments):
        state = TwinState(23.0, 23.0, 0.0)
        th, ts = state.t_heater, state.t_sensor
        for duty, seconds in segments:
            state = step(PARAMS, state, duty, seconds)
            th, ts = euler_oracle(TwinState(th, ts, 0.0), duty, seconds)
        assert state.t_sensor == pytest.approx(ts, abs=1e-3)
        assert state.t_heater == pytest.approx(th, abs=1e-3)

    def test_overshoot_exists_after_turnoff(self):
        # Residual heater heat must push the sensor above its 27 degC start.
        state = TwinState(43.0, 27.0, 0.0)
        peak = max(ts for _, ts in rollout(PARAMS, state, 0.0, 600.0))
        assert peak > 27.0
        oracle_peak = 27.0
        th, ts = 43.0, 27.0
        for _ in range(600_000):
            dh = (PARAMS.u_ha * (23.0 - th) + PARAMS.u_hs * (ts - th)) / PARAMS.c_h
            ds = (PARAMS.u_hs * (th - ts) + PARAMS.u_sa * (23.0 - ts)) / PARAMS.c_s
            th += 0.001 * dh
            ts += 0.001 * ds
            oracle_peak = max(oracle_peak, ts)
        assert peak == pytest.approx(oracle_peak, abs=1e-3)


class TestProperties:
    @pytest.mark.parametrize("duty", [0.0, 25.0, 50.0, 100.0])
    def test_steady_state_is_a_step_fixed_point(self, duty):
        th, ts = steady_state(PARAMS, duty)
        out = step(PARAMS, TwinState(th, ts, 0.0), duty, 10.0)
        assert out.t_heater == pytest.approx(th, abs=1e-9)
        assert out.t_sensor == pytest.approx(ts, abs=1e-9)

    @given(
        duty=st.floats(0.0, 100.0),
        a=st.integers(1, 40),
        b=st.integers(1, 40),
    )
    @settings(max_examples=60, deadline=None)
    def test_step_composability_on_substep_multiples(self, duty, a, b):
        state = TwinState(30.0, 26.0, 0.0)
        whole = step(PARAMS, state, duty, (a + b) * PARAMS.dt_internal)
        parts = step(PARAMS, step(PARAMS, state, duty, a * PARAMS.dt_internal), duty, b * PARAMS.dt_internal)
        assert whole.t_heater == pytest.approx(parts.t_heater, abs=1e-9)
        assert whole.t_sensor == pytest.approx(parts.t_sensor, abs=1e-9)

    def test_monotone_heating_from_ambient_until_steady(self):
        target = steady_state(PARAMS, 60.0)[1]
        state = TwinState(23.0, 23.0, 0.0)
        previous = state.t_sensor
        while target - state.t_sensor > 1e-6:
            state = step(PARAMS, state, 60.0, 5.0)
            assert state.t_sensor >= previous
            previous = state.t_sensor
            assert state.clock < 5000.0, "did not converge"

    @given(
        th0=st.floats(23.0, 43.0),
        ts0=st.floats(23.0, 33.0),
        duty=st.floats(0.0, 100.0),
        seconds=st.floats(0.5, 900.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_full_duty_steady_box_is_forward_invariant(self, th0, ts0, duty, seconds):
        # the joint region bounded by the full-duty steady state of each node;
        # with ambient below, no duty can push either node out of it
        heater_ceiling, sensor_ceiling = steady_state(PARAMS, 100.0)
        out = step(PARAMS, TwinState(th0, ts0, 0.0), duty, seconds)
        assert PARAMS.t_amb - 0.001 <= out.t_heater <= heater_ceiling + 0.001
        assert PARAMS.t_amb - 0.001 <= out.t_sensor <= sensor_ceiling + 0.001

    @given(
        duties=st.lists(st.floats(0.0, 100.0), min_size=1, max_size=8),
        seconds=st.floats(1.0, 300.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_reachable_states_stay_between_ambient_and_heater_ceiling(self, duties, seconds):
        heater_ceiling = steady_state(PARAMS, 100.0)[0]
        state = TwinState(PARAMS.t_amb, PARAMS.t_amb, 0.0)
        for duty in duties:
            state = step(PARAMS, state, duty, seconds)
            assert PARAMS.t_amb - 0.001 <= state.t_heater <= heater_ceiling + 0.001
            assert PARAMS.t_amb - 0.001 <= state.t_sensor <= heater_ceiling + 0.001


class TestParamValidation:
    def test_defaults_validate(self):
        PARAMS.validate()

    def test_nonpositive_capacity_rejected(self):
        with pytest.raises(InvalidState):
            TwinParams(c_h=0.0).validate()

    def test_dt_internal_range(self):
        with pytest.raises(InvalidState):
            TwinParams(dt_internal=1.5).validate()
        with pytest.raises(InvalidState):
            TwinParams(dt_internal=0.0).validate()

    def test_underpowered_heater_rejected(self):
        # Full duty must be able to push the sensor past the upper threshold.
        with pytest.raises(InvalidState):
            TwinParams(alpha=0.005).validate()
