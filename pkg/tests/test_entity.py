import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import soc_after
from picogrid.entity import (
    BoardState,
    CellState,
    ChargerMode,
    ChannelKind,
    ChannelSpec,
    Measurement,
    NoiseConfig,
    PerUnitBase,
    Setpoints,
    SwitchVector,
    UserSchedule,
    active_loads,
    channel_power,
    charge_acceptance,
    em_tick,
    integrate_cell,
    operating_point,
    read_sensors,
    step_cell,
)

LOADS_ON = {k: ChannelSpec(k, duty=1.0, connected=True) for k in (ChannelKind.LOAD1, ChannelKind.LOAD2, ChannelKind.LOAD3)}


def board(soc=50.0, **kwargs):
    channels = kwargs.pop("channels", LOADS_ON)
    return BoardState("PB", cell=CellState(soc=soc), channels=channels, **kwargs)


class TestPerUnitBase:
    def test_defaults_and_derived(self):
        base = PerUnitBase()
        assert (base.v_base, base.i_base, base.e_base) == (5.0, 0.5, 1.0)
        assert base.p_base == 2.5
        assert base.r_base == 10.0
        assert base.to_watts(0.37) == pytest.approx(0.925)

    @pytest.mark.parametrize("kwargs", [{"v_base": 0}, {"i_base": -1}, {"e_base": 0}])
    def test_rejects_non_positive(self, kwargs):
        with pytest.raises(ValueError):
            PerUnitBase(**kwargs)


class TestChannelPower:
    def test_full_duty_load_rating(self):
        assert channel_power(1.0, 0.37) == 0.37

    def test_zero_duty(self):
        assert channel_power(0.0, 1.0) == 0.0

    def test_half_duty(self):
        assert channel_power(0.5, 1.0) == 0.5

    @pytest.mark.parametrize("duty", [-0.01, 1.01, math.nan])
    def test_out_of_range_duty(self, duty):
        with pytest.raises(ValueError):
            channel_power(duty, 1.0)

    def test_non_positive_rating(self):
        with pytest.raises(ValueError):
            channel_power(0.5, 0.0)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 5))
    def test_linear_in_duty(self, a, d, p):
        assert channel_power(a * d, p) == pytest.approx(a * channel_power(d, p), rel=1e-12, abs=1e-15)

    def test_default_ratings(self):
        assert ChannelSpec(ChannelKind.PV).nominal_power == 1.0
        assert ChannelSpec(ChannelKind.LOAD2).nominal_power == 0.37


class TestStepCell:
    def test_five_minutes_of_one_pu(self):
        cell = step_cell(CellState(soc=50.0), 1.0, 0.0, 300)
        assert cell.soc == pytest.approx(soc_after(50.0, 1.0, 0.0, 300), abs=1e-12)
        assert cell.soc == pytest.approx(50.681, abs=5e-4)

    def test_clamped_at_full(self):
        assert step_cell(CellState(soc=100.0), 1.0, 0.0, 10).soc == 100.0

    def test_three_loads_for_ten_seconds(self):
        cell = step_cell(CellState(soc=50.0), 0.0, 1.11, 10)
        assert cell.soc == pytest.approx(soc_after(50.0, 0.0, 1.11, 10), abs=1e-12)
        assert cell.soc == pytest.approx(49.9748, abs=5e-5)

    def test_clamped_at_empty(self):
        assert step_cell(CellState(soc=0.01), 0.0, 5.0, 3600).soc == 0.0

    @pytest.mark.parametrize("p_in,p_out", [(-0.1, 0.0), (0.0, -0.1)])
    def test_negative_power(self, p_in, p_out):
        with pytest.raises(ValueError):
            step_cell(CellState(), p_in, p_out, 10)

    def test_non_positive_dt(self):
        with pytest.raises(ValueError):
            step_cell(CellState(), 1.0, 0.0, 0)

    def test_charger_mode_tracks_knee(self):
        assert CellState(soc=89.9).charger_mode is ChargerMode.CC
        assert CellState(soc=90.0).charger_mode is ChargerMode.CV
        cell = step_cell(CellState(soc=89.99), 1.0, 0.0, 300)
        assert cell.charger_mode is ChargerMode.CV

    def test_cv_taper_is_linear(self):
        assert charge_acceptance(CellState(soc=95.0)) == pytest.approx(0.5)
        assert charge_acceptance(CellState(soc=100.0)) == 0.0
        tapered = step_cell(CellState(soc=95.0), 1.0, 0.0, 10)
        assert tapered.soc == pytest.approx(soc_after(95.0, 0.5, 0.0, 10), abs=1e-12)

    @settings(max_examples=300)
    @given(st.floats(0, 100), st.floats(0, 3), st.floats(0, 3), st.floats(0.1, 600))
    def test_energy_conserved_off_the_clamps(self, soc, p_in, p_out, dt):
        cell = CellState(soc=soc)
        after = step_cell(cell, p_in, p_out, dt)
        effective = p_in * charge_acceptance(cell)
        unclamped = soc + 100 * (effective - p_out) * dt / 3600 / cell.capacity
        if 0 < unclamped < 100:
            stored = cell.capacity * (after.soc - soc) / 100
            assert stored == pytest.approx((effective - p_out) * dt / 3600, abs=1e-12)

    @given(st.floats(0, 100), st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), min_size=1, max_size=40))
    def test_soc_stays_in_range(self, soc, steps):
        cell = CellState(soc=soc)
        for p_in, p_out in steps:
            cell = step_cell(cell, p_in, p_out, 60)
            assert 0.0 <= cell.soc <= 100.0


class TestEnergyManager:
    def test_interval_one_all_loads_on(self):
        sp = Setpoints((40.0, 45.0, 47.5))
        assert active_loads(em_tick(board(50.0), sp, UserSchedule(), 0)) == {1, 2, 3}

    def test_interval_two_load_three_off(self):
        sp = Setpoints((40.0, 45.0, 55.0))
        assert active_loads(em_tick(board(50.0), sp, UserSchedule(), 0)) == {1, 2}

    def test_below_import_threshold(self):
        u = em_tick(board(59.9), Setpoints(import_threshold=60, export_threshold=60), UserSchedule(), 0)
        assert u.imp and not u.exp

    def test_above_export_threshold(self):
        u = em_tick(board(60.1), Setpoints(import_threshold=60, export_threshold=60), UserSchedule(), 0)
        assert u.exp and not u.imp

    def test_equality_is_off(self):
        sp = Setpoints((60.0, 60.0, 60.0), import_threshold=60, export_threshold=60)
        u = em_tick(board(60.0), sp, UserSchedule(), 0)
        assert not u.imp and not u.exp
        assert active_loads(u) == frozenset()

    def test_overlapping_thresholds_never_circulate(self):
        u = em_tick(board(50.0), Setpoints(import_threshold=70, export_threshold=30), UserSchedule(), 0)
        assert not (u.imp and u.exp)

    def test_schedule_gates_loads(self):
        schedule = UserSchedule({ChannelKind.LOAD1: ((480.0, 960.0),)})
        sp = Setpoints((20.0, 20.0, 20.0))
        assert 1 not in active_loads(em_tick(board(50.0), sp, schedule, 470))
        assert 1 in active_loads(em_tick(board(50.0), sp, schedule, 480))
        assert 1 not in active_loads(em_tick(board(50.0), sp, schedule, 960))

    def test_out_of_range_thresholds_pin(self):
        on = em_tick(board(0.0), Setpoints((-5.0, -5.0, -5.0)), UserSchedule(), 0)
        off = em_tick(board(100.0), Setpoints((150.0, 150.0, 150.0)), UserSchedule(), 0)
        assert active_loads(on) == {1, 2, 3}
        assert active_loads(off) == frozenset()

    thresholds = st.floats(-50, 150)

    @given(st.floats(0, 100), thresholds, thresholds)
    def test_never_import_and_export(self, soc, imp, exp):
        u = em_tick(board(soc), Setpoints(import_threshold=imp, export_threshold=exp), UserSchedule(), 0)
        assert not (u.imp and u.exp)

    @given(st.floats(0, 100), st.tuples(thresholds, thresholds, thresholds), st.floats(0, 2000))
    def test_pure(self, soc, loads, t):
        sp = Setpoints(loads)
        b = board(soc)
        assert em_tick(b, sp, UserSchedule(), t) == em_tick(b, sp, UserSchedule(), t)

    @given(st.floats(0, 100), st.lists(thresholds, min_size=2, max_size=20))
    def test_raising_threshold_never_turns_load_on(self, soc, sweep):
        sweep = sorted(sweep)
        states = [1 in active_loads(em_tick(board(soc), Setpoints((x, 0.0, 0.0)), UserSchedule(), 0)) for x in sweep]
        # once off, stays off as the threshold rises
        for before, after in zip(states, states[1:]):
            assert before or not after


class TestSensors:
    def test_boost_output_noise_free(self):
        m = read_sensors(board(50.0))
        assert m.v[4] == 1.0

    def test_all_off_currents_zero(self):
        b = board(50.0)
        b.point = operating_point(b, SwitchVector())
        m = read_sensors(b, NoiseConfig())
        assert m.i == (0.0,) * 8

    def test_seeded_noise_repeats(self):
        b = board(50.0)
        b.point = operating_point(b, SwitchVector(l1=1.0))
        noise = NoiseConfig(0.01, 0.01)

        def sample():
            rng = np.random.default_rng(42)
            return [read_sensors(b, noise, rng) for _ in range(5)]

        first, second = sample(), sample()
        assert first == second
        assert first[0] != first[1]

    def test_noise_free_measures_true_values(self):
        b = board(50.0)
        b.point = operating_point(b, SwitchVector(l1=1.0, l2=0.5))
        m = read_sensors(b)
        assert m.i[4] == pytest.approx(0.37)
        assert m.i[5] == pytest.approx(0.185)
        assert m.i[3] == pytest.approx(-0.555 / 0.72)

    def test_vector_lengths_fixed(self):
        with pytest.raises(ValueError):
            Measurement((0.0,) * 4, (0.0,) * 8)

    def test_empty_cell_kills_boost(self):
        b = board(0.0)
        point = operating_point(b, SwitchVector(l1=1.0))
        assert point.v[4] == 0.0 and point.load_power == 0.0


class TestOperatingPoint:
    def test_board_power_balance(self):
        channels = {
            ChannelKind.PV: ChannelSpec(ChannelKind.PV, duty=0.4, connected=True, series_resistance=0.05, diode_drop=0.02),
            **LOADS_ON,
        }
        b = board(50.0, channels=channels, boost_efficiency=0.9)
        p = operating_point(b, SwitchVector(pv=0.4, l1=1.0, exp=True), export_current=0.3, terminal_voltage=1.0)
        inflow = p.source_power + p.import_power - p.conditioning_loss
        outflow = p.load_power + p.export_power + p.boost_loss
        assert p.charge_power - p.discharge_power == pytest.approx(inflow - outflow, abs=1e-15)
        assert p.conditioning_loss == pytest.approx(0.4 * (0.02 + 0.4 * 0.05))

    def test_integrate_matches_step_in_cc(self):
        cell = CellState(soc=40.0)
        assert integrate_cell(cell, 0.7, 0.2, 10) == step_cell(cell, 0.7, 0.2, 10)
