import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinsense.errors import DomainError, FitFailureError, InvalidInputError
from spinsense.thermal import (
    HeatingRun,
    LiquidAddition,
    MicrowaveHeatingModel,
    PidController,
    RtdCalibration,
    TemperatureTrace,
    ThermalPlant,
    dbm_to_milliwatts,
    effective_temperature,
    fit_microwave_heating,
    fit_plant_parameters,
    liquid_addition_transient,
    pid_update,
    plant_step,
    rtd_resistance_from_temperature,
    rtd_temperature_from_resistance,
    run_closed_loop,
    simulate_heating_curve,
)

CAL = RtdCalibration(eta=0.002, r_ref=100.0, t_ref=20.0)

# The four published operating points: microwave power (dBm) against the
# effective temperature reached by the water-loaded chip.
MW_POINTS = [(16.7, 25.1), (17.4, 25.7), (21.5, 31.3), (22.3, 33.3)]


def analytic_ramp(t, plant, v0):
    """Closed-form ramp solution starting from ambient."""
    power = plant.duty_cycle * v0 * v0 / plant.r_heater
    return plant.t_ambient + power / plant.k * (1.0 - np.exp(-plant.k * t / plant.c_v))


class TestRtd:
    def test_identity_at_reference(self):
        assert rtd_temperature_from_resistance(CAL.r_ref, CAL) == pytest.approx(CAL.t_ref)
        assert rtd_resistance_from_temperature(CAL.t_ref, CAL) == pytest.approx(CAL.r_ref)

    def test_worked_example(self):
        assert rtd_temperature_from_resistance(102.0, CAL) == pytest.approx(30.0)
        assert rtd_resistance_from_temperature(30.0, CAL) == pytest.approx(102.0)

    def test_round_trip_over_operating_range(self):
        for t in np.linspace(0.0, 100.0, 101):
            r = rtd_resistance_from_temperature(t, CAL)
            assert abs(rtd_temperature_from_resistance(r, CAL) - t) < 1e-9

    def test_round_trip_random_resistances(self):
        rng = np.random.default_rng(1)
        for r in rng.uniform(80.0, 130.0, size=100):
            t = rtd_temperature_from_resistance(r, CAL)
            assert rtd_resistance_from_temperature(t, CAL) == pytest.approx(r, rel=1e-12)

    @given(st.floats(min_value=0.0, max_value=100.0))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, t):
        r = rtd_resistance_from_temperature(t, CAL)
        assert abs(rtd_temperature_from_resistance(r, CAL) - t) < 1e-9

    def test_rejects_nonpositive_resistance(self):
        with pytest.raises(InvalidInputError):
            rtd_temperature_from_resistance(0.0, CAL)
        with pytest.raises(InvalidInputError):
            rtd_temperature_from_resistance(-5.0, CAL)

    def test_rejects_temperature_below_domain(self):
        # eta*(t - t_ref) + 1 <= 0  <=>  t <= t_ref - 1/eta = -480 degC here
        with pytest.raises(DomainError):
            rtd_resistance_from_temperature(-500.0, CAL)

    def test_calibration_spread_matches_eta_spread(self):
        # Chips differ by +-5% in eta; the reciprocal law maps that to exactly
        # +-5% spread in the inferred temperature rise about its midpoint.
        delta_t_true = 25.0
        measured_ratio_minus_1 = CAL.eta * delta_t_true
        etas = np.array([0.95, 0.975, 1.0, 1.025, 1.05]) * CAL.eta
        estimates = measured_ratio_minus_1 / etas
        center = (estimates.max() + estimates.min()) / 2.0
        assert np.all(np.abs(estimates - center) <= 0.05 * center * (1 + 1e-9))

    def test_invalid_calibration_rejected(self):
        with pytest.raises(InvalidInputError):
            RtdCalibration(eta=0.0)
        with pytest.raises(InvalidInputError):
            RtdCalibration(r_ref=-1.0)


class TestPlantStep:
    def test_equilibrium_at_ambient_with_no_drive(self):
        plant = ThermalPlant(temperature=22.0, t_ambient=22.0)
        stepped = plant_step(plant, 0.0, 1.0)
        assert stepped.temperature == pytest.approx(22.0)
        assert stepped == plant  # only temperature may change, and it did not

    def test_zero_drive_decays_monotonically_to_ambient(self):
        plant = ThermalPlant(temperature=35.0, t_ambient=22.0)
        temps = []
        for _ in range(200):
            plant = plant_step(plant, 0.0, 1.0)
            temps.append(plant.temperature)
        assert all(b < a for a, b in zip(temps, temps[1:]))
        assert temps[-1] > 22.0
        assert temps[-1] == pytest.approx(22.0, abs=0.01)

    def test_steady_state_rise(self):
        plant = ThermalPlant(c_v=0.26, k=0.0175, r_heater=100.0,
                             t_ambient=22.0, temperature=22.0, duty_cycle=1.0)
        for _ in range(600):  # 600 s >> C_v/k ~ 15 s
            plant = plant_step(plant, 5.0, 1.0)
        assert plant.temperature - 22.0 == pytest.approx(25.0 / (100.0 * 0.0175), rel=1e-6)

    def test_time_constant_63_percent(self):
        plant = ThermalPlant(c_v=0.26, k=0.0175, r_heater=100.0,
                             t_ambient=22.0, temperature=22.0)
        tau = plant.time_constant
        assert tau == pytest.approx(0.26 / 0.0175)
        final_rise = plant.equilibrium_temperature(5.0) - 22.0
        state = plant_step(plant, 5.0, tau)
        assert (state.temperature - 22.0) / final_rise == pytest.approx(1 - math.exp(-1), rel=0.02)

    def test_energy_balance_in_steady_state(self):
        plant = ThermalPlant(t_ambient=22.0, temperature=22.0)
        v0 = 4.0
        for _ in range(400):
            plant = plant_step(plant, v0, 1.0)
        power_in = plant.heater_power(v0)
        power_out = plant.k * (plant.temperature - plant.t_ambient)
        assert power_out == pytest.approx(power_in, rel=1e-3)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(InvalidInputError):
            plant_step(ThermalPlant(), 1.0, 0.0)
        with pytest.raises(InvalidInputError):
            plant_step(ThermalPlant(), 1.0, -1.0)

    def test_invalid_plant_rejected(self):
        with pytest.raises(InvalidInputError):
            ThermalPlant(c_v=-1.0)
        with pytest.raises(InvalidInputError):
            ThermalPlant(duty_cycle=1.5)


class TestHeatingCurve:
    def test_zero_drive_flat_trace(self):
        plant = ThermalPlant(t_ambient=22.0, temperature=22.0)
        trace = simulate_heating_curve(plant, 0.0, 60.0, 1.0)
        assert np.all(trace.temperatures == 22.0)
        assert len(trace) == 61

    @pytest.mark.parametrize("v0", [2.0, 5.0, 8.0])
    def test_matches_closed_form(self, v0):
        plant = ThermalPlant(c_v=0.26, k=0.0175, r_heater=100.0,
                             t_ambient=22.0, temperature=22.0)
        trace = simulate_heating_curve(plant, v0, 120.0, 0.5)
        expected = analytic_ramp(trace.times, plant, v0)
        total_rise = expected[-1] - 22.0
        assert np.max(np.abs(trace.temperatures - expected)) <= 1e-3 * total_rise

    def test_larger_steps_still_match_closed_form(self):
        # The exponential update is exact, so even dt >> C_v/(100 k) is fine.
        plant = ThermalPlant(t_ambient=22.0, temperature=22.0)
        trace = simulate_heating_curve(plant, 5.0, 300.0, 20.0)
        expected = analytic_ramp(trace.times, plant, 5.0)
        rise = expected[-1] - 22.0
        assert np.max(np.abs(trace.temperatures - expected)) <= 1e-3 * rise

    def test_rejects_bad_durations(self):
        plant = ThermalPlant()
        with pytest.raises(InvalidInputError):
            simulate_heating_curve(plant, 5.0, 0.0, 1.0)
        with pytest.raises(InvalidInputError):
            simulate_heating_curve(plant, 5.0, 10.0, -1.0)


class TestTemperatureTrace:
    def test_requires_uniform_spacing(self):
        with pytest.raises(InvalidInputError):
            TemperatureTrace(np.array([0.0, 1.0, 2.5]), np.array([1.0, 2.0, 3.0]), 1.0)

    def test_requires_increasing_times(self):
        with pytest.raises(InvalidInputError):
            TemperatureTrace(np.array([0.0, 0.0]), np.array([1.0, 2.0]), 0.0)

    def test_csv_round_trip(self, tmp_path):
        trace = simulate_heating_curve(ThermalPlant(), 5.0, 30.0, 1.0)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        loaded = TemperatureTrace.from_csv(path)
        np.testing.assert_array_equal(loaded.times, trace.times)
        np.testing.assert_array_equal(loaded.temperatures, trace.temperatures)


class TestPlantFit:
    def make_run(self, v0, noise=0.0, seed=0):
        plant = ThermalPlant(c_v=0.26, k=0.0175, r_heater=100.0,
                             t_ambient=22.0, temperature=22.0)
        trace = simulate_heating_curve(plant, v0, 120.0, 0.5)
        if noise > 0:
            rng = np.random.default_rng(seed)
            trace = TemperatureTrace(
                trace.times,
                trace.temperatures + rng.normal(0.0, noise, len(trace)),
                trace.sample_period,
            )
        return HeatingRun(trace=trace, v0=v0, duty_cycle=1.0,
                          r_heater=100.0, t_ambient=22.0)

    def test_noiseless_recovery(self):
        runs = [self.make_run(v0) for v0 in (3.0, 5.0, 7.0)]
        result = fit_plant_parameters(runs)
        assert result.c_v == pytest.approx(0.26, rel=1e-6)
        assert result.k == pytest.approx(0.0175, rel=1e-6)
        assert result.rms_residual < 1e-9

    def test_noisy_recovery_within_5_percent(self):
        runs = [self.make_run(v0, noise=0.010, seed=i) for i, v0 in enumerate((3.0, 5.0, 7.0))]
        result = fit_plant_parameters(runs)
        assert result.c_v == pytest.approx(0.26, rel=0.05)
        assert result.k == pytest.approx(0.0175, rel=0.05)

    def test_single_trace_fit(self):
        result = fit_plant_parameters([self.make_run(5.0)])
        assert result.c_v == pytest.approx(0.26, rel=1e-6)
        assert result.k == pytest.approx(0.0175, rel=1e-6)

    def test_underdetermined_trace_rejected(self):
        trace = TemperatureTrace(np.arange(3.0), np.array([22.0, 23.0, 24.0]), 1.0)
        with pytest.raises(FitFailureError):
            fit_plant_parameters([HeatingRun(trace=trace, v0=5.0)])

    def test_degenerate_data_rejected(self):
        trace = TemperatureTrace(np.arange(20.0), np.full(20, 22.0), 1.0)
        with pytest.raises(FitFailureError, match="degenerate"):
            fit_plant_parameters([HeatingRun(trace=trace, v0=5.0)])

    def test_no_runs_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_plant_parameters([])


class TestPid:
    def test_zero_error_zero_output(self):
        ctrl = PidController(kp=2.0, ki=0.5, kd=0.1, output_min=-10.0, output_max=10.0)
        out, _ = pid_update(ctrl, 25.0, 25.0, 0.1)
        assert out == 0.0

    def test_pure_proportional(self):
        ctrl = PidController(kp=2.0, ki=0.0, kd=0.0, output_min=-10.0, output_max=10.0)
        out, _ = pid_update(ctrl, 26.0, 25.0, 0.1)
        assert out == pytest.approx(2.0)

    def test_zero_gains_never_change_output(self):
        ctrl = PidController(kp=0.0, ki=0.0, kd=0.0, output_min=-5.0, output_max=5.0)
        for measured in (20.0, 30.0, 25.0):
            out, ctrl = pid_update(ctrl, 25.0, measured, 0.1)
            assert out == 0.0

    def test_output_always_clamped(self):
        ctrl = PidController(kp=100.0, ki=10.0, kd=0.0, output_min=0.0, output_max=10.0)
        out, ctrl = pid_update(ctrl, 50.0, 20.0, 0.1)
        assert out == 10.0
        out, ctrl = pid_update(ctrl, -50.0, 20.0, 0.1)
        assert out == 0.0

    def test_integral_frozen_while_saturated(self):
        ctrl = PidController(kp=1.0, ki=1.0, kd=0.0, output_min=0.0, output_max=2.0)
        _, ctrl = pid_update(ctrl, 25.0, 24.5, 0.1)  # small error, unsaturated
        committed = ctrl.integral_state
        assert committed == pytest.approx(0.05)
        for _ in range(50):  # huge persistent error saturates the output
            out, ctrl = pid_update(ctrl, 50.0, 20.0, 0.1)
            assert out == 2.0
        assert ctrl.integral_state == committed

    def test_deterministic(self):
        ctrl = PidController()
        a = pid_update(ctrl, 25.0, 24.0, 0.1)
        b = pid_update(ctrl, 25.0, 24.0, 0.1)
        assert a == b

    def test_derivative_acts_on_measurement(self):
        ctrl = PidController(kp=0.0, ki=0.0, kd=1.0, output_min=-10.0, output_max=10.0)
        _, ctrl = pid_update(ctrl, 25.0, 24.0, 1.0)
        out, _ = pid_update(ctrl, 30.0, 24.0, 1.0)  # setpoint step, measurement flat
        assert out == 0.0  # no derivative kick

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(InvalidInputError):
            pid_update(PidController(), 25.0, 24.0, 0.0)


class TestClosedLoop:
    def test_constant_ambient_setpoint_stays_put(self):
        plant = ThermalPlant(t_ambient=22.0, temperature=22.0)
        trace = run_closed_loop(plant, PidController(), [(0.0, 22.0)],
                                sensor_noise_sigma=0.01, duration=120.0, dt=0.1, seed=3)
        assert np.all(np.abs(trace.temperatures - 22.0) < 0.08)

    def test_plateau_std_within_30_mK(self):
        plant = ThermalPlant(t_ambient=22.0, temperature=22.0)
        trace = run_closed_loop(plant, PidController(), [(0.0, 25.0)],
                                sensor_noise_sigma=0.010, duration=600.0, dt=0.1, seed=11)
        plateau = trace.temperatures[trace.times >= 120.0]
        assert plateau.std() <= 0.030
        assert plateau.mean() == pytest.approx(25.0, abs=0.01)

    def test_alternating_steps_settle(self):
        # 1.5 degC steps every 120 s; each plateau must settle to within
        # three plateau-sigmas of its setpoint before the next switch.
        plant = ThermalPlant(t_ambient=22.0, temperature=25.0)
        schedule = [(j * 120.0, 25.0 if j % 2 == 0 else 26.5) for j in range(12)]
        trace = run_closed_loop(plant, PidController(), schedule,
                                sensor_noise_sigma=0.010, duration=1440.0, dt=0.1, seed=5)
        for j in range(12):
            tail = (trace.times >= j * 120.0 + 90.0) & (trace.times < (j + 1) * 120.0)
            setpoint = 25.0 if j % 2 == 0 else 26.5
            values = trace.temperatures[tail]
            sigma = values.std()
            assert abs(values.mean() - setpoint) <= 3.0 * sigma

    def test_reproducible_under_seed(self):
        plant = ThermalPlant()
        kwargs = dict(sensor_noise_sigma=0.01, duration=30.0, dt=0.1, seed=9)
        a = run_closed_loop(plant, PidController(), [(0.0, 24.0)], **kwargs)
        b = run_closed_loop(plant, PidController(), [(0.0, 24.0)], **kwargs)
        np.testing.assert_array_equal(a.temperatures, b.temperatures)

    def test_empty_schedule_rejected(self):
        with pytest.raises(InvalidInputError):
            run_closed_loop(ThermalPlant(), PidController(), [], 0.0, 10.0, 0.1)

    def test_decreasing_schedule_rejected(self):
        with pytest.raises(InvalidInputError):
            run_closed_loop(ThermalPlant(), PidController(),
                            [(10.0, 25.0), (5.0, 26.0)], 0.0, 20.0, 0.1)

    def test_liquid_addition_dip_and_recovery(self):
        plant = ThermalPlant(t_ambient=22.0, temperature=31.0)
        event = LiquidAddition(time=300.0, added_volume=50.0,
                               added_temp=22.0, sample_volume=400.0)
        trace = run_closed_loop(plant, PidController(), [(0.0, 31.0)],
                                sensor_noise_sigma=0.005, duration=600.0, dt=0.1,
                                seed=2, liquid_additions=[event])
        before = trace.temperatures[(trace.times > 280.0) & (trace.times < 300.0)]
        dip_window = trace.temperatures[(trace.times >= 300.0) & (trace.times < 310.0)]
        tail = trace.temperatures[trace.times > 550.0]
        assert before.mean() == pytest.approx(31.0, abs=0.02)
        assert dip_window.min() < 30.3  # mixing pulls the node toward 30.0
        assert tail.mean() == pytest.approx(31.0, abs=0.02)  # PID recovers


class TestMicrowaveHeating:
    def test_dbm_conversions(self):
        assert dbm_to_milliwatts(0.0) == pytest.approx(1.0)
        assert dbm_to_milliwatts(20.0) == pytest.approx(100.0)
        assert dbm_to_milliwatts(21.8) == pytest.approx(151.356, abs=1e-3)
        assert dbm_to_milliwatts(-math.inf) == 0.0

    def test_effective_temperature_baseline_at_zero_power(self):
        model = MicrowaveHeatingModel(slope=0.066, t_baseline=22.0)
        assert effective_temperature(model, -math.inf) == pytest.approx(22.0)

    def test_effective_temperature_monotone(self):
        model = MicrowaveHeatingModel(slope=0.066, t_baseline=22.0)
        powers = np.linspace(0.0, 25.0, 50)
        temps = [effective_temperature(model, p) for p in powers]
        assert all(b > a for a, b in zip(temps, temps[1:]))

    def test_two_point_exact_line(self):
        model = fit_microwave_heating([(0.0, 22.0), (20.0, 32.0)])
        # 1 mW -> 22, 100 mW -> 32: slope 10/99 K/mW
        assert model.slope == pytest.approx(10.0 / 99.0, rel=1e-12)
        assert effective_temperature(model, 0.0) == pytest.approx(22.0, rel=1e-12)
        assert effective_temperature(model, 20.0) == pytest.approx(32.0, rel=1e-12)

    def test_published_points_fit(self):
        model = fit_microwave_heating(MW_POINTS)
        # Frozen from the explicit normal-equation solution of the four points.
        assert model.slope == pytest.approx(0.06608618381970383, rel=1e-9)
        assert model.t_baseline == pytest.approx(22.029811306358972, rel=1e-9)
        for power, temp in MW_POINTS:
            assert abs(effective_temperature(model, power) - temp) <= 0.15

    def test_fit_is_fixed_point_of_refitting(self):
        model = fit_microwave_heating(MW_POINTS)
        refit_points = [(p, effective_temperature(model, p)) for p, _ in MW_POINTS]
        refit = fit_microwave_heating(refit_points)
        assert refit.slope == pytest.approx(model.slope, rel=1e-12)
        assert refit.t_baseline == pytest.approx(model.t_baseline, rel=1e-12)

    def test_fit_failures(self):
        with pytest.raises(FitFailureError):
            fit_microwave_heating([(10.0, 25.0)])
        with pytest.raises(FitFailureError):
            fit_microwave_heating([(10.0, 25.0), (10.0, 26.0)])

    def test_negative_slope_rejected(self):
        with pytest.raises(InvalidInputError):
            MicrowaveHeatingModel(slope=-0.1, t_baseline=22.0)


class TestLiquidAddition:
    def test_no_change_at_equal_temperature(self):
        plant = ThermalPlant(temperature=31.0)
        after = liquid_addition_transient(plant, 50.0, 31.0, 400.0)
        assert after.temperature == pytest.approx(31.0)

    def test_worked_example(self):
        plant = ThermalPlant(temperature=31.0)
        after = liquid_addition_transient(plant, 50.0, 22.0, 400.0)
        assert after.temperature == pytest.approx(30.0)

    def test_rejects_nonpositive_volumes(self):
        plant = ThermalPlant()
        with pytest.raises(InvalidInputError):
            liquid_addition_transient(plant, 0.0, 22.0, 400.0)
        with pytest.raises(InvalidInputError):
            liquid_addition_transient(plant, 50.0, 22.0, -1.0)
