import math

import numpy as np
import pytest
from scipy.optimize import fsolve, minimize_scalar

from vobs.domain import (
    DT_S,
    G_AY,
    G_MPS2,
    G_VX,
    G_VY,
    G_YAWRATE,
    S_WHEEL,
    TireParams,
    VehicleParams,
)
from vobs.errors import ConfigError, NumericalError
from vobs.simulator import (
    ControlInput,
    ManeuverScript,
    SensorNoiseSpec,
    SimState,
    builtin_scripts,
    pacejka_lateral_force,
    pacejka_peak_slip,
    run_maneuver,
    step_dynamic_bicycle,
    synthesize_sensors,
    _derivatives,
)

from conftest import circle_script, straight_script


class TestPacejka:
    def test_zero_slip_zero_force(self):
        assert pacejka_lateral_force(0.0, 5000.0, TireParams()) == 0.0

    def test_peak_location_matches_closed_form(self):
        tire = TireParams()
        fz = 6000.0
        alpha_star = pacejka_peak_slip(tire)
        res = minimize_scalar(lambda a: -pacejka_lateral_force(a, fz, tire),
                              bounds=(0.0, 0.5), method="bounded",
                              options={"xatol": 1e-12})
        assert res.x == pytest.approx(alpha_star, abs=1e-6)
        assert pacejka_lateral_force(alpha_star, fz, tire) == pytest.approx(
            tire.peak_factor_d_per_n * fz, rel=1e-12)

    def test_odd_in_slip(self):
        tire = TireParams()
        alpha_star = pacejka_peak_slip(tire)
        assert pacejka_lateral_force(-alpha_star, 6000.0, tire) == pytest.approx(
            -pacejka_lateral_force(alpha_star, 6000.0, tire), rel=1e-15)

    def test_linearization_slope(self):
        # dFy/dslip at 0 equals B*C*D*Fz, by central differences
        tire = TireParams()
        fz = 7000.0
        eps = 1e-7
        slope = (pacejka_lateral_force(eps, fz, tire)
                 - pacejka_lateral_force(-eps, fz, tire)) / (2 * eps)
        expected = (tire.stiffness_factor_b * tire.shape_factor_c
                    * tire.peak_factor_d_per_n * fz)
        assert slope == pytest.approx(expected, rel=1e-6)

    def test_rejects_nonpositive_load(self):
        with pytest.raises(ValueError):
            pacejka_lateral_force(0.1, 0.0, TireParams())


class TestStepDynamicBicycle:
    def test_straight_rolling(self, params):
        s = SimState(vx_mps=10.0)
        out = step_dynamic_bicycle(s, ControlInput(0.0, 0.0), params, 0.01)
        assert out.vx_mps == pytest.approx(10.0, abs=1e-12)
        assert out.vy_mps == pytest.approx(0.0, abs=1e-12)
        assert out.yaw_rate_radps == pytest.approx(0.0, abs=1e-12)
        assert out.x_m == pytest.approx(0.1, rel=1e-9)

    def test_steady_state_yaw_rate_matches_root_solver(self, params):
        # hold speed with a proportional force law, constant steering
        delta = 0.02
        speed = 10.0

        def law(t, s):
            return ControlInput(delta, 4000.0 * (speed - s.vx_mps))

        script = ManeuverScript("ss", 30.0, law, SimState(vx_mps=speed))
        traj = run_maneuver(script, params, SensorNoiseSpec.zero())
        vx_end = traj.truth[-1, G_VX]
        r_end = traj.truth[-1, G_YAWRATE]

        fzf = params.static_load_front_n
        fzr = params.static_load_rear_n

        def residual(z):
            vy, r = z
            d = _derivatives(0, 0, 0, vx_end, vy, r, delta, 0.0, params, fzf, fzr)
            return [d[4], d[5]]  # dvy, dr

        vy_ss, r_ss = fsolve(residual, [0.0, 0.07], xtol=1e-13)
        assert r_end == pytest.approx(r_ss, rel=1e-6)
        assert traj.truth[-1, G_VY] == pytest.approx(vy_ss, rel=1e-5, abs=1e-8)

    def test_rejects_bad_dt(self, params):
        s = SimState(vx_mps=10.0)
        with pytest.raises(ValueError):
            step_dynamic_bicycle(s, ControlInput(0.0, 0.0), params, 0.0)
        with pytest.raises(ValueError):
            step_dynamic_bicycle(s, ControlInput(0.0, 0.0), params, -0.01)

    def test_rejects_nonfinite_state(self, params):
        s = SimState(vx_mps=float("nan"))
        with pytest.raises(NumericalError):
            step_dynamic_bicycle(s, ControlInput(0.0, 0.0), params, 0.01)


class TestRunManeuver:
    def test_straight_frame_count_and_vy(self, params, straight_traj):
        assert len(straight_traj) == 500
        assert np.abs(straight_traj.truth[:, G_VY]).max() < 1e-9

    def test_energy_sanity_vx_constant(self, straight_traj):
        vx = straight_traj.truth[:, G_VX]
        assert np.abs(vx - vx[0]).max() < 1e-9

    def test_steady_circle_ay_equals_vx_times_r(self, params):
        traj = run_maneuver(circle_script(), params, SensorNoiseSpec.zero())
        ay = traj.truth[-1, G_AY]
        vxr = traj.truth[-1, G_VX] * traj.truth[-1, G_YAWRATE]
        assert abs(ay - vxr) / abs(ay) < 0.01

    def test_rk4_substep_halving(self, params):
        script = builtin_scripts("slalom", 0.5, duration_s=10.0)
        coarse = run_maneuver(script, params, SensorNoiseSpec.zero(), substep_s=0.002)
        fine = run_maneuver(script, params, SensorNoiseSpec.zero(), substep_s=0.001)
        diff = np.abs(coarse.truth[-1] - fine.truth[-1]).max()
        assert diff < 1e-6

    def test_near_limits_ramp_peak(self, params):
        script = builtin_scripts("constant_radius_ramp", 1.0)
        traj = run_maneuver(script, params, SensorNoiseSpec.zero())
        peak = np.abs(traj.truth[:, G_AY]).max() / G_MPS2
        assert 0.75 <= peak <= 0.85

    def test_low_g_slalom_stays_normal(self, params):
        script = builtin_scripts("slalom", 0.22, duration_s=20.0)
        traj = run_maneuver(script, params, SensorNoiseSpec.zero())
        assert np.abs(traj.truth[:, G_AY]).max() < 0.5 * G_MPS2

    def test_invalid_substep_rejected(self, params):
        with pytest.raises(ConfigError):
            run_maneuver(straight_script(), params, SensorNoiseSpec.zero(),
                         substep_s=0.003)


class TestSynthesizeSensors:
    def test_wheel_speed_exact_on_straight(self, params, straight_traj):
        assert np.allclose(straight_traj.sensors[:, S_WHEEL],
                           straight_traj.truth[:, G_VX], atol=1e-12)

    def test_outer_wheel_faster_in_left_turn(self, params):
        traj = run_maneuver(circle_script(), params, SensorNoiseSpec.zero())
        # left turn: positive yaw rate; rear-right is the outer wheel
        steady = slice(250, None)
        assert (traj.truth[steady, G_YAWRATE] > 0).all()
        assert (traj.sensors[steady, S_WHEEL] > traj.truth[steady, G_VX]).all()

    def test_seeded_noise_reproducible(self, params, straight_traj):
        noise = SensorNoiseSpec(seed=123)
        steering = np.zeros(len(straight_traj))
        a = synthesize_sensors(straight_traj.truth, steering, params, noise)
        b = synthesize_sensors(straight_traj.truth, steering, params, noise)
        np.testing.assert_array_equal(a, b)

    def test_bias_applied(self, params, straight_traj):
        noise = SensorNoiseSpec(0, 0, 0, 0, 0, bias_wheel_speed=0.5)
        steering = np.zeros(len(straight_traj))
        out = synthesize_sensors(straight_traj.truth, steering, params, noise)
        assert np.allclose(out[:, S_WHEEL] - straight_traj.truth[:, G_VX], 0.5)


class TestBuiltinScripts:
    def test_u_turn_low_intensity_stays_below_03g(self, params):
        traj = run_maneuver(builtin_scripts("u_turn", 0.2), params,
                            SensorNoiseSpec.zero())
        assert np.abs(traj.truth[:, G_AY]).max() < 0.3 * G_MPS2

    def test_city_mix_duration(self):
        script = builtin_scripts("city_mix", 0.3)
        assert script.duration_s >= 600.0

    def test_intensity_scales_peak(self, params):
        peaks = []
        for intensity in (0.2, 0.6, 1.0):
            traj = run_maneuver(builtin_scripts("step_steer", intensity,
                                                duration_s=15.0),
                                params, SensorNoiseSpec.zero())
            peaks.append(np.abs(traj.truth[:, G_AY]).max())
        assert peaks[0] < peaks[1] < peaks[2]
        assert peaks[2] > 0.75 * G_MPS2

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            builtin_scripts("donuts", 0.5)

    def test_intensity_range_enforced(self):
        with pytest.raises(ConfigError):
            builtin_scripts("slalom", 0.0)
        with pytest.raises(ConfigError):
            builtin_scripts("slalom", 1.2)

    def test_friction_circle_coverage(self, params):
        # high-g samples present, mode of the accel distribution near zero
        # (proportions mirror the reference corpus: mostly city driving)
        trajs = [run_maneuver(builtin_scripts("city_mix", 0.3, duration_s=300.0),
                              params, SensorNoiseSpec.zero()),
                 run_maneuver(builtin_scripts("constant_radius_ramp", 1.0,
                                              duration_s=30.0),
                              params, SensorNoiseSpec.zero())]
        mag = np.concatenate([np.hypot(t.truth[:, 7], t.truth[:, 8]) for t in trajs])
        assert (mag > 0.7 * G_MPS2).any()
        counts, edges = np.histogram(mag, bins=30, range=(0, G_MPS2))
        mode_center = 0.5 * (edges[np.argmax(counts)] + edges[np.argmax(counts) + 1])
        assert mode_center < 0.15 * G_MPS2
