import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vobs.domain import (
    DT_S,
    G_AY,
    GroundTruthState,
    SensorFrame,
    Trajectory,
    VehicleParams,
    accel_in_g,
    read_trajectory_csv,
    side_slip,
    validate_trajectory,
    write_trajectory_csv,
)
from vobs.errors import DataFormatError


class TestVehicleParams:
    def test_defaults_match_reference_vehicle(self):
        p = VehicleParams()
        assert p.mass_kg == 1578.0
        assert p.lf_m == 1.134
        assert p.lr_m == 1.578
        assert p.track_m == 1.513
        assert p.inertia_z_kgm2 == 2924.0

    def test_wheelbase_is_lf_plus_lr(self):
        p = VehicleParams()
        assert p.wheelbase_m == pytest.approx(p.lf_m + p.lr_m, abs=0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            VehicleParams(mass_kg=0.0)
        with pytest.raises(ValueError):
            VehicleParams(lf_m=-1.0)

    def test_static_loads_sum_to_weight(self):
        p = VehicleParams()
        total = p.static_load_front_n + p.static_load_rear_n
        assert total == pytest.approx(p.mass_kg * 9.81, rel=1e-12)


class TestSideSlip:
    def test_zero_lateral(self):
        assert side_slip(10.0, 0.0) == 0.0

    def test_analytic_value(self):
        assert side_slip(10.0, 1.0) == pytest.approx(0.09967, abs=1e-5)

    def test_degenerate_standstill(self):
        assert side_slip(0.0, 0.0) == 0.0

    @given(st.floats(0.1, 100), st.floats(-30, 30))
    def test_odd_in_vy(self, vx, vy):
        assert side_slip(vx, -vy) == pytest.approx(-side_slip(vx, vy), abs=1e-15)


class TestAccelInG:
    def test_one_g(self):
        assert accel_in_g(9.81) == pytest.approx(1.0)

    def test_reference_low_dynamic_peak(self):
        assert accel_in_g(2.10) == pytest.approx(0.214, abs=5e-4)

    def test_zero(self):
        assert accel_in_g(0.0) == 0.0

    @given(st.floats(-50, 50))
    def test_even(self, a):
        assert accel_in_g(a) == accel_in_g(-a)


def _well_formed(n=100):
    t = np.arange(n) * DT_S
    sensors = np.zeros((n, 6))
    sensors[:, 0] = t
    truth = np.zeros((n, 10))
    truth[:, 0] = t
    truth[:, 4] = 10.0  # vx
    return Trajectory(sensors, truth, label="test")


class TestValidateTrajectory:
    def test_well_formed(self):
        assert validate_trajectory(_well_formed()) == []

    def test_nan_flagged_with_index(self):
        traj = _well_formed()
        traj.sensors[42, 2] = np.nan
        violations = validate_trajectory(traj)
        assert len(violations) == 1
        assert "non-finite" in violations[0] and "42" in violations[0]

    def test_timing_gap_flagged(self):
        traj = _well_formed()
        traj.sensors[50:, 0] += DT_S  # 0.04 s gap before index 50
        traj.truth[50:, 0] += DT_S
        violations = validate_trajectory(traj)
        assert any("timing violation" in v and "50" in v for v in violations)

    def test_beta_inconsistency_flagged(self):
        traj = _well_formed()
        traj.truth[10, 9] = 0.3  # beta inconsistent with vy=0
        assert any("side-slip" in v for v in validate_trajectory(traj))

    def test_simulated_trajectory_is_valid(self, straight_traj):
        assert validate_trajectory(straight_traj) == []


class TestTrajectoryCsv:
    def test_round_trip_bit_exact(self, tmp_path, noisy_straight_traj):
        path = tmp_path / "traj.csv"
        write_trajectory_csv(noisy_straight_traj, path)
        back = read_trajectory_csv(path)
        np.testing.assert_array_equal(back.sensors, noisy_straight_traj.sensors)
        np.testing.assert_array_equal(back.truth, noisy_straight_traj.truth)

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataFormatError):
            read_trajectory_csv(path)

    def test_frame_accessor_types(self, straight_traj):
        frame, gt = straight_traj.frame(0)
        assert isinstance(frame, SensorFrame)
        assert isinstance(gt, GroundTruthState)
        assert frame.t_s == gt.t_s == 0.0

    def test_from_frames_round_trip(self, straight_traj):
        pairs = [straight_traj.frame(i) for i in range(5)]
        rebuilt = Trajectory.from_frames(pairs, label="x")
        np.testing.assert_array_equal(rebuilt.sensors, straight_traj.sensors[:5])
