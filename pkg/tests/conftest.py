import math

import numpy as np
import pytest

from vobs.domain import Trajectory, VehicleParams
from vobs.simulator import (
    ControlInput,
    ManeuverScript,
    SensorNoiseSpec,
    SimState,
    run_maneuver,
)


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


def straight_script(duration_s=10.0, speed=15.0, name="straight"):
    """Constant-speed straight line (zero steering, zero net force)."""
    def law(t, s):
        return ControlInput(0.0, 0.0)
    return ManeuverScript(name, duration_s, law, SimState(vx_mps=speed))


def circle_script(duration_s=30.0, speed=12.0, radius=40.0, name="circle"):
    """Constant-radius turn with a speed hold and shaped entry."""
    wheelbase = VehicleParams().wheelbase_m

    def law(t, s):
        fx = 4000.0 * (speed - s.vx_mps)
        shape = min(max((t - 1.0) / 2.0, 0.0), 1.0)
        r_ref = shape * s.vx_mps / radius
        delta = shape * wheelbase / radius + 0.4 * (r_ref - s.yaw_rate_radps)
        return ControlInput(delta, fx)

    return ManeuverScript(name, duration_s, law, SimState(vx_mps=speed))


@pytest.fixture(scope="session")
def straight_traj(params) -> Trajectory:
    return run_maneuver(straight_script(), params, SensorNoiseSpec.zero())


@pytest.fixture(scope="session")
def noisy_straight_traj(params) -> Trajectory:
    return run_maneuver(straight_script(duration_s=20.0), params,
                        SensorNoiseSpec(seed=11))
