"""Vehicle velocity and yaw-rate observer workbench.

A physics simulator generates maneuver corpora from city driving up to
near-limits lateral accelerations; a recurrent observer trained with
noise-injected teacher forcing estimates (vx, vy, yaw rate) closed-loop from
in-car sensors; an extended Kalman filter and an end-to-end GRU serve as
baselines; the evaluation harness compares them with per-regime MAE tables.
"""

__version__ = "0.1.0"
