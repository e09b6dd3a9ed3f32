import numpy as np
import pytest

from vobs.dataset import NoiseSpec, ScalerParams, WindowedDataset, fit_scaler, make_windows
from vobs.errors import ConfigError, NumericalError
from vobs.neural import TrainConfig, lstm_observer_net
from vobs.observer_lstm import (
    EstimateTrace,
    ObserverConfig,
    estimate_step,
    read_trace_csv,
    run_closed_loop,
    train_observer,
    write_trace_csv,
)
from vobs.simulator import SensorNoiseSpec, run_maneuver

from conftest import straight_script


def _scaler():
    lo = np.array([-5.0, -5.0, -1.0, 0.0, -0.5])
    hi = np.array([5.0, 5.0, 1.0, 30.0, 0.5])
    return ScalerParams(lo, hi, np.array([0.0, -2.0, -1.0]),
                        np.array([30.0, 2.0, 1.0]))


def _cfg(window_len=50):
    return ObserverConfig(scaler=_scaler(), noise=NoiseSpec(seed=3),
                          window_len=window_len)


def _zero_net(window_len=50):
    net = lstm_observer_net(seed=0, in_dim=5, hidden=(3,), dense=(4,),
                            out_dim=3, state_dim=3)
    for _, arr in net.params():
        arr[...] = 0.0
    return net


class TestEstimateStep:
    def test_zero_weights_give_channel_midpoints(self):
        cfg = _cfg(window_len=10)
        net = _zero_net()
        window = np.zeros((10, 5))
        out = estimate_step(window, np.array([10.0, 0.0, 0.0]), net, cfg)
        mid = 0.5 * (cfg.scaler.state_min + cfg.scaler.state_max)
        np.testing.assert_allclose(out, mid, atol=1e-12)

    def test_pure_function(self):
        cfg = _cfg(window_len=8)
        net = lstm_observer_net(seed=5, in_dim=5, hidden=(3,), dense=(4,),
                                out_dim=3, state_dim=3)
        rng = np.random.default_rng(0)
        window = rng.normal(0, 1, (8, 5))
        prev = np.array([12.0, 0.1, 0.05])
        a = estimate_step(window, prev, net, cfg)
        b = estimate_step(window, prev, net, cfg)
        np.testing.assert_array_equal(a, b)

    def test_matches_manual_composition(self):
        cfg = _cfg(window_len=8)
        net = lstm_observer_net(seed=5, in_dim=5, hidden=(3,), dense=(4,),
                                out_dim=3, state_dim=3)
        rng = np.random.default_rng(1)
        window = rng.normal(0, 1, (8, 5))
        prev = np.array([12.0, 0.1, 0.05])
        manual = cfg.scaler.unscale_state(
            net.forward(cfg.scaler.scale_sensors(window),
                        cfg.scaler.scale_state(prev))[0])
        got = estimate_step(window, prev, net, cfg)
        assert np.abs(got - manual).max() < 1e-12

    def test_wrong_window_shape_rejected(self):
        with pytest.raises(ConfigError):
            estimate_step(np.zeros((7, 5)), np.zeros(3), _zero_net(), _cfg(8))


class TestRunClosedLoop:
    def _frames(self, n=120, seed=2):
        rng = np.random.default_rng(seed)
        arr = np.zeros((n, 6))
        arr[:, 0] = np.arange(n) * 0.02
        arr[:, 1:6] = rng.normal(0, 0.3, (n, 5))
        arr[:, 4] = 15.0 + rng.normal(0, 0.05, n)
        return arr

    def test_trace_length_and_warmup(self):
        cfg = _cfg(window_len=50)
        net = lstm_observer_net(seed=6, in_dim=5, hidden=(3,), dense=(4,),
                                out_dim=3, state_dim=3)
        frames = self._frames()
        initial = np.array([15.0, 0.0, 0.0])
        trace = run_closed_loop(frames, initial, net, cfg)
        assert len(trace) == 120
        assert trace.warmup_len == 49
        np.testing.assert_array_equal(trace.estimates[:49],
                                      np.tile(initial, (49, 1)))

    def test_too_short_rejected(self):
        cfg = _cfg(window_len=50)
        with pytest.raises(ConfigError):
            run_closed_loop(self._frames(n=30), np.zeros(3), _zero_net(), cfg)

    def test_matches_naive_stepping(self):
        cfg = _cfg(window_len=20)
        net = lstm_observer_net(seed=7, in_dim=5, hidden=(3, 4), dense=(4,),
                                out_dim=3, state_dim=3)
        frames = self._frames(n=60)
        initial = np.array([15.0, 0.1, 0.02])
        trace = run_closed_loop(frames, initial, net, cfg, feature_batch=7)
        prev = initial
        for t in range(19, 60):
            est = estimate_step(frames[t - 19: t + 1], prev, net, cfg)
            assert np.abs(est - trace.estimates[t]).max() < 1e-9
            prev = trace.estimates[t]

    def test_no_ground_truth_leakage(self, params):
        # the trace depends only on sensors and the provided initial state
        traj = run_maneuver(straight_script(duration_s=4.0), params,
                            SensorNoiseSpec(seed=4))
        cfg = _cfg(window_len=50)
        net = lstm_observer_net(seed=8, in_dim=5, hidden=(3,), dense=(4,),
                                out_dim=3, state_dim=3)
        initial = traj.state_channels()[0]
        full = run_closed_loop(traj, initial, net, cfg)
        stripped = traj.sensors.copy()  # sensors only, truth discarded
        again = run_closed_loop(stripped, initial, net, cfg)
        np.testing.assert_array_equal(full.estimates, again.estimates)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        trace = EstimateTrace(np.arange(5) * 0.02,
                              np.random.default_rng(0).normal(size=(5, 3)),
                              warmup_len=2)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        back = read_trace_csv(path, warmup_len=2)
        np.testing.assert_array_equal(back.t_s, trace.t_s)
        np.testing.assert_array_equal(back.estimates, trace.estimates)


def _toy_dataset(n_traj=6, n=160, seed=0):
    """Windowed data from synthetic trajectories with a learnable pattern."""
    rng = np.random.default_rng(seed)
    trajs = []
    for k in range(n_traj):
        t = np.arange(n) * 0.02
        vx = 12 + 3 * np.sin(0.3 * t + k)
        vy = 0.2 * np.sin(0.7 * t + k)
        r = 0.1 * np.sin(0.5 * t + 2 * k)
        sensors = np.column_stack([
            t,
            np.gradient(vx, 0.02) + rng.normal(0, 0.05, n),
            np.gradient(vy, 0.02) + rng.normal(0, 0.05, n),
            r + rng.normal(0, 0.002, n),
            vx + 0.75 * r + rng.normal(0, 0.03, n),
            0.1 * r + rng.normal(0, 0.001, n),
        ])
        truth = np.zeros((n, 10))
        truth[:, 0] = t
        truth[:, 4] = vx
        truth[:, 5] = vy
        truth[:, 6] = r
        from vobs.domain import Trajectory
        trajs.append(Trajectory(sensors, truth, label=f"toy#{k}"))
    scaler = fit_scaler(trajs[:4])
    train = WindowedDataset.concatenate(
        [make_windows(t, scaler, w=30) for t in trajs[:4]])
    val = WindowedDataset.concatenate(
        [make_windows(t, scaler, w=30) for t in trajs[4:]])
    return train, val, scaler


class TestTrainObserver:
    def test_loss_decreases_and_best_epoch_consistent(self):
        train, val, scaler = _toy_dataset()
        cfg = ObserverConfig(scaler=scaler, noise=NoiseSpec(seed=1), window_len=30)
        tc = TrainConfig(epochs=3, batch_size=64, learning_rate=3e-3, seed=2)
        net = lstm_observer_net(seed=tc.seed, in_dim=5, hidden=(4, 4), dense=(8,),
                                out_dim=3, state_dim=3)
        net, log = train_observer(train, val, cfg, tc, net=net)
        assert len(log) == 3
        assert log[-1]["train_loss"] < log[0]["train_loss"]
        # returned weights reproduce the logged minimum validation loss
        best = min(e["val_loss"] for e in log)
        from vobs.observer_lstm import _batched_val_loss
        assert _batched_val_loss(net, val, 64) == pytest.approx(best, rel=1e-12)

    def test_noise_free_differs_from_noisy(self):
        train, val, scaler = _toy_dataset()
        tc = TrainConfig(epochs=2, batch_size=64, learning_rate=3e-3, seed=2)

        def run(noise):
            net = lstm_observer_net(seed=tc.seed, in_dim=5, hidden=(4,), dense=(8,),
                                    out_dim=3, state_dim=3)
            cfg = ObserverConfig(scaler=scaler, noise=noise, window_len=30)
            return train_observer(train, val, cfg, tc, net=net)

        _, log_noisy = run(NoiseSpec(seed=1))
        _, log_plain = run(NoiseSpec(0.0, 0.0))
        assert log_noisy[-1]["val_loss"] != log_plain[-1]["val_loss"]

    def test_plain_teacher_forcing_deterministic(self):
        # with stds at 0 no noise stream is consumed at all
        train, val, scaler = _toy_dataset()
        tc = TrainConfig(epochs=1, batch_size=64, learning_rate=3e-3, seed=5)

        def run():
            net = lstm_observer_net(seed=tc.seed, in_dim=5, hidden=(4,), dense=(8,),
                                    out_dim=3, state_dim=3)
            cfg = ObserverConfig(scaler=scaler, noise=NoiseSpec(0.0, 0.0),
                                 window_len=30)
            trained, _ = train_observer(train, val, cfg, tc, net=net)
            return trained.copy_weights()

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_divergence_reported_with_location(self):
        train, val, scaler = _toy_dataset()
        train.windows[5, 3, 2] = np.nan
        cfg = ObserverConfig(scaler=scaler, noise=NoiseSpec(0.0, 0.0), window_len=30)
        tc = TrainConfig(epochs=1, batch_size=512, learning_rate=1e-3, seed=1,
                         shuffle=False)
        net = lstm_observer_net(seed=1, in_dim=5, hidden=(3,), dense=(4,),
                                out_dim=3, state_dim=3)
        with pytest.raises(NumericalError, match="epoch|layer"):
            train_observer(train, val, cfg, tc, net=net)

    def test_empty_dataset_rejected(self):
        train, val, scaler = _toy_dataset()
        cfg = ObserverConfig(scaler=scaler, noise=NoiseSpec(), window_len=30)
        with pytest.raises(ConfigError):
            train_observer(WindowedDataset.empty(30), val, cfg, TrainConfig(epochs=1))
