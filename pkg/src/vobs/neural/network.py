"""Recurrent regression network: stacked LSTM or GRU cells over a sensor
window, optionally concatenated with the previous state estimate, followed
by a sigmoid dense head.

The forward contract: the cell stack runs over all window steps (layer k's
full hidden sequence feeds layer k+1), the final step's hidden vector of the
last layer is concatenated with the previous state (when the network has a
state input) and pushed through the dense head. With sigmoid output, every
prediction lives in (0, 1), matching the scaled target space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError
from .layers import Dense, GruLayer, LstmLayer

DEFAULT_HIDDEN = (32, 64, 64, 128)
DEFAULT_DENSE = (64, 128, 64)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for one training run."""

    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class RecurrentRegressor:
    """Cell stack plus dense head; `state_dim` 0 disables the state input."""

    def __init__(self, kind: str, cells: list, head: list[Dense],
                 state_dim: int, init_seed: int = 0, format_version: int = 1):
        if kind not in ("lstm", "gru"):
            raise ConfigError(f"unknown cell kind '{kind}'")
        if not cells or not head:
            raise ConfigError("network needs at least one cell and one dense layer")
        feat_dim = cells[-1].hidden
        if head[0].in_dim != feat_dim + state_dim:
            raise ConfigError(
                f"dense head expects input {head[0].in_dim}, "
                f"stack provides {feat_dim} + state {state_dim}")
        for a, b in zip(cells[:-1], cells[1:]):
            if b.in_dim != a.hidden:
                raise ConfigError("cell stack dimensions do not chain")
        for a, b in zip(head[:-1], head[1:]):
            if b.in_dim != a.out_dim:
                raise ConfigError("dense head dimensions do not chain")
        self.kind = kind
        self.cells = cells
        self.head = head
        self.state_dim = state_dim
        self.init_seed = init_seed
        self.format_version = format_version

    # -- introspection ------------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.cells[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.head[-1].out_dim

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(c.hidden for c in self.cells)

    @property
    def dense_sizes(self) -> tuple:
        return tuple(d.out_dim for d in self.head)

    def params(self) -> list[tuple[str, np.ndarray]]:
        """Flat, ordered (name, array) view of every trainable tensor."""
        out = []
        for k, cell in enumerate(self.cells):
            out.append((f"{self.kind}{k}.wx", cell.wx))
            out.append((f"{self.kind}{k}.wh", cell.wh))
            out.append((f"{self.kind}{k}.b", cell.b))
        for k, dense in enumerate(self.head):
            out.append((f"dense{k}.w", dense.w))
            out.append((f"dense{k}.b", dense.b))
        return out

    def copy_weights(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.params()]

    def load_flat(self, arrays: list[np.ndarray]) -> None:
        own = self.params()
        if len(arrays) != len(own):
            raise ConfigError("parameter count mismatch")
        for (_, dst), src in zip(own, arrays):
            if dst.shape != src.shape:
                raise ConfigError(f"parameter shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src

    # -- forward / backward -------------------------------------------------

    def _check_finite(self, h_seq: np.ndarray, layer_idx: int) -> None:
        if not np.isfinite(h_seq).all():
            bad = np.argwhere(~np.isfinite(h_seq))
            step = int(bad[0][0])
            raise NumericalError(
                f"non-finite activation in {self.kind} layer {layer_idx} at step {step}")

    @staticmethod
    def _time_major(windows: np.ndarray) -> np.ndarray:
        seq = np.asarray(windows, dtype=np.float64)
        if seq.ndim == 2:
            seq = seq[None]
        return np.ascontiguousarray(seq.transpose(1, 0, 2))

    def features(self, windows: np.ndarray, check_finite: bool = True) -> np.ndarray:
        """Final-step hidden vector of the last cell layer, (B, h_last)."""
        seq = self._time_major(windows)
        for k, cell in enumerate(self.cells):
            seq, _ = cell.forward_seq(seq)
            if check_finite:
                self._check_finite(seq, k)
        return seq[-1]

    def head_forward(self, feats: np.ndarray, prev_state: np.ndarray | None) -> np.ndarray:
        u = feats
        if self.state_dim:
            prev = np.asarray(prev_state, dtype=np.float64)
            if prev.ndim == 1:
                prev = prev[None]
            u = np.concatenate([feats, prev], axis=1)
        elif prev_state is not None:
            raise ConfigError("this network has no state input")
        for dense in self.head:
            u, _ = dense.forward(u)
        if not np.isfinite(u).all():
            raise NumericalError("non-finite value in dense head output")
        return u

    def forward(self, windows: np.ndarray, prev_state: np.ndarray | None = None,
                check_finite: bool = True) -> np.ndarray:
        """Full pass window(s) -> (B, out_dim) predictions in scaled space."""
        return self.head_forward(self.features(windows, check_finite), prev_state)

    def loss(self, windows, prev_state, targets) -> float:
        return l2_loss(self.forward(windows, prev_state, check_finite=False), targets)

    def loss_and_gradients(self, windows, prev_state, targets):
        """L2 loss plus exact gradients for every parameter, via BPTT.

        Returns (loss, grads) with grads ordered exactly like params().
        """
        seq = self._time_major(windows)
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))

        cell_caches = []
        for cell in self.cells:
            seq, cache = cell.forward_seq(seq)
            cell_caches.append(cache)
        feats = seq[-1]

        if self.state_dim:
            prev = np.atleast_2d(np.asarray(prev_state, dtype=np.float64))
            u = np.concatenate([feats, prev], axis=1)
        else:
            u = feats
        head_caches = []
        for dense in self.head:
            u, cache = dense.forward(u)
            head_caches.append(cache)
        pred = u

        loss = l2_loss(pred, targets)
        du = 2.0 * (pred - targets) / pred.size

        head_grads = []
        for dense, cache in zip(reversed(self.head), reversed(head_caches)):
            du, g = dense.backward(du, cache)
            head_grads.append(g)
        head_grads.reverse()

        dfeat = du[:, : feats.shape[1]] if self.state_dim else du

        cell_grads = []
        dh_seq = None
        for k in range(len(self.cells) - 1, -1, -1):
            cache = cell_caches[k]
            hs = cache[-1]
            if dh_seq is None:
                dh_seq = np.zeros_like(hs)
                dh_seq[-1] = dfeat
            dx, g = self.cells[k].backward_seq(dh_seq, cache)
            cell_grads.append(g)
            dh_seq = dx
        cell_grads.reverse()

        grads: list[np.ndarray] = []
        for g in cell_grads:
            grads.extend((g["wx"], g["wh"], g["b"]))
        for g in head_grads:
            grads.extend((g["w"], g["b"]))
        return loss, grads


def l2_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch and channels of squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def forward_full(net: RecurrentRegressor, window: np.ndarray,
                 prev_state: np.ndarray | None = None) -> np.ndarray:
    """Single-sample convenience wrapper around RecurrentRegressor.forward."""
    out = net.forward(window, prev_state)
    return out[0] if out.shape[0] == 1 and np.asarray(window).ndim == 2 else out


def lstm_observer_net(seed: int, in_dim: int = 5,
                      hidden: tuple = DEFAULT_HIDDEN,
                      dense: tuple = DEFAULT_DENSE,
                      out_dim: int = 3, state_dim: int = 3,
                      output_activation: str = "sigmoid") -> RecurrentRegressor:
    """LSTM stack + dense head with the previous state concatenated in."""
    rng = np.random.default_rng(seed)
    cells = []
    d = in_dim
    for h in hidden:
        cells.append(LstmLayer.initialize(d, h, rng))
        d = h
    head = []
    d = hidden[-1] + state_dim
    for width in dense:
        head.append(Dense.initialize(d, width, rng, activation="sigmoid"))
        d = width
    head.append(Dense.initialize(d, out_dim, rng, activation=output_activation))
    return RecurrentRegressor("lstm", cells, head, state_dim, init_seed=seed)


def gru_observer_net(seed: int, in_dim: int = 5,
                     hidden: tuple = DEFAULT_HIDDEN,
                     dense: tuple = DEFAULT_DENSE,
                     out_dim: int = 3,
                     output_activation: str = "sigmoid") -> RecurrentRegressor:
    """GRU stack + dense head driven by the sensor window alone."""
    rng = np.random.default_rng(seed)
    cells = []
    d = in_dim
    for h in hidden:
        cells.append(GruLayer.initialize(d, h, rng))
        d = h
    head = []
    d = hidden[-1]
    for width in dense:
        head.append(Dense.initialize(d, width, rng, activation="sigmoid"))
        d = width
    head.append(Dense.initialize(d, out_dim, rng, activation=output_activation))
    return RecurrentRegressor("gru", cells, head, 0, init_seed=seed)
