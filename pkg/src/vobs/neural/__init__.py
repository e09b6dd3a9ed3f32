"""Self-contained float64 neural engine: layers, BPTT, Adam, gradient
verification, and weight serialization."""

from .adam import Adam
from .gradcheck import gradient_check, write_gradcheck_csv
from .layers import Dense, GruLayer, LstmLayer, gru_cell_forward, lstm_cell_forward, sigmoid
from .network import (
    DEFAULT_DENSE,
    DEFAULT_HIDDEN,
    RecurrentRegressor,
    TrainConfig,
    forward_full,
    gru_observer_net,
    l2_loss,
    lstm_observer_net,
)
from .weights_io import (
    WeightsCorruptionError,
    WeightsShapeError,
    WeightsVersionError,
    load_weights,
    save_weights,
)

__all__ = [
    "Adam",
    "DEFAULT_DENSE",
    "DEFAULT_HIDDEN",
    "Dense",
    "GruLayer",
    "LstmLayer",
    "RecurrentRegressor",
    "TrainConfig",
    "WeightsCorruptionError",
    "WeightsShapeError",
    "WeightsVersionError",
    "forward_full",
    "gradient_check",
    "gru_cell_forward",
    "gru_observer_net",
    "l2_loss",
    "load_weights",
    "lstm_cell_forward",
    "lstm_observer_net",
    "save_weights",
    "sigmoid",
    "write_gradcheck_csv",
]
