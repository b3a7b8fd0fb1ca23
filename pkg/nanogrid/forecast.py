"""h-step-ahead PV and load forecasters.

Three kinds share one interface: a feedforward network (scikit-learn
MLPRegressor over min-max scaled histories), a persistence baseline, and
a perfect-foresight oracle that copies the truth it is handed.
"""
import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import joblib
import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.metrics import mean_squared_error
from sklearn.neural_network import MLPRegressor
from sklearn.preprocessing import MinMaxScaler

from nanogrid.errors import ContractError, DataError, ModelError, ParameterError

logger = logging.getLogger("Nanogrid.forecast")

KINDS = ("persistence", "mlp", "perfect")
SOLVERS = ("adam", "sgd")
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForecastConfig:
    kind: str = "mlp"
    input_window: int = 30
    horizon: int = 15
    hidden_layers: tuple = (32, 32)
    activation: str = "tanh"
    solver: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    alpha: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    shuffle: bool = True
    validation_fraction: float = 0.2
    joint: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"forecaster kind must be one of {KINDS}, got {self.kind!r}")
        if self.solver not in SOLVERS:
            raise ParameterError(f"forecaster solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.input_window < 1 or self.horizon < 1:
            raise ParameterError(
                f"input_window and horizon must be >= 1, got {self.input_window}, {self.horizon}")
        if not 0 < self.validation_fraction < 1:
            raise ParameterError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        object.__setattr__(self, "hidden_layers", tuple(int(u) for u in self.hidden_layers))


@dataclass(eq=False)
class ForecastModel:
    config: ForecastConfig
    scaler: MinMaxScaler = None
    estimators: dict = field(default_factory=dict)
    train_loss: dict = field(default_factory=dict)
    val_loss: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.config.kind

    @property
    def input_window(self):
        return self.config.input_window

    @property
    def horizon(self):
        return self.config.horizon

    @property
    def fitted(self):
        return self.kind != "mlp" or bool(self.estimators)

    @property
    def weights(self):
        return {name: [c.copy() for c in est.coefs_] for name, est in self.estimators.items()}


@dataclass(frozen=True, eq=False)
class ForecastResult:
    pv_hat: np.ndarray
    load_hat: np.ndarray
    issued_at: int = 0


def _windows(values, input_window, horizon):
    n = values.size - input_window - horizon + 1
    inputs = sliding_window_view(values, input_window)[:n]
    targets = sliding_window_view(values[input_window:], horizon)[:n]
    return inputs, targets


def _train_network(X_train, y_train, X_val, y_val, config):
    estimator = MLPRegressor(
        hidden_layer_sizes=config.hidden_layers,
        activation=config.activation,
        solver=config.solver,
        learning_rate="constant",
        learning_rate_init=config.learning_rate,
        momentum=config.momentum,
        nesterovs_momentum=False,
        alpha=config.alpha,
        batch_size=min(config.batch_size or len(X_train), len(X_train)),
        shuffle=config.shuffle,
        random_state=config.seed,
    )
    if y_train.shape[1] == 1:
        y_train = y_train.ravel()

    best_loss = np.inf
    best_params = None
    val_losses = []
    for epoch in range(config.epochs):
        estimator.partial_fit(X_train, y_train)
        predictions = estimator.predict(X_val).reshape(y_val.shape)
        val_loss = mean_squared_error(y_val, predictions)
        val_losses.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = (copy.deepcopy(estimator.coefs_), copy.deepcopy(estimator.intercepts_))
        logger.debug(f"epoch {epoch + 1}: train {estimator.loss_:.6g}, validation {val_loss:.6g}")

    estimator.coefs_, estimator.intercepts_ = best_params
    logger.info(f"Trained network {config.hidden_layers}: best validation MSE {best_loss:.6g}")
    return estimator, list(estimator.loss_curve_), val_losses


def fit(history_pv, history_load, config=None):
    config = config or ForecastConfig()
    model = ForecastModel(config)
    if config.kind != "mlp":
        return model

    if not history_pv.aligned_with(history_load):
        raise DataError("forecaster history: pv and load series are not aligned")
    w, h = config.input_window, config.horizon
    n_windows = len(history_pv) - w - h + 1
    if n_windows < 2:
        raise DataError(
            f"forecaster history too short: need at least {w + h + 1} samples for "
            f"input_window={w}, horizon={h}; got {len(history_pv)}")
    n_val = max(1, int(n_windows * config.validation_fraction))
    n_train = n_windows - n_val

    values = np.column_stack([history_pv.values, history_load.values])
    model.scaler = MinMaxScaler().fit(values)
    scaled = model.scaler.transform(values)
    X_pv, Y_pv = _windows(scaled[:, 0], w, h)
    X_load, Y_load = _windows(scaled[:, 1], w, h)

    if config.joint:
        datasets = {"joint": (np.hstack([X_pv, X_load]), np.hstack([Y_pv, Y_load]))}
    else:
        datasets = {"pv": (X_pv, Y_pv), "load": (X_load, Y_load)}

    for name, (X, Y) in datasets.items():
        estimator, train_loss, val_loss = _train_network(
            X[:n_train], Y[:n_train], X[n_train:], Y[n_train:], config)
        model.estimators[name] = estimator
        model.train_loss[name] = train_loss
        model.val_loss[name] = val_loss
    return model


def _network_forecast(model, pv_windows, load_windows):
    scale, offset = model.scaler.scale_, model.scaler.min_
    h = model.horizon
    pv_s = pv_windows * scale[0] + offset[0]
    load_s = load_windows * scale[1] + offset[1]
    n = pv_windows.shape[0]
    if model.config.joint:
        out = model.estimators["joint"].predict(np.hstack([pv_s, load_s])).reshape(n, 2 * h)
        pv_out, load_out = out[:, :h], out[:, h:]
    else:
        pv_out = model.estimators["pv"].predict(pv_s).reshape(n, h)
        load_out = model.estimators["load"].predict(load_s).reshape(n, h)
    return (pv_out - offset[0]) / scale[0], (load_out - offset[1]) / scale[1]


def predict_batch(model, pv_windows, load_windows, truth=None):
    """Forecasts for many origins at once; rows are origins, columns leads."""
    pv_windows = np.atleast_2d(np.asarray(pv_windows, dtype=float))
    load_windows = np.atleast_2d(np.asarray(load_windows, dtype=float))
    w, h = model.input_window, model.horizon
    if pv_windows.shape[1] != w or load_windows.shape[1] != w:
        raise ContractError(
            f"forecast input windows must have length {w}, got {pv_windows.shape[1]} and {load_windows.shape[1]}")

    if model.kind == "persistence":
        pv_hat = np.repeat(pv_windows[:, -1:], h, axis=1)
        load_hat = np.repeat(load_windows[:, -1:], h, axis=1)
    elif model.kind == "perfect":
        if truth is None:
            raise ContractError("perfect forecaster requires future_truth")
        pv_hat = np.atleast_2d(np.asarray(truth[0], dtype=float))
        load_hat = np.atleast_2d(np.asarray(truth[1], dtype=float))
        if pv_hat.shape != (pv_windows.shape[0], h) or load_hat.shape != pv_hat.shape:
            raise ContractError(f"future_truth must hold {h} samples per origin")
    else:
        if not model.fitted:
            raise ModelError("mlp forecaster used before fit")
        pv_hat, load_hat = _network_forecast(model, pv_windows, load_windows)

    return np.clip(pv_hat, 0.0, None), np.clip(load_hat, 0.0, None)


def predict(model, recent_pv, recent_load, future_truth=None, issued_at=0):
    truth = None
    if future_truth is not None:
        truth = (np.asarray(future_truth[0], dtype=float)[None, :],
                 np.asarray(future_truth[1], dtype=float)[None, :])
    recent_pv = np.asarray(recent_pv, dtype=float)
    recent_load = np.asarray(recent_load, dtype=float)
    if recent_pv.ndim != 1 or recent_load.ndim != 1:
        raise ContractError("recent windows must be 1-D")
    pv_hat, load_hat = predict_batch(model, recent_pv[None, :], recent_load[None, :], truth)
    return ForecastResult(pv_hat[0], load_hat[0], issued_at)


def rolling_forecasts(model, pv_values, load_values):
    """Forecast issued at every step t from samples up to and including t.

    Histories shorter than the input window are padded with the first
    sample; truth past the end of the series repeats the last sample.
    """
    pv_values = np.asarray(pv_values, dtype=float)
    load_values = np.asarray(load_values, dtype=float)
    w, h = model.input_window, model.horizon
    n = pv_values.size

    def history(values):
        padded = np.concatenate([np.full(w - 1, values[0]), values])
        return sliding_window_view(padded, w)[:n]

    def future(values):
        padded = np.concatenate([values, np.full(h, values[-1])])
        return sliding_window_view(padded[1:], h)[:n]

    truth = (future(pv_values), future(load_values)) if model.kind == "perfect" else None
    return predict_batch(model, history(pv_values), history(load_values), truth)


def evaluate(model, test_pv, test_load):
    """Rolling-origin MAE and RMSE per lead time, in kW."""
    w, h = model.input_window, model.horizon
    if len(test_pv) != len(test_load):
        raise DataError("evaluation pv and load series differ in length")
    if len(test_pv) < w + h:
        raise DataError(f"evaluation data too short: need at least {w + h} samples, got {len(test_pv)}")

    X_pv, T_pv = _windows(test_pv.values, w, h)
    X_load, T_load = _windows(test_load.values, w, h)
    pv_hat, load_hat = predict_batch(model, X_pv, X_load, (T_pv, T_load))
    pv_err, load_err = pv_hat - T_pv, load_hat - T_load

    report = pd.DataFrame({
        "lead": np.arange(1, h + 1),
        "pv_mae_kw": np.abs(pv_err).mean(axis=0),
        "pv_rmse_kw": np.sqrt((pv_err ** 2).mean(axis=0)),
        "load_mae_kw": np.abs(load_err).mean(axis=0),
        "load_rmse_kw": np.sqrt((load_err ** 2).mean(axis=0)),
    })
    logger.info(f"Evaluated {model.kind} forecaster on {X_pv.shape[0]} origins: "
                f"PV MAE at lead {h} = {report['pv_mae_kw'].iloc[-1]:.3f} kW")
    return report


def save_model(model, path):
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "scaler": model.scaler,
        "estimators": model.estimators,
        "train_loss": model.train_loss,
        "val_loss": model.val_loss,
    }
    joblib.dump(payload, path)
    return Path(path)


def load_model(path):
    try:
        payload = joblib.load(path)
    except Exception as e:
        raise ModelError(f"{path}: cannot read forecaster: {e}")
    if not isinstance(payload, dict) or payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported forecaster file format")
    return ForecastModel(
        config=ForecastConfig(**payload["config"]),
        scaler=payload["scaler"],
        estimators=payload["estimators"],
        train_loss=payload["train_loss"],
        val_loss=payload["val_loss"],
    )
