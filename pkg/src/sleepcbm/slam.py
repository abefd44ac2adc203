"""Signal-to-concept network and its linear baseline.

The network maps a preprocessed oximetry series of length ``d`` to the ten
concept values: ``n_conv_blocks`` x (Conv1D -> BatchNorm -> LeakyReLU ->
MaxPool), two BiLSTM layers, dropout, attention pooling, and a dense head.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import nn
from .core import CONCEPT_NAMES, SATURATION_CONCEPTS, SIGNAL_LENGTH, ConceptVector
from .metrics import mae as _mae

logger = logging.getLogger(__name__)

N_CONCEPTS = len(CONCEPT_NAMES)
_SAT_IDX = [CONCEPT_NAMES.index(n) for n in SATURATION_CONCEPTS]
_RATE_IDX = [i for i in range(N_CONCEPTS) if i not in _SAT_IDX]

_LAYER_TYPES = {cls.__name__: cls for cls in (
    nn.Conv1D, nn.BatchNorm1D, nn.LeakyReLU, nn.MaxPool1D, nn.BiLSTM,
    nn.Dropout, nn.DeepAttention, nn.Dense)}


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class SlamConfig:
    n_conv_blocks: int = 3
    filters_per_block: tuple = (32, 64, 64)
    kernel_sizes: tuple = (9, 9, 9)
    pool_size: int = 4
    pool_stride: int = 4
    leaky_slope: float = 0.01
    activation: str = "leaky_relu"
    lstm_hidden: int = 32
    dropout: float = 0.1
    attention_units: int = 32
    lr: float = 5e-4
    epochs: int = 30
    batch_size: int = 16
    weight_decay: float = 0.0
    seed: int = 42

    def __post_init__(self):
        self.filters_per_block = tuple(int(f) for f in self.filters_per_block)
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.filters_per_block) != self.n_conv_blocks or \
                len(self.kernel_sizes) != self.n_conv_blocks:
            raise ValueError("filters_per_block and kernel_sizes need n_conv_blocks entries")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.activation not in ("leaky_relu", "relu"):
            raise ValueError("activation must be 'leaky_relu' or 'relu'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters_per_block"] = list(self.filters_per_block)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float
    seconds: float = field(default=0.0, compare=False)


class SlamRegressor(RegressorMixin, BaseEstimator):
    """Concept regressor trained with Adam on a mean-absolute-error loss.

    ``fit(X, y)`` takes preprocessed signals ``X`` of shape ``(n, d)`` and
    reference concepts ``y`` of shape ``(n, 10)``. Targets are standardised
    per concept with training statistics; predictions are mapped back and
    clamped (rates >= 0, saturations in [0, 100]). The parameters from the
    epoch with the lowest validation MAE are kept (training MAE when no
    validation set is given).
    """

    def __init__(self, n_conv_blocks=3, filters_per_block=(32, 64, 64),
                 kernel_sizes=(9, 9, 9), pool_size=4, pool_stride=4,
                 leaky_slope=0.01, activation="leaky_relu", lstm_hidden=32,
                 dropout=0.1, attention_units=32, lr=5e-4, epochs=30,
                 batch_size=16, weight_decay=0.0, seed=42, dtype="float32",
                 verbose=False):
        self.n_conv_blocks = n_conv_blocks
        self.filters_per_block = filters_per_block
        self.kernel_sizes = kernel_sizes
        self.pool_size = pool_size
        self.pool_stride = pool_stride
        self.leaky_slope = leaky_slope
        self.activation = activation
        self.lstm_hidden = lstm_hidden
        self.dropout = dropout
        self.attention_units = attention_units
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.seed = seed
        self.dtype = dtype
        self.verbose = verbose

    @classmethod
    def from_config(cls, config: SlamConfig, **kwargs) -> "SlamRegressor":
        return cls(**config.to_dict(), **kwargs)

    def config(self) -> SlamConfig:
        names = SlamConfig.__dataclass_fields__
        return SlamConfig(**{k: v for k, v in self.get_params().items() if k in names})

    # architecture ---------------------------------------------------------
    def _build(self, d: int):
        cfg = self.config()
        rng = np.random.default_rng(cfg.seed)
        layers = []
        channels, t = 1, d
        slope = cfg.leaky_slope if cfg.activation == "leaky_relu" else 0.0
        for f, k in zip(cfg.filters_per_block, cfg.kernel_sizes):
            pool = nn.MaxPool1D(cfg.pool_size, cfg.pool_stride)
            # max-pooling commutes with a monotone activation, so pooling first
            # gives identical outputs and gradients at a quarter of the cost
            layers += [nn.Conv1D(channels, f, k, rng), nn.BatchNorm1D(f, momentum=0.9),
                       pool, nn.LeakyReLU(slope)]
            channels, t = f, pool.output_length(t)
            if t < 1:
                raise ValueError(f"input length {d} is too short for {cfg.n_conv_blocks} pooling blocks")
        self.block_end_ = len(layers) - 1
        h = cfg.lstm_hidden
        layers += [nn.BiLSTM(channels, h, rng), nn.BiLSTM(2 * h, h, rng),
                   nn.Dropout(cfg.dropout, np.random.default_rng([cfg.seed, 1])),
                   nn.DeepAttention(t, 2 * h, cfg.attention_units, rng),
                   nn.Dense(2 * h, N_CONCEPTS, rng)]
        dtype = np.dtype(self.dtype)
        for layer in layers:
            layer.astype(dtype)
        self.layers_ = layers
        self.input_length_ = d
        self.pooled_length_ = t

    def _forward(self, x, training=False, stop=None):
        out = x[:, :, None] if x.ndim == 2 else x
        for i, layer in enumerate(self.layers_):
            out = layer.forward(out, training)
            if stop is not None and i == stop:
                break
        return out

    def _backward(self, dout, capture=None):
        # ``captured`` is the gradient w.r.t. the output of layer ``capture``
        captured = None
        for i in range(len(self.layers_) - 1, -1, -1):
            if capture is not None and i == capture:
                captured = dout
            dout = self.layers_[i].backward(dout)
        return dout, captured

    def loss_and_grads(self, X, y_scaled, training=True):
        """MAE on standardised targets and gradients for every layer (in place)."""
        pred = self._forward(X, training)
        loss, dpred = nn.mae_loss(pred, y_scaled)
        self._backward(dpred.astype(pred.dtype))
        if self.weight_decay:
            for layer in self.layers_:
                for k, p in layer.params.items():
                    layer.grads[k] = layer.grads[k] + self.weight_decay * p
        return loss

    # sklearn API ----------------------------------------------------------
    def fit(self, X, y, X_val=None, y_val=None):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        if y.shape != (X.shape[0], N_CONCEPTS):
            raise ValueError(f"y must have shape (n, {N_CONCEPTS})")
        dtype = np.dtype(self.dtype)
        self.n_features_in_ = X.shape[1]
        self.y_mean_ = y.mean(axis=0)
        std = y.std(axis=0)
        self.y_scale_ = np.where(std > 0, std, 1.0)
        self._build(X.shape[1])
        Xd = X.astype(dtype)
        ys = ((y - self.y_mean_) / self.y_scale_).astype(dtype)
        has_val = X_val is not None
        if has_val:
            X_val = check_array(X_val, dtype=np.float64)
            ys_val = (np.asarray(y_val, float) - self.y_mean_) / self.y_scale_

        opt = nn.Adam(self.layers_, lr=self.lr)
        shuffle_rng = np.random.default_rng([self.seed, 2])
        self.history_ = []
        best = (np.inf, None, -1)
        n = X.shape[0]
        for epoch in range(1, self.epochs + 1):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(n)
            total = 0.0
            for s in range(0, n, self.batch_size):
                idx = order[s:s + self.batch_size]
                loss = self.loss_and_grads(Xd[idx], ys[idx], training=True)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch starting {s}")
                opt.step()
                total += loss * idx.size
            train_mae = total / n
            if has_val:
                val_mae = _mae(ys_val, self._predict_scaled(X_val))
            else:
                val_mae = train_mae
            rec = EpochRecord(epoch, float(train_mae), float(val_mae),
                              time.perf_counter() - t0)
            self.history_.append(rec)
            if self.verbose:
                logger.info("epoch %d train_mae=%.4f val_mae=%.4f (%.1fs)",
                            epoch, rec.train_mae, rec.val_mae, rec.seconds)
            if val_mae < best[0]:
                best = (val_mae, self._snapshot(), epoch)
        self._restore(best[1])
        self.best_epoch_ = best[2]
        self.trained_ = True
        return self

    def _snapshot(self):
        snap = []
        for layer in self.layers_:
            state = {k: v.copy() for k, v in layer.params.items()}
            if isinstance(layer, nn.BatchNorm1D):
                state["__running_mean"] = layer.running_mean.copy()
                state["__running_var"] = layer.running_var.copy()
            snap.append(state)
        return snap

    def _restore(self, snap):
        for layer, state in zip(self.layers_, snap):
            for k, v in state.items():
                if k == "__running_mean":
                    layer.running_mean = v
                elif k == "__running_var":
                    layer.running_var = v
                elif hasattr(layer, "set_param"):
                    layer.set_param(k, v)
                else:
                    layer.params[k] = v

    def _check_X(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.input_length_:
            raise ValueError(f"expected signals of length {self.input_length_}, "
                             f"got {X.shape[1]}")
        return X

    def _predict_scaled(self, X, batch=32):
        dtype = np.dtype(self.dtype)
        out = [self._forward(X[s:s + batch].astype(dtype), training=False)
               for s in range(0, X.shape[0], batch)]
        return np.vstack(out).astype(np.float64)

    def predict_raw(self, X) -> np.ndarray:
        """Concepts in original units without clamping."""
        X = self._check_X(X)
        return self._predict_scaled(X) * self.y_scale_ + self.y_mean_

    def predict(self, X) -> np.ndarray:
        pred = self.predict_raw(X)
        pred[:, _RATE_IDX] = np.maximum(pred[:, _RATE_IDX], 0.0)
        pred[:, _SAT_IDX] = np.clip(pred[:, _SAT_IDX], 0.0, 100.0)
        return pred

    def predict_concepts(self, signal) -> ConceptVector:
        """Concept vector for one preprocessed series."""
        x = np.asarray(signal, dtype=float).reshape(1, -1)
        return ConceptVector.from_array(self.predict(x)[0])

    def attention_weights(self, X) -> np.ndarray:
        """Attention weights over pooled time steps, shape ``(n, T')``."""
        X = self._check_X(X)
        out = []
        for s in range(0, X.shape[0], 32):
            self._forward(X[s:s + 32].astype(np.dtype(self.dtype)))
            out.append(self.layers_[-2].alpha.astype(np.float64))
        return np.vstack(out)

    def saliency(self, X) -> np.ndarray:
        """Gradient-weighted activation map per input sample, in [0, 1].

        Gradients of the summed concept outputs (original units) with respect
        to the last convolutional block's pooled feature map are averaged over
        time into per-channel weights; the weighted channel sum is rectified,
        linearly upsampled to the input length and min-max normalised. A
        flat map is returned as zeros.
        """
        X = self._check_X(X)
        dtype = np.dtype(self.dtype)
        d = self.input_length_
        maps = np.empty((X.shape[0], d))
        for s in range(0, X.shape[0], 16):
            xb = X[s:s + 16].astype(dtype)
            feats = None
            out = xb[:, :, None]
            for i, layer in enumerate(self.layers_):
                out = layer.forward(out, training=False)
                if i == self.block_end_:
                    feats = out.astype(np.float64)
            upstream = np.broadcast_to(self.y_scale_, out.shape).astype(dtype)
            _, grad = self._backward(upstream, capture=self.block_end_)
            grad = grad.astype(np.float64)
            weights = grad.mean(axis=1, keepdims=True)
            cam = np.maximum((weights * feats).sum(axis=2), 0.0)
            maps[s:s + xb.shape[0]] = _upsample(cam, d, self.pool_size,
                                               self.pool_stride, self.n_conv_blocks)
        lo = maps.min(axis=1, keepdims=True)
        span = maps.max(axis=1, keepdims=True) - lo
        return np.where(span > 0, (maps - lo) / np.where(span > 0, span, 1.0), 0.0)

    # persistence ------------------------------------------------------------
    def get_state(self) -> tuple[dict, dict]:
        check_is_fitted(self, "layers_")
        params = self.get_params()
        params["filters_per_block"] = list(params["filters_per_block"])
        params["kernel_sizes"] = list(params["kernel_sizes"])
        topology = [{"type": type(l).__name__, "config": l.config()} for l in self.layers_]
        meta = {"kind": "slam", "params": params, "topology": topology,
                "input_length": self.input_length_, "seed": self.seed,
                "trained": bool(getattr(self, "trained_", False)),
                "concepts": list(CONCEPT_NAMES),
                "history": [asdict(h) for h in getattr(self, "history_", [])]}
        arrays = {"y_mean": self.y_mean_, "y_scale": self.y_scale_}
        for i, layer in enumerate(self.layers_):
            for k, v in layer.params.items():
                arrays[f"layer{i}.{k}"] = v
            if isinstance(layer, nn.BatchNorm1D):
                arrays[f"layer{i}.running_mean"] = layer.running_mean
                arrays[f"layer{i}.running_var"] = layer.running_var
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "SlamRegressor":
        params = dict(meta["params"])
        for key in ("filters_per_block", "kernel_sizes"):
            params[key] = tuple(params[key])
        model = cls(**params)
        model._build(int(meta["input_length"]))
        dtype = np.dtype(model.dtype)
        for i, (layer, spec) in enumerate(zip(model.layers_, meta["topology"])):
            if type(layer).__name__ != spec["type"]:
                raise ValueError(f"layer {i}: bundle has {spec['type']}, "
                                 f"model built {type(layer).__name__}")
            for k in list(layer.params):
                value = arrays[f"layer{i}.{k}"].astype(dtype)
                if hasattr(layer, "set_param"):
                    layer.set_param(k, value)
                else:
                    layer.params[k] = value
            if isinstance(layer, nn.BatchNorm1D):
                layer.running_mean = arrays[f"layer{i}.running_mean"].astype(dtype)
                layer.running_var = arrays[f"layer{i}.running_var"].astype(dtype)
        model.y_mean_ = arrays["y_mean"]
        model.y_scale_ = arrays["y_scale"]
        model.n_features_in_ = model.input_length_
        model.trained_ = bool(meta.get("trained", False))
        model.history_ = [EpochRecord(**h) for h in meta.get("history", [])]
        return model


def _upsample(cam: np.ndarray, d: int, pool: int, stride: int, n_blocks: int) -> np.ndarray:
    """Linear interpolation from pooled steps back to input samples.

    Pooled step ``j`` is placed at the centre of its receptive window.
    """
    t = cam.shape[1]
    scale = stride ** n_blocks
    centres = (np.arange(t) + 0.5) * scale
    grid = np.arange(d) + 0.5
    return np.vstack([np.interp(grid, centres, row) for row in cam])


def untrained_model(d: int = SIGNAL_LENGTH, **params) -> SlamRegressor:
    """A randomly initialised model (for saliency of random weights, tests)."""
    model = SlamRegressor(**params)
    model._build(d)
    model.n_features_in_ = d
    model.y_mean_ = np.zeros(N_CONCEPTS)
    model.y_scale_ = np.ones(N_CONCEPTS)
    model.trained_ = False
    model.history_ = []
    return model


# linear baseline ----------------------------------------------------------------

def minute_features(X, stat: str = "min") -> np.ndarray:
    """Per-minute summary of preprocessed 1 Hz signals: ``(n, d // 60)``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    m = d // 60
    blocks = X[:, :m * 60].reshape(n, m, 60)
    if stat == "min":
        return blocks.min(axis=2)
    if stat == "mean":
        return blocks.mean(axis=2)
    raise ValueError(f"unknown stat {stat!r}")


class RidgeConceptRegressor(RegressorMixin, BaseEstimator):
    """Closed-form multi-output ridge regression with an unpenalised intercept.

    Solves ``(Xc^T Xc + alpha I) W = Xc^T yc`` on centred data.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=float)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = y.mean(axis=0)
        Xc = X - self.x_mean_
        A = Xc.T @ Xc + self.alpha * np.eye(X.shape[1])
        if self.alpha == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
            raise np.linalg.LinAlgError(
                "singular normal equations with alpha=0; use alpha > 0")
        self.coef_ = np.linalg.solve(A, Xc.T @ (y - self.y_mean_))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return (X - self.x_mean_) @ self.coef_ + self.y_mean_


def concept_error_table(C_true, C_pred) -> list[dict]:
    """Per-concept MAE and RMSE rows."""
    C_true = np.asarray(C_true, float)
    C_pred = np.asarray(C_pred, float)
    rows = []
    for j, name in enumerate(CONCEPT_NAMES):
        err = C_pred[:, j] - C_true[:, j]
        rows.append({"concept": name, "mae": float(np.mean(np.abs(err))),
                     "rmse": float(np.sqrt(np.mean(err ** 2)))})
    return rows


def ridge_concept_baseline(X_train, C_train, X_test, C_test, alpha: float = 1.0,
                           stat: str = "min") -> list[dict]:
    """Ridge on per-minute signal summaries; returns per-concept error rows."""
    model = RidgeConceptRegressor(alpha).fit(minute_features(X_train, stat), C_train)
    return concept_error_table(C_test, model.predict(minute_features(X_test, stat)))
