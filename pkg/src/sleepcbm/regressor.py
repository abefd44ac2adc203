"""Fusion of predicted concepts with clinical features into an AHI estimate."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import (CONCEPT_NAMES, ClinicalFeatures, Ethnicity, Gender, Race,
                   SeverityClass, severity)

logger = logging.getLogger(__name__)

__all__ = [
    "CLINICAL_FEATURE_NAMES", "ClinicalEncoder", "MLPAHIRegressor",
    "RegressorConfig", "encode_clinical", "fuse", "fused_feature_names", "mlp_loss_and_grad",
    "severity", "severity_array",
]

_NUMERIC = ("age", "bmi", "sbp", "dbp", "weight_kg", "height_cm")
CLINICAL_FEATURE_NAMES = (
    *_NUMERIC, "smoker", "hypertension", "gender_male",
    "ethnicity_nonhispanic", "ethnicity_hispanic",
    "race_white", "race_black", "race_other",
)


def encode_clinical(c: ClinicalFeatures) -> np.ndarray:
    """Fixed-length numeric encoding (see ``CLINICAL_FEATURE_NAMES``).

    Binary fields become 0/1, ethnicity and race are one-hot. Numeric fields
    pass through unscaled; scaling is fitted by the regressor.
    """
    try:
        eth = Ethnicity(c.ethnicity)
        race = Race(c.race)
        gender = Gender(c.gender)
    except ValueError as exc:
        raise ValueError(f"cannot encode clinical record: {exc}") from None
    return np.array([
        *(float(getattr(c, n)) for n in _NUMERIC),
        float(bool(c.smoker)), float(bool(c.hypertension)),
        float(gender is Gender.MALE),
        float(eth is Ethnicity.NON_HISPANIC), float(eth is Ethnicity.HISPANIC),
        float(race is Race.WHITE), float(race is Race.BLACK), float(race is Race.OTHER),
    ])


class ClinicalEncoder(TransformerMixin, BaseEstimator):
    """sklearn wrapper around :func:`encode_clinical`."""

    def fit(self, X, y=None):
        self.feature_names_out_ = np.array(CLINICAL_FEATURE_NAMES, dtype=object)
        return self

    def transform(self, X):
        return np.vstack([encode_clinical(c) for c in X]) if len(X) else \
            np.empty((0, len(CLINICAL_FEATURE_NAMES)))

    def get_feature_names_out(self, input_features=None):
        return np.array(CLINICAL_FEATURE_NAMES, dtype=object)


def fused_feature_names() -> list[str]:
    return [*CONCEPT_NAMES, *CLINICAL_FEATURE_NAMES]


def severity_array(ahi) -> np.ndarray:
    """Vectorised :func:`severity` returning integer class codes."""
    ahi = np.asarray(ahi, dtype=float)
    if np.any(~(ahi >= 0)):
        raise ValueError("AHI values must be non-negative")
    return np.searchsorted([5.0, 15.0, 30.0], ahi, side="right")


@dataclass
class RegressorConfig:
    hidden_units: int = 50
    activation: str = "relu"
    l2_penalty: float = 0.1
    lr: float = 1e-3
    patience: int = 5
    max_epochs: int = 3000
    seed: int = 42

    def __post_init__(self):
        if self.hidden_units <= 0:
            raise ValueError("hidden_units must be > 0")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")

    def to_dict(self):
        return asdict(self)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


def mlp_forward(params, X, activation="relu"):
    z = X @ params["W1"] + params["b1"]
    a = _act(z, activation)
    return (a @ params["W2"] + params["b2"])[:, 0], (z, a)


def mlp_loss_and_grad(params: dict, X: np.ndarray, y: np.ndarray,
                      l2_penalty: float, activation: str = "relu"):
    """Squared-error loss with an L2 weight penalty, and its gradient.

    ``loss = sum((f(X) - y)**2) / (2n) + l2_penalty * (|W1|^2 + |W2|^2) / (2n)``;
    biases are not penalised.
    """
    n = X.shape[0]
    pred, (z, a) = mlp_forward(params, X, activation)
    r = pred - y
    W1, W2 = params["W1"], params["W2"]
    loss = (r @ r) / (2 * n) + l2_penalty * ((W1 * W1).sum() + (W2 * W2).sum()) / (2 * n)
    dpred = r / n
    grads = {
        "W2": a.T @ dpred[:, None] + l2_penalty * W2 / n,
        "b2": np.array([dpred.sum()]),
    }
    dz = np.outer(dpred, W2[:, 0]) * _act_grad(z, a, activation)
    grads["W1"] = X.T @ dz + l2_penalty * W1 / n
    grads["b1"] = dz.sum(axis=0)
    return float(loss), grads


class MLPAHIRegressor(RegressorMixin, BaseEstimator):
    """Single-hidden-layer MLP trained by full-batch gradient descent.

    Inputs and the target are standardised with training statistics. The
    learning rate is halved whenever the monitored loss (validation loss if
    ``fit`` receives a validation set, training loss otherwise) has not
    improved for ``patience`` epochs; the parameters with the lowest
    monitored loss are kept. Predictions are clamped at 0.

    Parameters
    ----------
    hidden_units : int
    activation : {'relu', 'tanh'}
    l2_penalty : float
        Weight penalty, scaled by ``1 / (2 n)`` like the data term.
    lr : float
        Initial gradient-descent step size.
    patience : int
    max_epochs : int
    seed : int
    """

    def __init__(self, hidden_units=50, activation="relu", l2_penalty=0.1,
                 lr=1e-3, patience=5, max_epochs=3000, seed=42):
        self.hidden_units = hidden_units
        self.activation = activation
        self.l2_penalty = l2_penalty
        self.lr = lr
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed

    @classmethod
    def from_config(cls, config: RegressorConfig) -> "MLPAHIRegressor":
        return cls(**config.to_dict())

    def _init_params(self, n_features):
        rng = np.random.default_rng(self.seed)
        h = self.hidden_units
        lim1 = np.sqrt(6.0 / (n_features + h))
        return {
            "W1": rng.uniform(-lim1, lim1, (n_features, h)),
            "b1": rng.uniform(-lim1, lim1, h),
            # a zero output layer starts at the (standardised) target mean
            "W2": np.zeros((h, 1)),
            "b2": np.zeros(1),
        }

    def _scale_X(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        # canonical row order makes full-batch sums independent of input order
        order = np.lexsort((y, *X.T[::-1]))
        X, y = X[order], y[order]
        self.n_features_in_ = X.shape[1]
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        self.y_mean_ = float(y.mean())
        y_scale = float(y.std())
        self.y_scale_ = y_scale if y_scale > 0 else 1.0
        Xs = self._scale_X(X)
        ys = (y - self.y_mean_) / self.y_scale_
        if X_val is not None:
            X_val = check_array(X_val, dtype=np.float64)
            Xv = self._scale_X(X_val)
            yv = (np.asarray(y_val, dtype=float) - self.y_mean_) / self.y_scale_

        params = self._init_params(X.shape[1])
        lr = self.lr
        best = (np.inf, {k: v.copy() for k, v in params.items()})
        since_best = 0
        history = []
        for epoch in range(self.max_epochs):
            loss, grads = mlp_loss_and_grad(params, Xs, ys, self.l2_penalty, self.activation)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            if X_val is not None:
                pv, _ = mlp_forward(params, Xv, self.activation)
                monitored = float(np.mean((pv - yv) ** 2) / 2)
            else:
                monitored = loss
            history.append((loss, monitored))
            if monitored < best[0] - 1e-12:
                best = (monitored, {k: v.copy() for k, v in params.items()})
                since_best = 0
            else:
                since_best += 1
                if since_best >= self.patience:
                    lr *= 0.5
                    since_best = 0
                    if lr < self.lr * 1e-6:
                        break
            for k in params:
                params[k] = params[k] - lr * grads[k]
        self.params_ = best[1]
        self.best_loss_ = best[0]
        self.loss_history_ = np.array(history)
        self.n_iter_ = len(history)
        return self

    def predict_raw(self, X) -> np.ndarray:
        """Unclamped predictions in target units."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out, _ = mlp_forward(self.params_, self._scale_X(X), self.activation)
        return out * self.y_scale_ + self.y_mean_

    def predict(self, X) -> np.ndarray:
        return np.maximum(self.predict_raw(X), 0.0)

    def predict_severity(self, X) -> list[SeverityClass]:
        return [severity(a) for a in self.predict(X)]

    # bundle support -------------------------------------------------------
    def get_state(self) -> tuple[dict, dict]:
        check_is_fitted(self, "params_")
        meta = {"kind": "mlp_regressor", "params": self.get_params(),
                "n_features_in": self.n_features_in_,
                "y_mean": self.y_mean_, "y_scale": self.y_scale_}
        arrays = {f"param_{k}": v for k, v in self.params_.items()}
        arrays["x_mean"] = self.x_mean_
        arrays["x_scale"] = self.x_scale_
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "MLPAHIRegressor":
        model = cls(**meta["params"])
        model.n_features_in_ = int(meta["n_features_in"])
        model.y_mean_ = float(meta["y_mean"])
        model.y_scale_ = float(meta["y_scale"])
        model.x_mean_ = arrays["x_mean"]
        model.x_scale_ = arrays["x_scale"]
        model.params_ = {k[len("param_"):]: v for k, v in arrays.items()
                         if k.startswith("param_")}
        return model


def fuse(concepts: np.ndarray, clinical: Sequence[ClinicalFeatures] | np.ndarray) -> np.ndarray:
    """Concatenate ``(n, 10)`` concepts with encoded clinical features."""
    concepts = np.atleast_2d(np.asarray(concepts, dtype=float))
    if len(clinical) and isinstance(clinical[0], ClinicalFeatures):
        clinical = ClinicalEncoder().fit_transform(clinical)
    clinical = np.atleast_2d(np.asarray(clinical, dtype=float))
    if concepts.shape[0] != clinical.shape[0]:
        raise ValueError("concept and clinical row counts differ")
    return np.hstack([concepts, clinical])
