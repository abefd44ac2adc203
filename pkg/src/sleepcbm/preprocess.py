"""Oximetry preprocessing: pad/truncate, Savitzky-Golay smoothing,
interpolation of invalid samples, per-signal standardisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import SIGNAL_LENGTH, OximetrySignal


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    target_len: int = SIGNAL_LENGTH
    savgol_window: int = 15
    savgol_order: int = 2

    def __post_init__(self):
        _check_savgol(self.savgol_window, self.savgol_order)
        if self.target_len <= 0:
            raise ConfigError("target_len must be positive")


def _check_savgol(window, order):
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"savgol window must be odd and >= 3, got {window}")
    if not 0 <= order < window:
        raise ConfigError(f"savgol order must be in [0, window), got {order}")


def pad_or_truncate(signal: OximetrySignal, target_len: int = SIGNAL_LENGTH) -> OximetrySignal:
    """Zero-pad at the end or keep the first ``target_len`` samples.

    Padded positions are literal zeros and are marked valid.
    """
    n = len(signal)
    if n == 0:
        raise ValueError("cannot pad an empty signal")
    if n >= target_len:
        return OximetrySignal(signal.samples[:target_len], signal.validity[:target_len])
    pad = target_len - n
    return OximetrySignal(np.concatenate([signal.samples, np.zeros(pad)]),
                          np.concatenate([signal.validity, np.ones(pad, bool)]))


def interpolate_invalid(signal: OximetrySignal) -> OximetrySignal:
    """Fill invalid samples linearly; edge gaps hold the nearest valid value."""
    valid = signal.validity
    if not valid.any():
        raise ValueError("signal entirely invalid")
    if valid.all():
        return signal
    idx = np.arange(len(signal))
    filled = signal.samples.copy()
    filled[~valid] = np.interp(idx[~valid], idx[valid], signal.samples[valid])
    return OximetrySignal(filled, np.ones(len(signal), bool))


@lru_cache(maxsize=32)
def savgol_fit_matrix(window: int, order: int) -> np.ndarray:
    """Rows map a window of samples to the fitted polynomial evaluated at each
    window position: ``fitted = M @ window_values``.

    ``M = V (V^T V)^{-1} V^T`` with ``V`` the Vandermonde matrix on centred
    positions, i.e. the least-squares projector onto polynomials of degree
    ``order``.
    """
    _check_savgol(window, order)
    half = window // 2
    pos = np.arange(-half, half + 1, dtype=float)
    V = np.vander(pos, order + 1, increasing=True)
    Q, _ = np.linalg.qr(V)
    M = Q @ Q.T
    M.setflags(write=False)
    return M


def savgol_coefficients(window: int, order: int) -> np.ndarray:
    """Weights giving the centre value of the window's least-squares fit."""
    return savgol_fit_matrix(window, order)[window // 2].copy()


def _savgol_values(x: np.ndarray, window: int, order: int) -> np.ndarray:
    M = savgol_fit_matrix(window, order)
    half = window // 2
    n = x.shape[-1]
    out = np.empty_like(x, dtype=float)
    view = np.lib.stride_tricks.sliding_window_view(x, window, axis=-1)
    out[..., half:n - half] = view @ M[half]
    # boundary: evaluate the fit of the first / last full window
    out[..., :half] = x[..., :window] @ M[:half].T
    out[..., n - half:] = x[..., n - window:] @ M[half + 1:].T
    return out


def savgol_smooth(signal: OximetrySignal, window: int = 15, order: int = 2) -> OximetrySignal:
    """Savitzky-Golay smoothing that keeps the signal length.

    Interior samples take the centre of the least-squares polynomial fit to
    their window; the first and last ``window // 2`` samples are evaluated on
    the fit to the first / last full window. An output sample is marked
    invalid when any sample its fit used was invalid.
    """
    _check_savgol(window, order)
    n = len(signal)
    if n < window:
        raise ValueError(f"signal length {n} is shorter than the savgol window {window}")
    valid = signal.validity
    x = np.where(valid, signal.samples, 0.0)
    out = _savgol_values(x, window, order)
    if valid.all():
        return OximetrySignal(out, valid)
    half = window // 2
    bad = (~valid).astype(float)
    touched = np.convolve(bad, np.ones(window), mode="same") > 0
    touched[:half] = bad[:window].any()
    touched[n - half:] = bad[n - window:].any()
    return OximetrySignal(out, ~touched)


def standardize(signal) -> np.ndarray:
    """Zero mean, unit population standard deviation; constant input gives zeros."""
    x = np.asarray(getattr(signal, "samples", signal), dtype=float)
    if x.size == 0:
        raise ValueError("cannot standardize an empty signal")
    mean = x.mean()
    centred = x - mean
    std = np.sqrt(np.mean(centred * centred))
    if std <= 1e-12 * max(1.0, abs(mean)):
        return np.zeros_like(x)
    return centred / std


def preprocess_pipeline(signal: OximetrySignal, config: PreprocessConfig | None = None) -> np.ndarray:
    """pad_or_truncate -> savgol_smooth -> interpolate_invalid -> standardize."""
    config = config or PreprocessConfig()
    s = pad_or_truncate(signal, config.target_len)
    s = savgol_smooth(s, config.savgol_window, config.savgol_order)
    s = interpolate_invalid(s)
    return standardize(s)


class OximetryPreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`preprocess_pipeline` row-wise.

    ``X`` is either a sequence of :class:`OximetrySignal` or a 2D float array
    with NaN marking invalid samples (rows may be ragged when given as a
    list). Output has shape ``(n_signals, target_len)``.
    """

    def __init__(self, target_len=SIGNAL_LENGTH, savgol_window=15, savgol_order=2):
        self.target_len = target_len
        self.savgol_window = savgol_window
        self.savgol_order = savgol_order

    def fit(self, X, y=None):
        self.config_ = PreprocessConfig(self.target_len, self.savgol_window,
                                        self.savgol_order)
        return self

    def transform(self, X):
        config = getattr(self, "config_", None) or PreprocessConfig(
            self.target_len, self.savgol_window, self.savgol_order)
        rows = []
        for item in X:
            if not isinstance(item, OximetrySignal):
                item = OximetrySignal.from_values(item)
            rows.append(preprocess_pipeline(item, config))
        if not rows:
            return np.empty((0, config.target_len))
        return np.vstack(rows)
