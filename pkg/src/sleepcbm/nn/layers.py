"""Hand-differentiated layers operating on (batch, time, channels) arrays.

Every layer follows the same small protocol: ``forward(x, training)`` caches
whatever the matching ``backward(dout)`` needs, ``backward`` fills
``self.grads`` (same keys as ``self.params``) and returns the gradient with
respect to the input.
"""

from __future__ import annotations

import numpy as np


class MissingCacheError(RuntimeError):
    """Raised when ``backward`` is called without a preceding ``forward``."""


class Layer:
    """Base class for differentiable layers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise MissingCacheError(
                f"{type(self).__name__}.backward called before forward"
            )
        cache = self._cache
        self._cache = None
        return cache

    def astype(self, dtype) -> "Layer":
        for name, value in self.params.items():
            self.params[name] = value.astype(dtype)
        return self

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def config(self) -> dict:
        """JSON-serialisable constructor arguments."""
        return {}


def _check_3d(x, n_channels, name):
    if x.ndim != 3:
        raise ValueError(f"{name} expects (batch, time, channels), got {x.shape}")
    if x.shape[2] != n_channels:
        raise ValueError(
            f"{name} expects {n_channels} input channels, got {x.shape[2]}"
        )


class Conv1D(Layer):
    """1D convolution with 'same' padding and stride 1.

    Weights have shape ``(kernel_size, in_channels, filters)``; the output at
    time ``t`` is ``sum_j x[t + j - left] @ W[j] + b`` with ``left =
    (kernel_size - 1) // 2`` and zeros outside the signal.
    """

    def __init__(self, in_channels: int, filters: int, kernel_size: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        limit = np.sqrt(6.0 / fan_in)  # He-uniform; layers feed leaky ReLU
        self.params["W"] = rng.uniform(-limit, limit,
                                       (kernel_size, in_channels, filters))
        self.params["b"] = np.zeros(filters)

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters,
                "kernel_size": self.kernel_size}

    # im2col buffers above this size fall back to a per-tap loop
    max_im2col_bytes = 512 * 2**20

    def _pad(self, x):
        left = (self.kernel_size - 1) // 2
        right = self.kernel_size - 1 - left
        return np.pad(x, ((0, 0), (left, right), (0, 0)))

    def _w2d(self):
        # column index c * k + j matches the (c, j) layout of the im2col view
        W = self.params["W"]
        return W.transpose(1, 0, 2).reshape(-1, self.filters)

    def forward(self, x, training=False):
        _check_3d(x, self.in_channels, "Conv1D")
        W, b = self.params["W"], self.params["b"]
        n, t, _ = x.shape
        xp = self._pad(x)
        k = self.kernel_size
        if n * t * k * self.in_channels * xp.itemsize <= self.max_im2col_bytes:
            cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
            cols = cols.reshape(n * t, -1)
            out = cols @ self._w2d()
            out += b
            self._cache = ("cols", cols, xp.shape, t)
            return out.reshape(n, t, self.filters)
        out = np.empty((n, t, self.filters), dtype=np.result_type(x, W))
        out[...] = b
        for j in range(k):
            out += xp[:, j:j + t, :] @ W[j]
        self._cache = ("taps", xp, xp.shape, t)
        return out

    def backward(self, dout):
        mode, data, xp_shape, t = self._pop_cache()
        W = self.params["W"]
        n = dout.shape[0]
        k = self.kernel_size
        dflat = dout.reshape(-1, self.filters)
        ones = np.ones(dflat.shape[0], dtype=dflat.dtype)
        dxp = np.zeros(xp_shape, dtype=np.result_type(dout, W))
        if mode == "cols":
            dW2 = data.T @ dflat
            dW = dW2.reshape(self.in_channels, k, self.filters).transpose(1, 0, 2)
            dcols = (dflat @ self._w2d().T).reshape(n, t, self.in_channels, k)
            for j in range(k):
                dxp[:, j:j + t, :] += dcols[..., j]
        else:
            dW = np.empty_like(W)
            for j in range(k):
                window = data[:, j:j + t, :]
                dW[j] = window.reshape(n * t, -1).T @ dflat
                dxp[:, j:j + t, :] += dout @ W[j].T
        self.grads = {"W": np.ascontiguousarray(dW), "b": ones @ dflat}
        left = (k - 1) // 2
        return dxp[:, left:left + t, :]


class BatchNorm1D(Layer):
    """Per-channel batch normalisation over the batch and time axes."""

    def __init__(self, n_channels: int, momentum: float = 0.99,
                 eps: float = 1e-3):
        super().__init__()
        self.n_channels = n_channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(n_channels)
        self.params["beta"] = np.zeros(n_channels)
        self.running_mean = np.zeros(n_channels)
        self.running_var = np.ones(n_channels)

    def config(self):
        return {"n_channels": self.n_channels, "momentum": self.momentum,
                "eps": self.eps}

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def forward(self, x, training=False):
        _check_3d(x, self.n_channels, "BatchNorm1D")
        gamma, beta = self.params["gamma"], self.params["beta"]
        flat = x.reshape(-1, self.n_channels)
        if training:
            # column sums as mat-vec products: much faster than axis reductions
            ones = np.ones(flat.shape[0], dtype=flat.dtype)
            mean = ones @ flat / flat.shape[0]
            xhat = flat - mean
            var = ones @ (xhat * xhat) / flat.shape[0]
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
            xhat = flat - mean
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat *= inv_std
        self._cache = (xhat, inv_std, training)
        out = xhat * gamma
        out += beta
        return out.reshape(x.shape)

    def backward(self, dout):
        xhat, inv_std, training = self._pop_cache()
        gamma = self.params["gamma"]
        shape = dout.shape
        dflat = dout.reshape(-1, self.n_channels)
        ones = np.ones(dflat.shape[0], dtype=dflat.dtype)
        dgamma = ones @ (dflat * xhat)
        dbeta = ones @ dflat
        self.grads = {"gamma": dgamma, "beta": dbeta}
        scale = gamma * inv_std
        if not training:
            return (dflat * scale).reshape(shape)
        m = dflat.shape[0]
        dx = xhat * (dgamma / m)
        dx += dbeta / m
        np.subtract(dflat, dx, out=dx)
        dx *= scale
        return dx.reshape(shape)


class LeakyReLU(Layer):
    """``max(x, slope * x)``; ``slope=0`` gives a plain ReLU."""

    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope

    def config(self):
        return {"slope": self.slope}

    def forward(self, x, training=False):
        positive = x > 0
        self._cache = positive
        if 0 <= self.slope <= 1:
            return np.maximum(x, self.slope * x)
        return np.where(positive, x, self.slope * x)

    def backward(self, dout):
        positive = self._pop_cache()
        out = dout * self.slope
        np.copyto(out, dout, where=positive)
        return out


def ReLU() -> LeakyReLU:
    return LeakyReLU(slope=0.0)


class MaxPool1D(Layer):
    """Max pooling over time with 'valid' windows.

    Output length is ``(T - pool) // stride + 1``. Ties route the gradient to
    the first maximal element of the window.
    """

    def __init__(self, pool: int, stride: int | None = None):
        super().__init__()
        self.pool = pool
        self.stride = pool if stride is None else stride

    def config(self):
        return {"pool": self.pool, "stride": self.stride}

    def output_length(self, t: int) -> int:
        return (t - self.pool) // self.stride + 1

    def forward(self, x, training=False):
        n, t, c = x.shape
        t_out = self.output_length(t)
        if t_out < 1:
            raise ValueError(f"MaxPool1D: sequence length {t} < pool {self.pool}")
        if self.pool == self.stride:
            windows = x[:, :t_out * self.pool, :].reshape(n, t_out, self.pool, c)
            # pairwise scan: strided argmax over a short middle axis is slow
            out = windows[:, :, 0, :].copy()
            arg = np.zeros(out.shape, dtype=np.int8 if self.pool < 128 else np.int64)
            for j in range(1, self.pool):
                cand = windows[:, :, j, :]
                better = cand > out
                np.copyto(out, cand, where=better)
                np.copyto(arg, j, where=better)
        else:
            view = np.lib.stride_tricks.sliding_window_view(x, self.pool, axis=1)
            windows = view[:, ::self.stride].transpose(0, 1, 3, 2)
            arg = windows.argmax(axis=2)
            out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, shape = self._pop_cache()
        n, t, c = shape
        t_out = arg.shape[1]
        if self.pool == self.stride:
            dxw = np.zeros((n, t_out, self.pool, c), dtype=dout.dtype)
            np.put_along_axis(dxw, arg[:, :, None, :], dout[:, :, None, :], axis=2)
            if t_out * self.pool == t:
                return dxw.reshape(shape)
            dx = np.zeros(shape, dtype=dout.dtype)
            dx[:, :t_out * self.pool, :] = dxw.reshape(n, t_out * self.pool, c)
            return dx
        dx = np.zeros(shape, dtype=dout.dtype)
        for j in range(self.pool):
            idx = j + self.stride * np.arange(t_out)
            dx[:, idx, :] += np.where(arg == j, dout, 0.0)
        return dx


class Dropout(Layer):
    """Inverted dropout; identity outside training or when ``rate == 0``."""

    def __init__(self, rate: float = 0.1, rng: np.random.Generator | None = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = np.random.default_rng(0) if rng is None else rng

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            self._identity = True
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        self._identity = False
        self._cache = mask
        return x * mask

    def backward(self, dout):
        if getattr(self, "_identity", False):
            return dout
        return dout * self._pop_cache()


class Dense(Layer):
    """Affine map on the last axis: ``x @ W + b``."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_features = in_features
        self.out_features = out_features
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.params["W"] = rng.uniform(-limit, limit, (in_features, out_features))
        self.params["b"] = np.zeros(out_features)

    def config(self):
        return {"in_features": self.in_features,
                "out_features": self.out_features}

    def forward(self, x, training=False):
        if x.shape[-1] != self.in_features:
            raise ValueError(
                f"Dense expects {self.in_features} features, got {x.shape[-1]}"
            )
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._pop_cache()
        x2 = x.reshape(-1, self.in_features)
        d2 = dout.reshape(-1, self.out_features)
        self.grads = {"W": x2.T @ d2, "b": d2.sum(axis=0)}
        return dout @ self.params["W"].T
