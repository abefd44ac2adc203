"""Additive temporal attention that pools a sequence into one context vector.

For an input ``x`` of shape ``(T, d)``::

    F = tanh(x @ W + b)          # (T, u)
    e = (F @ W_c)[:, 0]          # (T,)
    alpha = softmax(e)           # over time
    context = sum_t alpha[t] * x[t]

``b`` has one row per time step, so a layer instance is tied to a fixed
sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer, MissingCacheError


def softmax(e: np.ndarray, axis: int = -1) -> np.ndarray:
    z = e - e.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


@dataclass
class AttentionParams:
    W: np.ndarray   # (d, u)
    W_c: np.ndarray  # (u, 1)
    b: np.ndarray   # (T, u)

    def check(self, x: np.ndarray):
        T, d = x.shape[-2:]
        u = self.W.shape[1]
        if self.W.shape != (d, u):
            raise ValueError(f"W must be ({d}, u), got {self.W.shape}")
        if self.W_c.shape != (u, 1):
            raise ValueError(f"W_c must be ({u}, 1), got {self.W_c.shape}")
        if self.b.shape != (T, u):
            raise ValueError(f"b must be ({T}, {u}), got {self.b.shape}")


class DeepAttention(Layer):
    """Batched attention pooling: ``(N, T, d) -> (N, d)``.

    ``self.alpha`` keeps the attention weights of the last forward call.
    """

    def __init__(self, seq_len: int, in_features: int, units: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.seq_len = seq_len
        self.in_features = in_features
        self.units = units
        lim_w = np.sqrt(6.0 / (in_features + units))
        lim_c = np.sqrt(6.0 / (units + 1))
        self.params["W"] = rng.uniform(-lim_w, lim_w, (in_features, units))
        self.params["W_c"] = rng.uniform(-lim_c, lim_c, (units, 1))
        self.params["b"] = np.zeros((seq_len, units))
        self.alpha = None

    def config(self):
        return {"seq_len": self.seq_len, "in_features": self.in_features,
                "units": self.units}

    def forward(self, x, training=False):
        AttentionParams(self.params["W"], self.params["W_c"],
                        self.params["b"]).check(x)
        F = np.tanh(x @ self.params["W"] + self.params["b"])
        e = (F @ self.params["W_c"])[..., 0]
        alpha = softmax(e, axis=-1)
        context = np.einsum("nt,ntd->nd", alpha, x)
        self.alpha = alpha
        self._cache = (x, F, alpha)
        return context

    def backward(self, dout):
        x, F, alpha = self._pop_cache()
        W, W_c = self.params["W"], self.params["W_c"]
        dx = alpha[:, :, None] * dout[:, None, :]
        dalpha = np.einsum("ntd,nd->nt", x, dout)
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        dW_c = np.einsum("ntu,nt->u", F, de)[:, None]
        dpre = de[:, :, None] * W_c[:, 0] * (1.0 - F * F)
        n, t, d = x.shape
        self.grads = {
            "W": x.reshape(n * t, d).T @ dpre.reshape(n * t, -1),
            "W_c": dW_c,
            "b": dpre.sum(axis=0),
        }
        dx += dpre @ W.T
        return dx


def attention_forward(x: np.ndarray, params: AttentionParams):
    """Attention pooling of a single ``(T, d)`` sequence.

    Returns
    -------
    context : ndarray of shape (d,)
    alpha : ndarray of shape (T,)
    cache : tuple
        Pass to :func:`attention_backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("attention_forward expects a (T, d) array")
    params.check(x)
    F = np.tanh(x @ params.W + params.b)
    e = (F @ params.W_c)[:, 0]
    alpha = softmax(e)
    context = (alpha[:, None] * x).sum(axis=0)
    return context, alpha, (x, F, alpha, params)


def attention_backward(cache, upstream_grad: np.ndarray) -> dict:
    """Gradients of ``upstream_grad . context`` for x, W, W_c and b."""
    if cache is None:
        raise MissingCacheError("attention_backward needs the forward cache")
    x, F, alpha, params = cache
    g = np.asarray(upstream_grad, dtype=float)
    dalpha = x @ g
    de = alpha * (dalpha - alpha @ dalpha)
    dpre = np.outer(de, params.W_c[:, 0]) * (1.0 - F * F)
    return {
        "x": np.outer(alpha, g) + dpre @ params.W.T,
        "W": x.T @ dpre,
        "W_c": (F.T @ de)[:, None],
        "b": dpre,
    }
