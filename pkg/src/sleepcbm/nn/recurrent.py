"""LSTM and bidirectional LSTM with full backpropagation through time."""

from __future__ import annotations

import numpy as np

from .layers import Layer, _check_3d


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LSTM(Layer):
    """Single-direction LSTM returning the full hidden sequence.

    Gate layout along the last axis of ``Wx``/``Wh``/``b`` is
    ``[input, forget, cell candidate, output]``. Initial hidden and cell
    states are zero.
    """

    def __init__(self, input_size: int, hidden: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.hidden = hidden
        k = 1.0 / np.sqrt(hidden)
        self.params["Wx"] = rng.uniform(-k, k, (input_size, 4 * hidden))
        self.params["Wh"] = rng.uniform(-k, k, (hidden, 4 * hidden))
        b = rng.uniform(-k, k, 4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params["b"] = b

    def config(self):
        return {"input_size": self.input_size, "hidden": self.hidden}

    def forward(self, x, training=False):
        _check_3d(x, self.input_size, "LSTM")
        Wx, Wh, b = self.params["Wx"], self.params["Wh"], self.params["b"]
        n, t_len, _ = x.shape
        H = self.hidden
        dtype = np.result_type(x, Wx)
        xw = (x.reshape(n * t_len, -1) @ Wx).reshape(n, t_len, 4 * H) + b
        hs = np.zeros((n, t_len + 1, H), dtype=dtype)
        cs = np.zeros((n, t_len + 1, H), dtype=dtype)
        gates = np.empty((n, t_len, 4 * H), dtype=dtype)
        for t in range(t_len):
            z = xw[:, t] + hs[:, t] @ Wh
            g = np.empty_like(z)
            g[:, :2 * H] = _sigmoid(z[:, :2 * H])
            g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
            gates[:, t] = g
            cs[:, t + 1] = g[:, H:2 * H] * cs[:, t] + g[:, :H] * g[:, 2 * H:3 * H]
            hs[:, t + 1] = g[:, 3 * H:] * np.tanh(cs[:, t + 1])
        self._cache = (x, hs, cs, gates)
        return hs[:, 1:].copy()

    def backward(self, dout):
        x, hs, cs, gates = self._pop_cache()
        Wx, Wh = self.params["Wx"], self.params["Wh"]
        n, t_len, _ = x.shape
        H = self.hidden
        dz_all = np.empty_like(gates)
        dh_next = np.zeros((n, H), dtype=dout.dtype)
        dc_next = np.zeros((n, H), dtype=dout.dtype)
        WhT = Wh.T
        for t in range(t_len - 1, -1, -1):
            g = gates[:, t]
            i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = dout[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ WhT
            dc_next = dc * f
        dz_flat = dz_all.reshape(n * t_len, 4 * H)
        self.grads = {
            "Wx": x.reshape(n * t_len, -1).T @ dz_flat,
            "Wh": hs[:, :-1].reshape(n * t_len, H).T @ dz_flat,
            "b": dz_flat.sum(axis=0),
        }
        return (dz_flat @ Wx.T).reshape(x.shape)


class BiLSTM(Layer):
    """Forward and time-reversed LSTMs with outputs concatenated per step.

    Output at step ``t`` is ``[h_fw[t], h_bw[t]]`` where ``h_bw`` runs from
    the end of the sequence towards the start.
    """

    def __init__(self, input_size: int, hidden: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.hidden = hidden
        self.fw = LSTM(input_size, hidden, rng)
        self.bw = LSTM(input_size, hidden, rng)
        self._sync_params()

    def _sync_params(self):
        self.params = {f"fw_{k}": v for k, v in self.fw.params.items()}
        self.params.update({f"bw_{k}": v for k, v in self.bw.params.items()})

    def set_param(self, name: str, value: np.ndarray):
        direction, key = name.split("_", 1)
        getattr(self, direction).params[key] = value
        self.params[name] = value

    def astype(self, dtype):
        self.fw.astype(dtype)
        self.bw.astype(dtype)
        self._sync_params()
        return self

    def config(self):
        return {"input_size": self.input_size, "hidden": self.hidden}

    def forward(self, x, training=False):
        # params may have been replaced wholesale (optimizer, loader)
        for name, value in self.params.items():
            direction, key = name.split("_", 1)
            getattr(self, direction).params[key] = value
        h_fw = self.fw.forward(x, training)
        h_bw = self.bw.forward(x[:, ::-1], training)[:, ::-1]
        self._cache = True
        return np.concatenate([h_fw, h_bw], axis=2)

    def backward(self, dout):
        self._pop_cache()
        H = self.hidden
        dx = self.fw.backward(dout[:, :, :H])
        dx += self.bw.backward(dout[:, ::-1, H:])[:, ::-1]
        self.grads = {f"fw_{k}": v for k, v in self.fw.grads.items()}
        self.grads.update({f"bw_{k}": v for k, v in self.bw.grads.items()})
        return dx


def bilstm_forward(x: np.ndarray, params_fw: dict, params_bw: dict) -> np.ndarray:
    """Functional bidirectional LSTM on a single ``(T, d)`` sequence or a batch."""
    single = x.ndim == 2
    xb = x[None] if single else x
    hidden = params_fw["Wh"].shape[0]
    layer = BiLSTM(xb.shape[2], hidden)
    for key, value in params_fw.items():
        layer.set_param(f"fw_{key}", np.asarray(value))
    for key, value in params_bw.items():
        layer.set_param(f"bw_{key}", np.asarray(value))
    for key in ("Wx", "Wh", "b"):
        if layer.fw.params[key].shape != layer.bw.params[key].shape:
            raise ValueError(f"forward/backward parameter '{key}' shapes differ")
    if layer.fw.params["Wx"].shape[0] != xb.shape[2]:
        raise ValueError("input width does not match Wx")
    out = layer.forward(xb)
    return out[0] if single else out
