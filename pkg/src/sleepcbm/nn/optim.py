"""Mean absolute error loss and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def mae_loss(pred, target):
    """Mean absolute error and its (sub)gradient with respect to ``pred``.

    The subgradient at an exact tie is 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


@dataclass
class LayerState:
    """Parameters of one layer together with their Adam moments."""

    parameters: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        for name, p in self.parameters.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))
            if self.m[name].shape != p.shape or self.v[name].shape != p.shape:
                raise ValueError(f"moment shape mismatch for '{name}'")


def adam_step(state: LayerState, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> LayerState:
    """Return the state after one bias-corrected Adam update.

    The input state is left untouched.
    """
    if set(grads) != set(state.parameters):
        raise ValueError("gradient keys do not match parameters")
    step = state.step_count + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    params, m_new, v_new = {}, {}, {}
    for name, p in state.parameters.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, "
                             f"expected {p.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[name] = m
        v_new[name] = v
    return LayerState(params, m_new, v_new, step)


class Adam:
    """Applies :func:`adam_step` to a list of layers, one state per layer."""

    def __init__(self, layers, lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.layers = [layer for layer in layers if layer.params]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.states = [LayerState(dict(layer.params)) for layer in self.layers]

    def step(self):
        for i, layer in enumerate(self.layers):
            state = self.states[i]
            state.parameters = dict(layer.params)
            new = adam_step(state, layer.grads, self.lr, self.beta1,
                            self.beta2, self.eps)
            for name, value in new.parameters.items():
                value = value.astype(layer.params[name].dtype, copy=False)
                if hasattr(layer, "set_param"):
                    layer.set_param(name, value)
                else:
                    layer.params[name] = value
            self.states[i] = new
