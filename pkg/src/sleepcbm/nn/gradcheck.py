"""Central finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def rel_error(analytic, numeric, floor: float = 1e-7) -> float:
    """Largest elementwise ``|a - n| / max(|a| + |n|, floor)``."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom))


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x``, in place."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(layer, input_shape, tolerance: float = 1e-4, h: float = 1e-5,
               training: bool = False, seed: int = 0) -> GradCheckReport:
    """Compare ``layer.backward`` with finite differences on a random input.

    The scalar objective is ``sum(forward(x) * R)`` for a fixed random ``R``,
    which exercises every output coordinate. The layer is cast to float64.
    """
    rng = np.random.default_rng(seed)
    layer.astype(np.float64)
    x = rng.standard_normal(input_shape)
    out = layer.forward(x, training=training)
    R = rng.standard_normal(out.shape)

    def objective():
        return float(np.sum(layer.forward(x, training=training) * R))

    layer.forward(x, training=training)
    dx = layer.backward(R)
    analytic = {"input": dx}
    analytic.update({k: v.copy() for k, v in layer.grads.items()})

    errors = {"input": rel_error(dx, numerical_gradient(objective, x, h))}
    for name in layer.params:
        num = numerical_gradient(objective, layer.params[name], h)
        errors[name] = rel_error(analytic[name], num)
    return GradCheckReport(max(errors.values()), tolerance, errors)
