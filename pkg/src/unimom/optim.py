"""Adam with bias correction, global-norm clipping, and a finite-difference
gradient checker for validating taped gradients against a numeric oracle."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tape, Tensor

__all__ = ["Adam", "clip_global_norm", "finite_diff_check"]


class Adam:
    """Per-parameter first/second moment accumulators keyed by name.

    Moments are lazily created with the shape of the parameter they track;
    the step counter increases by one per :meth:`step` call.  Updates are
    deterministic functions of (parameters, gradients, state).
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        """Apply one bias-corrected update in place."""
        for name, g in grads.items():
            if np.isnan(g).any():
                raise ValueError(f"NaN gradient for parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm; clipping happens in a fresh dict so callers
    keep the raw gradients if they passed them in.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Max relative error between taped and central-difference gradients.

    ``f`` must take no arguments, read the parameters' current values and
    return the scalar loss as a Tensor.  Every element of every parameter is
    perturbed by ``+-h``; the relative error for one element is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise ValueError("objective returned a non-finite value")
    analytic = tape.backward(loss, wrt=params)

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.ravel()
        g_flat = np.asarray(g).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError("objective returned a non-finite value")
            numeric = (up - down) / (2.0 * h)
            rel = abs(g_flat[i] - numeric) / max(1.0, abs(numeric))
            if rel > worst:
                worst = rel
    return worst
