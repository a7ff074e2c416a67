"""Bias-corrected ADAM."""

import numpy as np

from .tensor import ShapeError


class AdamState:
    """Optimizer state: moments are allocated lazily to match parameter shapes."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = None
        self.v = None


def adam_step(params, grads, state):
    """One ADAM update over a fixed-order parameter list; mutates params in place."""
    if state.m is None:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: parameter/gradient count mismatch")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        upd = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - upd).astype(p.dtype)
    return params, state


class Adam:
    """Convenience wrapper reading .grad off a fixed parameter list."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
