"""Parameterized layers on top of the tape engine."""

import numpy as np

from . import tensor as T
from .conv import conv2d, upsample_nearest2


class Conv2d:
    def __init__(self, rng, cin, cout, k=3, stride=1, pad=None, bias=True,
                 w_std=None, dtype=np.float32):
        std = np.sqrt(2.0 / (k * k * cin)) if w_std is None else w_std
        if std == 0.0:
            w = np.zeros((k, k, cin, cout))
        else:
            w = rng.normal(0.0, std, (k, k, cin, cout))
        self.w = T.Tensor(w, requires_grad=True, dtype=dtype)
        self.b = T.Tensor(np.zeros(cout), requires_grad=True, dtype=dtype) if bias else None
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def named_params(self, prefix):
        out = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class Linear:
    def __init__(self, rng, cin, cout, bias=True, dtype=np.float32):
        std = np.sqrt(1.0 / cin)
        self.w = T.Tensor(rng.normal(0.0, std, (cin, cout)), requires_grad=True, dtype=dtype)
        self.b = T.Tensor(np.zeros(cout), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y

    def named_params(self, prefix):
        out = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class LayerNorm:
    def __init__(self, dim, dtype=np.float32):
        self.scale = T.Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
        self.shift = T.Tensor(np.zeros(dim), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        return T.add(T.mul(T.layer_norm(x), self.scale), self.shift)

    def named_params(self, prefix):
        return [(f"{prefix}.scale", self.scale), (f"{prefix}.shift", self.shift)]


class ResBlock:
    """Pre-activation residual block: x + conv(relu(conv(relu(x))))."""

    def __init__(self, rng, c, dtype=np.float32):
        self.conv1 = Conv2d(rng, c, c, dtype=dtype)
        self.conv2 = Conv2d(rng, c, c, dtype=dtype)

    def __call__(self, x):
        h = self.conv1(T.relu(x))
        h = self.conv2(T.relu(h))
        return T.add(x, h)

    def named_params(self, prefix):
        return self.conv1.named_params(f"{prefix}.conv1") + self.conv2.named_params(f"{prefix}.conv2")


class UpConv:
    """Nearest upsampling followed by a 3x3 conv (avoids checkerboard artifacts)."""

    def __init__(self, rng, cin, cout, dtype=np.float32):
        self.conv = Conv2d(rng, cin, cout, dtype=dtype)

    def __call__(self, x):
        return self.conv(upsample_nearest2(x))

    def named_params(self, prefix):
        return self.conv.named_params(f"{prefix}.conv")


def collect_params(named):
    """Flat parameter list in name order (the optimizer's canonical order)."""
    return [p for _, p in named]


def set_trainable(named, flag):
    for _, p in named:
        p.requires_grad = flag
