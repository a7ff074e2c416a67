"""Mutual deformable fusion: two deformable convs with mutually-predicted
offsets, fused by a 1x1 conv, applied per decoder scale."""

import numpy as np

from . import tensor as T
from .layers import Conv2d
from .sampling import deform_conv


class DeformLayer:
    def __init__(self, rng, cin, cout, dtype=np.float32):
        std = np.sqrt(2.0 / (9 * cin))
        self.w = T.Tensor(rng.normal(0.0, std, (3, 3, cin, cout)), requires_grad=True, dtype=dtype)
        self.b = T.Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)

    def __call__(self, x, offsets):
        return deform_conv(x, offsets, self.w, self.b)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


def compute_offsets(fa, fb, conv):
    """Per-tap offsets from a 1x1 conv over the channel concat of (fa, fb)."""
    if fa.shape[:3] != fb.shape[:3]:
        raise T.ShapeError(f"compute_offsets: spatial mismatch {fa.shape} vs {fb.shape}")
    return conv(T.concat([fa, fb], axis=-1))


class Mdfm:
    """offsets from both concat orders, one deformable conv per branch, 1x1 fuse.

    Offset convs are zero-initialized so training starts in the standard-conv
    regime.
    """

    def __init__(self, rng, channels, out_channels=None, dtype=np.float32):
        out_channels = channels if out_channels is None else out_channels
        self.off1 = Conv2d(rng, 2 * channels, 18, k=1, pad=0, w_std=0.0, dtype=dtype)
        self.off2 = Conv2d(rng, 2 * channels, 18, k=1, pad=0, w_std=0.0, dtype=dtype)
        self.dmc1 = DeformLayer(rng, channels, channels, dtype=dtype)
        self.dmc2 = DeformLayer(rng, channels, channels, dtype=dtype)
        self.fuse = Conv2d(rng, 2 * channels, out_channels, k=1, pad=0, dtype=dtype)

    def __call__(self, f_enc_s, f_ptb_su):
        if f_enc_s.shape != f_ptb_su.shape:
            raise T.ShapeError(f"mdfm: scale mismatch {f_enc_s.shape} vs {f_ptb_su.shape}")
        off1 = compute_offsets(f_enc_s, f_ptb_su, self.off1)
        off2 = compute_offsets(f_ptb_su, f_enc_s, self.off2)
        y1 = self.dmc1(f_enc_s, off1)
        y2 = self.dmc2(f_ptb_su, off2)
        return self.fuse(T.concat([y1, y2], axis=-1))

    def named_params(self, prefix):
        out = []
        for name in ("off1", "off2", "dmc1", "dmc2", "fuse"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out
