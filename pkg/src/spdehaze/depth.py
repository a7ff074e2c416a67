"""Haze-sensitive monocular depth proxy and feature-level depth differences.

The estimator inverts a dark-channel transmission estimate into relative
depth. It is deterministic, needs no pretrained weights, and is fooled by
haze in exactly the way the prompt relies on: haze lifts the dark channel,
which reads as extra depth, while clear images are ranked by their albedo
floor. Feeding ground-truth depth here would make every depth difference
zero and kill the prompt signal.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter

from . import tensor as T
from .layers import Conv2d
from .optim import Adam


@dataclass
class DepthEstimatorConfig:
    omega: float = 0.95
    patch: int = 7
    t_floor: float = 0.05
    airlight_quantile: float = 0.001

    def validate(self):
        if not 0 < self.omega < 1:
            raise ValueError(f"omega must lie in (0,1), got {self.omega}")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError(f"patch must be odd and >= 3, got {self.patch}")
        if not 0 < self.t_floor < 1:
            raise ValueError(f"t_floor must lie in (0,1), got {self.t_floor}")
        return self


def from_run_config(cfg):
    return DepthEstimatorConfig(omega=cfg.omega, patch=cfg.dc_patch,
                                t_floor=cfg.t_floor, airlight_quantile=cfg.airlight_quantile)


def _dark_channel(img, patch):
    return minimum_filter(img.min(axis=-1), size=patch, mode="nearest")


def estimate_airlight(img, cfg):
    dark = _dark_channel(img, cfg.patch)
    n = dark.size
    k = max(1, int(round(cfg.airlight_quantile * n)))
    idx = np.argpartition(dark.reshape(-1), n - k)[n - k:]
    a = img.reshape(-1, 3)[idx].mean(axis=0)
    if np.all(a <= 0):
        raise ValueError("estimate_depth: airlight undefined on an all-zero image")
    return np.maximum(a, 1e-6)


def estimate_depth_raw(img, cfg=None):
    """Unnormalized depth: -log of the clamped dark-channel transmission."""
    cfg = (cfg or DepthEstimatorConfig()).validate()
    img = np.asarray(img, dtype=np.float64)
    a = estimate_airlight(img, cfg)
    dc = _dark_channel(img / a[None, None, :], cfg.patch)
    t_hat = np.clip(1.0 - cfg.omega * dc, cfg.t_floor, 1.0)
    return -np.log(t_hat)


def estimate_depth(img, cfg=None):
    """Relative depth in [0,1] (per-image min-max normalized, like the
    relative-depth output of a monocular estimator)."""
    d = estimate_depth_raw(img, cfg)
    lo, hi = d.min(), d.max()
    if hi - lo < 1e-12:
        return np.zeros_like(d, dtype=np.float32)
    return ((d - lo) / (hi - lo)).astype(np.float32)


def replicate3(d):
    return np.repeat(np.asarray(d, dtype=np.float32)[..., None], 3, axis=-1)


def plane_interior_means(values, depth_map, margin=3):
    """Mean of `values` over the interior of each constant-depth plane.

    Interior excludes a `margin`-wide rim per plane (the support radius of the
    patch-min filter, which smears estimates across plane boundaries).
    Returns (planes, means); planes whose interior vanishes fall back to the
    full region.
    """
    from scipy.ndimage import binary_erosion

    struct = np.ones((2 * margin + 1, 2 * margin + 1), dtype=bool)
    planes = np.unique(depth_map)
    means = []
    for p in planes:
        region = depth_map == p
        core = binary_erosion(region, structure=struct)
        means.append(float(values[core].mean() if core.any() else values[region].mean()))
    return planes, np.array(means)


def depth_feature_diff(img_a, img_b, frozen_encoder, cfg=None, estimator=None):
    """F_Ddiff = |Enc_pre(depth(img_a)) - Enc_pre(depth(img_b))| at latent scale.

    Depth maps are replicated across 3 channels to meet the RGB encoder.
    Returns a float32 array of shape (1, H/8, W/8, C).
    """
    if img_a.shape != img_b.shape:
        raise ValueError(f"depth_feature_diff: size mismatch {img_a.shape} vs {img_b.shape}")
    est = estimator if estimator is not None else estimate_depth
    da = est(img_a, cfg)
    db = est(img_b, cfg)
    batch = np.stack([replicate3(da), replicate3(db)])
    feats = frozen_encoder(T.Tensor(batch)).data
    return np.abs(feats[0:1] - feats[1:2])


class DepthHead:
    """Tiny learned depth net (3 convs), the alternative estimator behind the
    `depth_estimator=learned` switch."""

    def __init__(self, rng, width=8, dtype=np.float32):
        self.c1 = Conv2d(rng, 3, width, dtype=dtype)
        self.c2 = Conv2d(rng, width, width, dtype=dtype)
        self.c3 = Conv2d(rng, width, 1, dtype=dtype)

    def forward(self, x):
        h = T.relu(self.c1(x))
        h = T.relu(self.c2(h))
        return T.sigmoid(self.c3(h))

    def estimate(self, img, cfg=None):
        out = self.forward(T.Tensor(img[None].astype(np.float32)))
        return out.data[0, :, :, 0]

    def named_params(self, prefix="depthhead"):
        return (self.c1.named_params(f"{prefix}.c1")
                + self.c2.named_params(f"{prefix}.c2")
                + self.c3.named_params(f"{prefix}.c3"))


def train_depth_head(head, clear_images, gt_depths, steps=300, batch=8, lr=1e-3, seed=0):
    """Fit the learned head on clear scenes with ground-truth depth (MSE)."""
    params = [p for _, p in head.named_params()]
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    n = len(clear_images)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        x = T.Tensor(np.stack([clear_images[i] for i in idx]))
        y = T.Tensor(np.stack([gt_depths[i] for i in idx])[..., None])
        with T.Tape() as tape:
            loss = T.mse(head.forward(x), y)
        opt.zero_grad()
        T.backward(tape, loss)
        opt.step()
        losses.append(loss.item())
    return losses
