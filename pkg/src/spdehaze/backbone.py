"""VQ autoencoder: encoder with skips, codebook lookup, mirror decoder.

The latent sits at 1/8 spatial resolution. The pretrained encoder/decoder/
codebook are trained on clear images only, then frozen; the dehazing stage
adds a trainable twin of the encoder, warm-started from the frozen one.
"""

import numpy as np

from . import tensor as T
from .layers import Conv2d, ResBlock, UpConv
from .optim import Adam


DEFAULT_CHANNELS = (16, 32, 48, 64)
DEFAULT_CODEBOOK = 256


class Encoder:
    """4 conv stages (three stride-2) with residual blocks; latent H/8 x W/8."""

    def __init__(self, rng, channels=DEFAULT_CHANNELS, in_ch=3, dtype=np.float32):
        c0, c1, c2, c3 = channels
        self.channels = tuple(channels)
        self.stem = Conv2d(rng, in_ch, c0, dtype=dtype)
        self.res0 = ResBlock(rng, c0, dtype=dtype)
        self.down1 = Conv2d(rng, c0, c1, stride=2, dtype=dtype)
        self.res1 = ResBlock(rng, c1, dtype=dtype)
        self.down2 = Conv2d(rng, c1, c2, stride=2, dtype=dtype)
        self.res2 = ResBlock(rng, c2, dtype=dtype)
        self.down3 = Conv2d(rng, c2, c3, stride=2, dtype=dtype)
        self.res3 = ResBlock(rng, c3, dtype=dtype)

    def __call__(self, x, with_features=False):
        if x.ndim != 4 or x.shape[1] % 8 or x.shape[2] % 8:
            raise T.ShapeError(f"encoder: spatial dims must be multiples of 8, got {x.shape}")
        f1 = self.res0(self.stem(x))
        f2 = self.res1(T.relu(self.down1(f1)))
        f4 = self.res2(T.relu(self.down2(f2)))
        f8 = self.res3(T.relu(self.down3(f4)))
        if with_features:
            return f8, [f1, f2, f4]
        return f8

    def named_params(self, prefix):
        out = []
        for name in ("stem", "res0", "down1", "res1", "down2", "res2", "down3", "res3"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out


class Decoder:
    """Mirror of the encoder; output mapped into [0,1] by a rescaled tanh."""

    def __init__(self, rng, channels=DEFAULT_CHANNELS, out_ch=3, dtype=np.float32):
        c0, c1, c2, c3 = channels
        self.res8 = ResBlock(rng, c3, dtype=dtype)
        self.up4 = UpConv(rng, c3, c2, dtype=dtype)
        self.res4 = ResBlock(rng, c2, dtype=dtype)
        self.up2 = UpConv(rng, c2, c1, dtype=dtype)
        self.res2 = ResBlock(rng, c1, dtype=dtype)
        self.up1 = UpConv(rng, c1, c0, dtype=dtype)
        self.res1 = ResBlock(rng, c0, dtype=dtype)
        self.head = Conv2d(rng, c0, out_ch, dtype=dtype)

    def __call__(self, z, residuals=None):
        """residuals: optional {8: t, 4: t, 2: t, 1: t} added to the decoder
        feature at each scale (the multi-scale fusion injection points)."""
        r = residuals or {}

        def inject(f, s):
            return T.add(f, r[s]) if s in r else f

        f = inject(self.res8(z), 8)
        f = inject(self.res4(T.relu(self.up4(f))), 4)
        f = inject(self.res2(T.relu(self.up2(f))), 2)
        f = inject(self.res1(T.relu(self.up1(f))), 1)
        x = self.head(f)
        return T.scale(T.add(T.tanh(x), T.Tensor(np.ones(1), dtype=x.dtype)), 0.5)

    def named_params(self, prefix):
        out = []
        for name in ("res8", "up4", "res4", "up2", "res2", "up1", "res1", "head"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out


def init_codebook(rng, k=DEFAULT_CODEBOOK, c=DEFAULT_CHANNELS[-1], dtype=np.float32):
    if k < 2:
        raise ValueError(f"codebook: need K >= 2, got {k}")
    return T.Tensor(rng.normal(0.0, 1.0, (k, c)) / np.sqrt(c), requires_grad=True, dtype=dtype)


def nearest_indices(f, codebook):
    """Nearest codebook row per latent vector under squared L2; ties break low.

    Uses |f|^2 - 2 f.e + |e|^2 (one GEMM); argmin keeps the lowest index on
    exact ties."""
    if codebook.size == 0:
        raise ValueError("lookup: empty codebook")
    flat = f.reshape(-1, f.shape[-1])
    d = (flat * flat).sum(axis=1, keepdims=True) - 2.0 * (flat @ codebook.T) \
        + (codebook * codebook).sum(axis=1)[None, :]
    return d.argmin(axis=1)


def lookup(f, codebook):
    """Snap features to nearest codebook entries.

    Returns (f_st, z_q, indices): f_st carries the straight-through gradient
    (identity into f), z_q is the gathered entries with gradient into the
    codebook, indices has the spatial shape of f.
    """
    idx = nearest_indices(f.data, codebook.data)
    z_q = T.gather_rows(codebook, idx).reshape(f.shape)
    jump = T.Tensor(z_q.data - f.data)          # constant: the quantization step
    f_st = T.add(f, jump)
    return f_st, z_q, idx.reshape(f.shape[:-1])


class Backbone:
    """Frozen pretrained encoder/decoder/codebook plus the trainable encoder."""

    def __init__(self, rng, channels=DEFAULT_CHANNELS, codebook_size=DEFAULT_CODEBOOK, dtype=np.float32):
        self.channels = tuple(channels)
        self.codebook_size = codebook_size
        self.enc_pre = Encoder(rng, channels, dtype=dtype)
        self.dec_pre = Decoder(rng, channels, dtype=dtype)
        self.codebook = init_codebook(rng, codebook_size, channels[-1], dtype=dtype)
        self.enc = Encoder(rng, channels, dtype=dtype)

    def warm_start_trainable(self):
        """Copy frozen encoder weights into the trainable encoder."""
        src = dict(self.enc_pre.named_params("e"))
        for name, p in self.enc.named_params("e"):
            p.data = src[name].data.copy()

    def freeze_pretrained(self):
        for _, p in self.pretrained_named_params():
            p.requires_grad = False

    def pretrained_named_params(self):
        return (self.enc_pre.named_params("enc_pre")
                + self.dec_pre.named_params("dec_pre")
                + [("codebook", self.codebook)])

    def named_params(self):
        return self.pretrained_named_params() + self.enc.named_params("enc")


def pretrain_vq(backbone, images, steps, batch=8, lr=1e-3, seed=0,
                commitment=0.25, log_every=100, log=None):
    """Train encoder/decoder/codebook on clear images, then freeze them.

    Reconstruction L1 plus the two-sided codebook loss with stop-gradients
    (commitment weight on the encoder side) and a straight-through estimator
    through the lookup. Returns the per-step total-loss history.
    """
    params = [p for _, p in backbone.pretrained_named_params()]
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    n = len(images)
    history = []
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        x = T.Tensor(np.stack([images[i] for i in idx]))
        with T.Tape() as tape:
            z_e = backbone.enc_pre(x)
            f_st, z_q, _ = lookup(z_e, backbone.codebook)
            recon = backbone.dec_pre(f_st)
            loss_rec = T.l1(recon, x)
            loss_embed = T.mse(z_q, z_e.detach())
            loss_commit = T.mse(z_e, z_q.detach())
            loss = T.add(loss_rec, T.add(loss_embed, T.scale(loss_commit, commitment)))
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"pretrain_vq: non-finite loss at step {step}")
        opt.zero_grad()
        T.backward(tape, loss)
        opt.step()
        history.append(loss.item())
        if log is not None and (step % log_every == 0 or step == steps - 1):
            log(f"vq step {step} loss {loss.item():.4f} rec {loss_rec.item():.4f}")
    backbone.freeze_pretrained()
    backbone.warm_start_trainable()
    return history
