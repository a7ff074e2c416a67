"""Prompt construction, prompt embedding, prompt attention, and the
stacked prompt transformer blocks operating on the 1/8-scale latent.

Passing prompt=None runs the exact prompt-free arithmetic path; passing an
all-zero prompt reduces to it bitwise, which the iterative inference relies
on.
"""

import numpy as np

from . import tensor as T
from .layers import Linear, LayerNorm


def build_prompt(f_ddiff, f_enc):
    """Elementwise product of depth-difference features and encoder features."""
    if f_ddiff.shape != f_enc.shape:
        raise T.ShapeError(f"build_prompt: {f_ddiff.shape} vs {f_enc.shape}")
    return T.mul(f_ddiff, f_enc)


def prompt_embed(prompt, f_enc):
    """Linear addition; shape-preserving, so any latent size is accepted."""
    if prompt.shape != f_enc.shape:
        raise T.ShapeError(f"prompt_embed: {prompt.shape} vs {f_enc.shape}")
    return T.add(prompt, f_enc)


def tokens_from_map(x):
    n, h, w, c = x.shape
    return T.reshape(x, (n, h * w, c)), h, w


def map_from_tokens(t, h, w):
    n, _, c = t.shape
    return T.reshape(t, (n, h, w, c))


def _split_heads(x, heads):
    n, t, c = x.shape
    if c % heads:
        raise T.ShapeError(f"attention: channels {c} not divisible by {heads} heads")
    return T.transpose(T.reshape(x, (n, t, heads, c // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    n, h, t, d = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (n, t, h * d))


def prompt_attention(q, k, v, prompt, heads, out_proj=None):
    """Scaled dot-product attention with the query shifted by the prompt.

    q, k, v, prompt: token-major (N, T, C). The prompt is split across heads
    exactly like the query. prompt=None gives plain attention on the same
    arithmetic path.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise T.ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    qh = _split_heads(q, heads)
    if prompt is not None:
        if prompt.shape != q.shape:
            raise T.ShapeError(f"attention: prompt {prompt.shape} vs q {q.shape}")
        qh = T.add(qh, _split_heads(prompt, heads))
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    d_head = qh.shape[-1]
    logits = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(d_head))
    att = T.softmax(logits)
    out = _merge_heads(T.matmul(att, vh))
    if out_proj is not None:
        out = out_proj(out)
    return out


class PTBlock:
    """LN -> prompt attention -> residual -> LN -> MLP -> residual."""

    def __init__(self, rng, channels, heads, mlp_hidden=None, dtype=np.float32):
        self.heads = heads
        mlp_hidden = 4 * channels if mlp_hidden is None else mlp_hidden
        self.ln1 = LayerNorm(channels, dtype=dtype)
        self.wq = Linear(rng, channels, channels, dtype=dtype)
        # a key-projection bias is inert under softmax, so it carries none
        self.wk = Linear(rng, channels, channels, bias=False, dtype=dtype)
        self.wv = Linear(rng, channels, channels, dtype=dtype)
        self.wo = Linear(rng, channels, channels, dtype=dtype)
        self.ln2 = LayerNorm(channels, dtype=dtype)
        self.mlp1 = Linear(rng, channels, mlp_hidden, dtype=dtype)
        self.mlp2 = Linear(rng, mlp_hidden, channels, dtype=dtype)

    def __call__(self, x, prompt):
        h = self.ln1(x)
        att = prompt_attention(self.wq(h), self.wk(h), self.wv(h), prompt,
                               self.heads, out_proj=self.wo)
        x = T.add(x, att)
        m = self.mlp2(T.gelu(self.mlp1(self.ln2(x))))
        return T.add(x, m)

    def named_params(self, prefix):
        out = []
        for name in ("ln1", "wq", "wk", "wv", "wo", "ln2", "mlp1", "mlp2"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out


class PromptTransformer:
    """Stack of PTBlocks; the same prompt feeds every block."""

    def __init__(self, rng, channels, blocks=4, heads=4, mlp_hidden=None, dtype=np.float32):
        if blocks < 1:
            raise ValueError(f"PromptTransformer: need >= 1 block, got {blocks}")
        self.blocks = [PTBlock(rng, channels, heads, mlp_hidden, dtype=dtype) for _ in range(blocks)]

    def __call__(self, f_proembed, prompt):
        """f_proembed, prompt: latent maps (N,H,W,C); prompt may be None."""
        x, h, w = tokens_from_map(f_proembed)
        p = tokens_from_map(prompt)[0] if prompt is not None else None
        for blk in self.blocks:
            x = blk(x, p)
        return map_from_tokens(x, h, w)

    def named_params(self, prefix="ptb"):
        out = []
        for i, blk in enumerate(self.blocks):
            out += blk.named_params(f"{prefix}.{i}")
        return out
