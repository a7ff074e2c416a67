"""Finite-difference gradient checking (float64, central differences)."""

import numpy as np

from . import tensor as T
from . import conv as C
from . import sampling as S


def gradcheck(fn, inputs, h=1e-5):
    """Max relative error between tape gradients and central differences.

    fn maps the input list to a scalar Tensor and must be deterministic;
    every input is treated as a differentiable leaf. Error is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8), maximized over all
    elements of all inputs.
    """
    for x in inputs:
        assert x.dtype == np.float64, "gradcheck runs in double precision"
        x.requires_grad = True
        x.grad = None
    with T.Tape() as tape:
        loss = fn(inputs)
    T.backward(tape, loss)
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    worst = 0.0
    for x, an in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(inputs).item()
            flat[i] = orig - h
            fm = fn(inputs).item()
            flat[i] = orig
            cd = (fp - fm) / (2.0 * h)
            err = abs(an_flat[i] - cd) / max(abs(an_flat[i]), abs(cd), 1e-8)
            worst = max(worst, err)
    return worst


def _away_from(x, points, margin=1e-3):
    for p in points:
        x = np.where(np.abs(x - p) < margin, x + 2 * margin, x)
    return x


def _rand(rng, shape, kinks=()):
    x = rng.uniform(-1.0, 1.0, size=shape)
    if kinks:
        x = _away_from(x, kinks)
    return T.Tensor(x, dtype=np.float64)


def _projector(key):
    # fixed pseudo-random projection so the scalar loss sees every output entry;
    # regenerated from `key` on each call, hence stable across repeated evals
    def proj(out):
        r = np.random.default_rng(key).uniform(-1.0, 1.0, size=out.shape)
        return T.tmean(T.mul(out, T.Tensor(r, dtype=np.float64)))

    return proj


def _primitive_cases(rng, key):
    a = lambda shape, kinks=(): _rand(rng, shape, kinks)
    p = _projector(key)

    def pos(shape, lo=0.5, hi=1.5):
        return T.Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)

    bce_target = T.Tensor((rng.uniform(size=(3, 4)) > 0.5).astype(np.float64), dtype=np.float64)

    cases = {}
    cases["add"] = (lambda i: p(T.add(i[0], i[1])), [a((3, 4)), a((3, 4))])
    cases["sub"] = (lambda i: p(T.sub(i[0], i[1])), [a((3, 4)), a((1, 4))])
    cases["mul"] = (lambda i: p(T.mul(i[0], i[1])), [a((2, 3, 4)), a((2, 3, 4))])
    cases["div"] = (lambda i: p(T.div(i[0], i[1])), [a((3, 4)), pos((3, 4))])
    cases["scalar_mul"] = (lambda i: p(T.scale(i[0], 1.7)), [a((3, 4))])
    cases["matmul"] = (lambda i: p(T.matmul(i[0], i[1])), [a((4, 5)), a((5, 3))])
    cases["matmul_batched"] = (lambda i: p(T.matmul(i[0], i[1])), [a((2, 3, 4)), a((2, 4, 3))])
    cases["conv2d"] = (lambda i: p(C.conv2d(i[0], i[1], i[2], stride=1, pad=1)),
                       [a((2, 5, 5, 3)), a((3, 3, 3, 4)), a((4,))])
    cases["conv2d_stride2"] = (lambda i: p(C.conv2d(i[0], i[1], i[2], stride=2, pad=1)),
                               [a((2, 6, 6, 3)), a((3, 3, 3, 4)), a((4,))])
    cases["conv2d_replicate"] = (lambda i: p(C.conv2d(i[0], i[1], None, stride=1, pad=1, pad_mode="replicate")),
                                 [a((2, 5, 5, 2)), a((3, 3, 2, 3))])
    cases["conv1x1"] = (lambda i: p(C.conv2d(i[0], i[1], i[2], stride=1, pad=0)),
                        [a((2, 4, 4, 3)), a((1, 1, 3, 5)), a((5,))])
    cases["upsample_nearest"] = (lambda i: p(C.upsample_nearest2(i[0])), [a((2, 3, 3, 4))])
    cases["downsample_avg"] = (lambda i: p(C.avgpool2(i[0])), [a((2, 4, 4, 3))])
    cases["concat_channels"] = (lambda i: p(T.concat([i[0], i[1]], axis=-1)),
                                [a((2, 3, 4)), a((2, 3, 2))])
    cases["narrow"] = (lambda i: p(T.narrow(i[0], 2, 1, 2)), [a((2, 3, 5))])
    cases["reshape"] = (lambda i: p(T.reshape(i[0], (6, 4))), [a((2, 3, 4))])
    cases["transpose"] = (lambda i: p(T.transpose(i[0], (2, 0, 1))), [a((2, 3, 4))])
    cases["gather_rows"] = (lambda i: p(T.gather_rows(i[0], np.array([0, 2, 2, 1]))), [a((4, 3))])
    cases["relu"] = (lambda i: p(T.relu(i[0])), [a((3, 4), kinks=(0.0,))])
    cases["gelu"] = (lambda i: p(T.gelu(i[0])), [a((3, 4))])
    cases["tanh"] = (lambda i: p(T.tanh(i[0])), [a((3, 4))])
    cases["sigmoid"] = (lambda i: p(T.sigmoid(i[0])), [a((3, 4))])
    cases["exp"] = (lambda i: p(T.exp(i[0])), [a((3, 4))])
    cases["log"] = (lambda i: p(T.log(i[0])), [pos((3, 4))])
    cases["abs"] = (lambda i: p(T.absval(i[0])), [a((3, 4), kinks=(0.0,))])
    cases["clamp"] = (lambda i: p(T.clamp(i[0], -0.5, 0.5)), [a((3, 4), kinks=(-0.5, 0.5))])
    cases["softmax"] = (lambda i: p(T.softmax(i[0])), [a((3, 5))])
    cases["layer_norm"] = (lambda i: p(T.layer_norm(i[0])), [a((3, 6))])
    cases["mean"] = (lambda i: T.tmean(i[0]), [a((3, 4))])
    cases["sum"] = (lambda i: T.scale(T.tsum(i[0]), 0.1), [a((3, 4))])
    cases["l1"] = (lambda i: T.l1(i[0], i[1]), [a((3, 4)), a((3, 4))])
    cases["mse"] = (lambda i: T.mse(i[0], i[1]), [a((3, 4)), a((3, 4))])
    cases["bce_logits"] = (lambda i: T.tmean(T.bce_logits(i[0], bce_target)), [a((3, 4))])

    coords = rng.uniform(0.3, 3.4, size=(2, 3, 3, 2))
    coords = np.where(np.abs(coords - np.round(coords)) < 1e-2, coords + 0.05, coords)
    cases["bilinear_sample"] = (lambda i: p(S.bilinear_sample(i[0], i[1])),
                                [a((2, 5, 5, 3)), T.Tensor(coords, dtype=np.float64)])

    off = rng.uniform(-0.8, 0.8, size=(1, 4, 4, 18))
    off = np.where(np.abs(off - np.round(off)) < 1e-2, off + 0.05, off)
    cases["deform_conv"] = (lambda i: p(S.deform_conv(i[0], i[1], i[2], i[3])),
                            [a((1, 4, 4, 2)), T.Tensor(off, dtype=np.float64), a((3, 3, 2, 2)), a((2,))])

    cases["ln_softmax_mean"] = (lambda i: p(T.softmax(T.layer_norm(i[0]))), [a((3, 6))])
    return cases


def _composite_cases(rng):
    from .prompt import PTBlock
    from .fusion import Mdfm

    cases = {}

    blk = PTBlock(rng, channels=8, heads=2, mlp_hidden=8, dtype=np.float64)
    blk_params = [p for _, p in blk.named_params("ptb.0")]

    def ptb_fn(inputs):
        out = blk(inputs[0], inputs[1])
        return T.tmean(T.mul(out, out))

    cases["ptb_block"] = (ptb_fn, [_rand(rng, (1, 4, 8)), _rand(rng, (1, 4, 8))] + blk_params)

    mdfm = Mdfm(rng, channels=2, out_channels=2, dtype=np.float64)
    # move the zero-initialized offset convs to a smooth operating point:
    # sampling exactly on the integer grid sits on bilinear-interpolation kinks
    for off in (mdfm.off1, mdfm.off2):
        off.w.data = rng.uniform(-0.01, 0.01, off.w.shape)
        off.b.data = np.full(off.b.shape, 0.23)
    mdfm_params = [p for _, p in mdfm.named_params("mdfm.1")]

    def mdfm_fn(inputs):
        out = mdfm(inputs[0], inputs[1])
        return T.tmean(T.mul(out, out))

    cases["mdfm"] = (mdfm_fn, [_rand(rng, (1, 4, 4, 2)), _rand(rng, (1, 4, 4, 2))] + mdfm_params)
    return cases


PRIMITIVE_THRESHOLD = 1e-4
MATMUL_THRESHOLD = 1e-6
COMPOSITE_THRESHOLD = 1e-3


def run_suite(trials=20, seed=0, include_composites=True):
    """Run the gradient-check suite; returns [(name, max_err, threshold, ok)]."""
    names = None
    errs = {}
    for t in range(trials):
        rng = np.random.default_rng(seed + 1000 * t)
        cases = _primitive_cases(rng, key=seed + 1000 * t + 17)
        if include_composites:
            cases.update(_composite_cases(rng))
        if names is None:
            names = list(cases)
            errs = {k: 0.0 for k in names}
        for name, (fn, inputs) in cases.items():
            errs[name] = max(errs[name], gradcheck(fn, inputs))
    results = []
    for name in names:
        if name.startswith("matmul"):
            thr = MATMUL_THRESHOLD
        elif name in ("ptb_block", "mdfm"):
            thr = COMPOSITE_THRESHOLD
        else:
            thr = PRIMITIVE_THRESHOLD
        results.append((name, errs[name], thr, errs[name] <= thr))
    return results


def format_report(results):
    lines = ["gradient check (f64, h=1e-5, central differences)"]
    for name, err, thr, ok in results:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name:<20s} max_rel_err={err:.3e}  (<= {thr:.0e})")
    lines.append("ALL PASS" if all(r[3] for r in results) else "FAILURES PRESENT")
    return "\n".join(lines)
