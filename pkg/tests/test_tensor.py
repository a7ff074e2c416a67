import numpy as np
import pytest

from spdehaze import tensor as T
from spdehaze import conv as C
from spdehaze import sampling as S
from spdehaze.optim import Adam, AdamState, adam_step
from spdehaze.gradcheck import gradcheck, _primitive_cases


def test_softmax_symmetry():
    s = T.softmax(T.Tensor([[0.0, 0.0]]))
    assert np.allclose(s.data, [[0.5, 0.5]])


def test_matmul_identity():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (3, 3)).astype(np.float32)
    out = T.matmul(T.Tensor(np.eye(3, dtype=np.float32)), T.Tensor(x))
    assert np.array_equal(out.data, x)


def _conv_oracle(x, w, b, stride, pad):
    # direct summation, zero padding
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, ho, wo, cout), dtype=np.float64)
    for bi in range(n):
        for i in range(ho):
            for j in range(wo):
                for co in range(cout):
                    acc = 0.0
                    for ky in range(kh):
                        for kx in range(kw):
                            for ci in range(cin):
                                acc += xp[bi, i * stride + ky, j * stride + kx, ci] * w[ky, kx, ci, co]
                    y[bi, i, j, co] = acc + (b[co] if b is not None else 0.0)
    return y


def test_conv2d_ones_interior():
    x = T.Tensor(np.ones((1, 5, 5, 1), dtype=np.float32))
    w = T.Tensor(np.ones((3, 3, 1, 1), dtype=np.float32))
    y = C.conv2d(x, w, stride=1, pad=1)
    assert y.data[0, 2, 2, 0] == 9.0


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_direct_summation(stride):
    rng = np.random.default_rng(11 + stride)
    x = rng.uniform(-1, 1, (2, 6, 6, 3))
    w = rng.uniform(-1, 1, (3, 3, 3, 4))
    b = rng.uniform(-1, 1, (4,))
    y = C.conv2d(T.Tensor(x, dtype=np.float64), T.Tensor(w, dtype=np.float64),
                 T.Tensor(b, dtype=np.float64), stride=stride, pad=1)
    ref = _conv_oracle(x, w, b, stride, 1)
    assert np.allclose(y.data, ref, atol=1e-12)


def test_backward_sum_of_squares():
    x = T.Tensor([3.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(T.mul(x, x))
    T.backward(tape, loss)
    assert np.allclose(x.grad, [6.0])


def test_backward_mean_gradient():
    x = T.Tensor(np.arange(5, dtype=np.float32), requires_grad=True)
    with T.Tape() as tape:
        loss = T.tmean(x)
    T.backward(tape, loss)
    assert np.allclose(x.grad, np.full(5, 0.2))


def test_backward_requires_scalar_loss():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        y = T.mul(x, x)
        with pytest.raises(T.ShapeError):
            T.backward(tape, y)


def test_backward_empty_tape_errors():
    with pytest.raises(T.EngineError):
        T.backward(T.Tape(), T.Tensor([1.0]))


def test_composite_ln_softmax_mean_matches_fd():
    rng = np.random.default_rng(7)
    x = T.Tensor(rng.uniform(-1, 1, (3, 6)), dtype=np.float64)
    r = rng.uniform(-1, 1, (3, 6))

    def fn(inputs):
        return T.tmean(T.mul(T.softmax(T.layer_norm(inputs[0])), T.Tensor(r, dtype=np.float64)))

    assert gradcheck(fn, [x]) <= 1e-4


def test_gradcheck_matmul_tight():
    rng = np.random.default_rng(0)
    a = T.Tensor(rng.uniform(-1, 1, (4, 5)), dtype=np.float64)
    b = T.Tensor(rng.uniform(-1, 1, (5, 3)), dtype=np.float64)
    r = rng.uniform(-1, 1, (4, 3))

    def fn(inputs):
        return T.tmean(T.mul(T.matmul(inputs[0], inputs[1]), T.Tensor(r, dtype=np.float64)))

    assert gradcheck(fn, [a, b]) <= 1e-6


def test_gradcheck_bilinear_sample():
    rng = np.random.default_rng(5)
    m = T.Tensor(rng.uniform(-1, 1, (1, 5, 5, 2)), dtype=np.float64)
    coords = rng.uniform(0.3, 3.4, (1, 3, 3, 2))
    coords = np.where(np.abs(coords - np.round(coords)) < 1e-2, coords + 0.05, coords)
    r = rng.uniform(-1, 1, (1, 3, 3, 2))

    def fn(inputs):
        return T.tmean(T.mul(S.bilinear_sample(inputs[0], inputs[1]), T.Tensor(r, dtype=np.float64)))

    assert gradcheck(fn, [m, T.Tensor(coords, dtype=np.float64)]) <= 1e-4


def test_softmax_rows_normalized_and_positive():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = T.softmax(T.Tensor(rng.normal(0, 3, (8, 16)).astype(np.float32))).data
        assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-6)
        assert np.all(s > 0)


def test_layer_norm_moments():
    rng = np.random.default_rng(2)
    y = T.layer_norm(T.Tensor(rng.normal(0, 1, (16, 64)).astype(np.float32))).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-6)
    assert np.all(np.abs(y.var(axis=-1) - 1.0) <= 1e-5)


def test_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(9)
        x = T.Tensor(rng.uniform(-1, 1, (4, 8)).astype(np.float32), requires_grad=True)
        w = T.Tensor(rng.uniform(-1, 1, (8, 8)).astype(np.float32), requires_grad=True)
        with T.Tape() as tape:
            h = T.gelu(T.matmul(x, w))
            loss = T.tmean(T.mul(h, h))
        T.backward(tape, loss)
        return x.grad.copy(), w.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_domain_guards():
    with pytest.raises(T.DomainError):
        T.log(T.Tensor([0.0, 1.0]))
    with pytest.raises(T.DomainError):
        T.div(T.Tensor([1.0]), T.Tensor([0.0]))
    with pytest.raises(T.DomainError):
        T.clamp(T.Tensor([1.0]), 0.5, 0.5)


def test_shape_errors_name_op():
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))))
    with pytest.raises(T.ShapeError, match="conv2d"):
        C.conv2d(T.Tensor(np.ones((1, 4, 4, 3))), T.Tensor(np.ones((3, 3, 2, 4))))


def test_adam_zero_gradient_keeps_params():
    p = T.Tensor(np.array([1.5, -2.0], dtype=np.float32))
    state = AdamState(lr=0.1)
    adam_step([p], [np.zeros(2)], state)
    assert np.array_equal(p.data, np.array([1.5, -2.0], dtype=np.float32))


def test_adam_first_step_magnitude():
    p = T.Tensor(np.array([0.0], dtype=np.float32))
    state = AdamState(lr=0.01)
    adam_step([p], [np.ones(1)], state)
    assert abs(-p.data[0] - 0.01) < 1e-7


def test_adam_identical_params_stay_identical():
    rng = np.random.default_rng(4)
    init = rng.uniform(-1, 1, (3,)).astype(np.float32)
    p1, p2 = T.Tensor(init.copy()), T.Tensor(init.copy())
    state = AdamState(lr=0.05)
    for k in range(10):
        g = rng.uniform(-1, 1, (3,))
        adam_step([p1, p2], [g, g], state)
        assert np.array_equal(p1.data, p2.data)


def test_deform_conv_zero_offsets_matches_replicate_conv():
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = T.Tensor(rng.uniform(-1, 1, (1, 6, 6, 3)).astype(np.float32))
        w = T.Tensor(rng.uniform(-1, 1, (3, 3, 3, 2)).astype(np.float32))
        off = T.Tensor(np.zeros((1, 6, 6, 18), dtype=np.float32))
        y = S.deform_conv(x, off, w)
        ref = C.conv2d(x, w, stride=1, pad=1, pad_mode="replicate")
        assert np.max(np.abs(y.data - ref.data)) <= 1e-5


def test_deform_conv_integer_shift_oracle():
    # all-tap offset (+1, 0) equals the standard conv of the input shifted up
    # by one pixel, on interior outputs
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (1, 8, 8, 2)).astype(np.float32)
    w = T.Tensor(rng.uniform(-1, 1, (3, 3, 2, 2)).astype(np.float32))
    off = np.zeros((1, 8, 8, 18), dtype=np.float32)
    off[..., 0::2] = 1.0  # dy = +1 on every tap
    y = S.deform_conv(T.Tensor(x), T.Tensor(off), w)
    shifted = np.roll(x, -1, axis=1)
    ref = C.conv2d(T.Tensor(shifted), w, stride=1, pad=1)
    assert np.allclose(y.data[0, 2:5, 2:6], ref.data[0, 2:5, 2:6], atol=1e-5)


def test_bilinear_center_of_2x2_is_mean():
    m = T.Tensor(np.array([[[[1.0], [2.0]], [[3.0], [4.0]]]], dtype=np.float32))
    coords = T.Tensor(np.array([[[[0.5, 0.5]]]], dtype=np.float32))
    out = S.bilinear_sample(m, coords)
    assert np.allclose(out.data, 2.5)


def test_bilinear_matches_scalar_loop_oracle():
    rng = np.random.default_rng(12)
    m = rng.uniform(-1, 1, (1, 6, 7, 2)).astype(np.float32)
    coords = rng.uniform(-1.0, 8.0, (1, 4, 4, 2)).astype(np.float32)
    out = S.bilinear_sample(T.Tensor(m), T.Tensor(coords)).data
    for i in range(4):
        for j in range(4):
            y = min(max(float(coords[0, i, j, 0]), 0.0), 5.0)
            x = min(max(float(coords[0, i, j, 1]), 0.0), 6.0)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, 5), min(x0 + 1, 6)
            wy, wx = y - y0, x - x0
            for c in range(2):
                m00, m01 = float(m[0, y0, x0, c]), float(m[0, y0, x1, c])
                m10, m11 = float(m[0, y1, x0, c]), float(m[0, y1, x1, c])
                v = (1 - wy) * ((1 - wx) * m00 + wx * m01) + wy * ((1 - wx) * m10 + wx * m11)
                assert out[0, i, j, c] == np.float32(v)
