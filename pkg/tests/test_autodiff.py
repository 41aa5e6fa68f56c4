import numpy as np
import pytest

from beatsynth import autodiff as ad
from beatsynth.autodiff import Tensor
from beatsynth.autodiff import functional as F

TOL = 1e-5


def rnd(seed, *shape, low=-1.0, high=1.0):
    return Tensor(np.random.default_rng(seed).uniform(low, high, size=shape))


def away_from_zero(seed, *shape):
    x = np.random.default_rng(seed).uniform(0.2, 1.0, size=shape)
    sign = np.where(np.random.default_rng(seed + 1).random(shape) < 0.5, -1.0, 1.0)
    return Tensor(x * sign)


def proj(seed, shape):
    return np.random.default_rng(seed + 100).standard_normal(shape)


def check(fn, tensors):
    return ad.grad_check(fn, tensors)


# each entry builds (fn, tensors) so the primitive's output is contracted with a fixed random vector
PRIMITIVES = {
    "add": lambda: _binary(lambda a, b: a + b, (3, 4), (4,)),
    "sub": lambda: _binary(lambda a, b: a - b, (3, 4), (3, 1)),
    "mul": lambda: _binary(lambda a, b: a * b, (3, 4), (3, 4)),
    "div": lambda: _binary(lambda a, b: a / (b * b + 0.5), (2, 3), (2, 3)),
    "scalar_mul": lambda: _unary(lambda a: 2.5 * a, (5,)),
    "matmul": lambda: _binary(lambda a, b: a @ b, (3, 4), (4, 2)),
    "batched_matmul": lambda: _binary(lambda a, b: a @ b, (4, 3), (2, 3, 5)),
    "relu": lambda: _unary(ad.relu, (6,), kink=True),
    "leaky_relu": lambda: _unary(lambda a: ad.leaky_relu(a, 0.2), (6,), kink=True),
    "silu": lambda: _unary(ad.silu, (6,)),
    "sigmoid": lambda: _unary(ad.sigmoid, (6,)),
    "softplus": lambda: _unary(ad.softplus, (6,)),
    "tanh": lambda: _unary(ad.tanh, (6,)),
    "exp": lambda: _unary(ad.exp, (6,)),
    "log": lambda: _unary(lambda a: ad.log(a * a + 0.3), (6,)),
    "sqrt": lambda: _unary(lambda a: ad.sqrt(a * a + 0.3), (6,)),
    "square": lambda: _unary(ad.square, (6,)),
    "pow": lambda: _unary(lambda a: (a * a + 0.3) ** 1.5, (6,)),
    "mean": lambda: _unary(lambda a: a.mean(axis=1, keepdims=True) * a, (3, 4)),
    "sum": lambda: _unary(lambda a: a.sum(axis=0) * a, (3, 4)),
    "reshape": lambda: _unary(lambda a: a.reshape(4, 3) @ a, (3, 4)),
    "transpose": lambda: _unary(lambda a: a.T @ a, (3, 4)),
    "concat": lambda: _binary(lambda a, b: ad.concat([a, b * b], axis=1), (2, 3), (2, 2)),
    "getitem": lambda: _unary(lambda a: a[:, 1:3] * a[:, [0, 0]], (3, 4)),
    "conv1d": lambda: _conv1d(stride=2, padding=1),
    "conv_transpose1d": lambda: _convt(),
    "conv2d": lambda: _conv2d(),
    "dense": lambda: _dense(),
    "batch_norm": lambda: _batch_norm(),
    "instance_norm": lambda: _unary(lambda a: F.instance_norm(a) * a, (2, 3, 5)),
}


def _unary(op, shape, kink=False):
    a = away_from_zero(0, *shape) if kink else rnd(0, *shape)
    r = proj(0, op(a).shape)
    return (lambda: (op(a) * r).sum()), [a]


def _binary(op, sa, sb):
    a, b = rnd(1, *sa), rnd(2, *sb)
    r = proj(1, op(a, b).shape)
    return (lambda: (op(a, b) * r).sum()), [a, b]


def _conv1d(stride, padding):
    x, w, b = rnd(3, 2, 3, 9), rnd(4, 4, 3, 3), rnd(5, 4)
    r = proj(2, F.conv1d(x, w, b, stride, padding).shape)
    return (lambda: (F.conv1d(x, w, b, stride, padding) * r).sum()), [x, w, b]


def _convt():
    x, w, b = rnd(6, 2, 3, 5), rnd(7, 3, 2, 4), rnd(8, 2)
    r = proj(3, F.conv_transpose1d(x, w, b, 2, 1).shape)
    return (lambda: (F.conv_transpose1d(x, w, b, 2, 1) * r).sum()), [x, w, b]


def _conv2d():
    x, w, b = rnd(9, 2, 2, 5, 5), rnd(10, 3, 2, 3, 3), rnd(11, 3)
    r = proj(4, F.conv2d(x, w, b, 1).shape)
    return (lambda: (F.conv2d(x, w, b, 1) * r).sum()), [x, w, b]


def _dense():
    x, w, b = rnd(12, 4, 3), rnd(13, 2, 3), rnd(14, 2)
    r = proj(5, (4, 2))
    return (lambda: (F.dense(x, w, b) * r).sum()), [x, w, b]


def _batch_norm():
    x, g, b = rnd(15, 4, 3, 5), rnd(16, 3), rnd(17, 3)
    rm, rv = np.zeros(3), np.ones(3)
    r = proj(6, (4, 3, 5))
    return (lambda: (F.batch_norm(x, g, b, rm.copy(), rv.copy(), training=True) * r).sum()), [x, g, b]


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    fn, tensors = PRIMITIVES[name]()
    assert check(fn, tensors) <= TOL


@pytest.mark.parametrize("name", ["mul", "tanh", "sigmoid", "conv1d", "conv_transpose1d", "instance_norm",
                                  "leaky_relu", "dense", "sqrt", "matmul"])
def test_second_order_gradients(name):
    fn, tensors = PRIMITIVES[name]()
    x = tensors[0]

    def grad_norm_sq():
        g = ad.grad(fn(), [x], create_graph=True)[0]
        return (g * g).sum()

    assert check(grad_norm_sq, tensors) <= TOL


def test_matmul_identity():
    a = rnd(0, 3, 3)
    assert np.array_equal((Tensor(np.eye(3)) @ a).data, a.data)


def test_conv1d_zero_kernel_gives_zero():
    out = F.conv1d(rnd(0, 2, 3, 8), Tensor(np.zeros((4, 3, 3))), padding=1)
    assert np.all(out.data == 0)


@pytest.mark.parametrize("L_in,k,s,p", [(32, 4, 2, 1), (1, 4, 2, 1), (2, 4, 2, 1), (16, 4, 2, 1), (5, 3, 1, 0)])
def test_transposed_conv_shape_law(L_in, k, s, p):
    out = F.conv_transpose1d(rnd(0, 2, 3, L_in), rnd(1, 3, 5, k), stride=s, padding=p)
    assert out.shape == (2, 5, (L_in - 1) * s - 2 * p + k)
    assert F.conv_transpose_out_len(L_in, k, s, p) == out.shape[2]


def test_conv_transpose_is_adjoint_of_conv():
    x, y = rnd(0, 2, 3, 8), rnd(1, 2, 4, 4)
    w = rnd(2, 4, 3, 4)
    lhs = (F.conv1d(x, w, stride=2, padding=1) * y).sum().item()
    rhs = (x * F.conv_transpose1d(y, w, stride=2, padding=1)).sum().item()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_square_backward_at_three():
    x = Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(12.0)


def test_non_scalar_backward_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        (x * 2).backward()


def test_sum_of_product_grad():
    A = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    B = Tensor(np.random.default_rng(1).standard_normal((4, 2)))
    (A @ B).sum().backward()
    assert np.allclose(A.grad, np.ones((3, 2)) @ B.data.T)


def test_shape_errors_name_op():
    with pytest.raises(ad.ShapeError, match="matmul"):
        rnd(0, 3, 4) @ rnd(1, 3, 4)
    with pytest.raises(ad.ShapeError, match="add"):
        rnd(0, 3) + rnd(1, 4)


def test_unreached_params_get_zero_grad():
    m = ad.Dense(3, 2, np.random.default_rng(0))
    unused = ad.Dense(3, 2, np.random.default_rng(1))
    m.zero_grad()
    unused.zero_grad()
    m(rnd(0, 4, 3)).sum().backward()
    assert all(np.all(p.grad == 0) for p in unused.parameters())


def test_first_order_op_refuses_graph_building():
    x = rnd(0, 2, 3, 8)
    x.requires_grad = True
    y = ad.max_pool1d(x * x).sum()
    ad.grad(y, [x])  # fine
    with pytest.raises(ad.DoubleBackwardError):
        ad.grad(ad.max_pool1d(x * x).sum(), [x], create_graph=True)


def test_grad_check_linear_module_exact():
    m = ad.Dense(4, 3, np.random.default_rng(0))
    assert ad.grad_check_module(m, rnd(1, 5, 4)) <= 1e-9


def test_grad_check_two_layer_conv_net():
    rng = np.random.default_rng(0)
    c1, c2 = ad.Conv1d(2, 4, 3, rng, padding=1), ad.Conv1d(4, 1, 3, rng, stride=2)

    class Net(ad.Module):
        def __init__(self):
            super().__init__()
            self.c1, self.c2 = c1, c2

        def forward(self, x):
            return self.c2(ad.tanh(self.c1(x)))

    # eps=1e-4 truncation error dominates for the smallest weight gradients here
    assert ad.grad_check_module(Net(), rnd(1, 3, 2, 10), eps=1e-5) <= 1e-5


class TestAdam:
    def test_zero_grads_leave_params(self):
        p = [np.array([1.0, -2.0])]
        st = ad.AdamState(lr=0.1)
        ad.adam_step(st, p, [np.zeros(2)])
        assert np.array_equal(p[0], [1.0, -2.0])

    def test_first_step(self):
        g = np.array([0.3, -2.0])
        p = [np.zeros(2)]
        st = ad.AdamState(lr=0.01, eps=1e-8)
        ad.adam_step(st, p, [g])
        # bias-corrected moments equal g and g^2 after one step
        assert np.allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), atol=0, rtol=1e-12)

    def test_constant_gradient_bounded(self):
        p = [np.zeros(1)]
        st = ad.AdamState(lr=0.01)
        prev = 0.0
        for _ in range(500):
            ad.adam_step(st, p, [np.array([5.0])])
            step = abs(p[0][0] - prev)
            prev = p[0][0]
            assert step <= 0.01 / (1 - st.beta1) + 1e-12
        assert step == pytest.approx(0.01, rel=1e-6)


class TestInputGradient:
    def test_linear(self):
        w = np.array([0.5, -1.0, 2.0])
        g = ad.input_gradient(lambda x: x @ Tensor(w[:, None]), rnd(0, 4, 3))
        assert np.allclose(g.data, np.tile(w, (4, 1)))

    def test_squared_norm(self):
        x = rnd(0, 4, 3)
        g = ad.input_gradient(lambda z: (z * z).sum(axis=1), x)
        assert np.allclose(g.data, 2 * x.data)

    def test_small_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        l1, l2 = ad.Dense(3, 5, rng), ad.Dense(5, 1, rng)
        f = lambda z: l2(ad.tanh(l1(z)))
        x = rnd(1, 2, 3)
        g = ad.input_gradient(f, x).data
        eps = 1e-5
        num = np.zeros_like(x.data)
        for i in np.ndindex(x.shape):
            xp, xm = x.data.copy(), x.data.copy()
            xp[i] += eps
            xm[i] -= eps
            num[i] = (f(Tensor(xp)).data.sum() - f(Tensor(xm)).data.sum()) / (2 * eps)
        assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-8)) <= 1e-5

    def test_rejects_non_scalar_output(self):
        with pytest.raises(ad.ShapeError):
            ad.input_gradient(lambda z: z * 2, rnd(0, 4, 3))


def test_checkpoint_roundtrip(tmp_path):
    m = ad.BatchNorm1d(3)
    m.running_mean[:] = [1, 2, 3]
    ad.save_checkpoint(tmp_path / "m.tsnn", m.state_dict(), {"kind": "test"})
    state, meta = ad.load_checkpoint(tmp_path / "m.tsnn")
    m2 = ad.BatchNorm1d(3)
    m2.load_state_dict(state)
    assert meta == {"kind": "test"}
    assert np.array_equal(m2.running_mean, [1, 2, 3])


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.tsnn").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ad.CheckpointError, match="magic"):
        ad.load_checkpoint(tmp_path / "x.tsnn")


def test_batch_norm_modes_differ():
    bn = ad.BatchNorm1d(2)
    x = rnd(0, 4, 2, 3, low=2, high=5)
    train_out = bn(x, training=True)
    eval_out = bn(x, training=False)
    assert np.allclose(train_out.data.mean(axis=(0, 2)), 0, atol=1e-12)
    assert not np.allclose(train_out.data, eval_out.data)
