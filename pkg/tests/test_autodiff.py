import numpy as np
import pytest

from kdshare.autodiff import ShapeError, Tensor, grad_check


def test_forward_square():
    x = Tensor([2.0])
    assert (x * x).data == pytest.approx([4.0])


def test_forward_identity_matmul():
    x = Tensor([[1.0, 2.0]])
    W = Tensor(np.eye(2))
    np.testing.assert_array_equal((x @ W).data, [[1.0, 2.0]])


def test_relu_boundary():
    assert Tensor([0.0]).relu().data == pytest.approx([0.0])


def test_backward_square():
    x = Tensor([3.0], trainable=True)
    (x * x).sum().backward()
    assert x.grad == pytest.approx([6.0])


def test_backward_softmax_ce_is_p_minus_y():
    # grad of CE(softmax(logits), onehot y) w.r.t. logits is p - y
    rng = np.random.default_rng(7)
    logits = Tensor(rng.standard_normal((4, 3)), trainable=True)
    onehot = np.zeros((4, 3))
    onehot[np.arange(4), [0, 2, 1, 1]] = 1.0
    loss = -(Tensor(onehot) * logits.log_softmax(axis=-1)).sum()
    loss.backward()
    p = logits.softmax(axis=-1).data
    np.testing.assert_allclose(logits.grad, p - onehot, atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], trainable=True)
    with pytest.raises(ShapeError):
        (x * x).backward()


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    onehot = np.zeros((5, 3))
    onehot[np.arange(5), rng.integers(0, 3, 5)] = 1.0
    w1 = rng.standard_normal((4, 6))
    w2 = rng.standard_normal((6, 3))
    n1 = w1.size

    def f(params: Tensor) -> Tensor:
        h = (Tensor(x) @ params[:n1].reshape(4, 6)).relu()
        logits = h @ params[n1:].reshape(6, 3)
        return -(Tensor(onehot) * logits.log_softmax(axis=-1)).sum().mean()

    point = np.concatenate([w1.ravel(), w2.ravel()])
    assert grad_check(f, point, step=1e-6) < 1e-5


def test_grad_check_constant_gradient():
    assert grad_check(lambda t: t.sum(), np.array([1.0, -2.0, 3.0])) < 1e-9


def test_grad_check_quadratic():
    assert grad_check(lambda t: (t * t).sum(), np.array([3.0]), step=1e-6) < 1e-8


def test_grad_check_rejects_nonscalar():
    with pytest.raises(ShapeError):
        grad_check(lambda t: t * t, np.array([1.0, 2.0]))


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), np.array([1.0]), step=0.0)


PRIMITIVES = {
    "matmul": lambda a, b: (a @ b).sum(),
    "add": lambda a, b: (a + b).sum(),
    "mul": lambda a, b: (a * b).sum(),
    "sub": lambda a, b: (a - b).sum(),
    "div": lambda a, b: (a / (b * b + 1.0)).sum(),
    "relu": lambda a, b: (a + 0.05).relu().sum(),  # offset keeps points off the kink
    "log": lambda a, b: ((a * a) + 0.5).log().sum(),
    "exp": lambda a, b: a.exp().sum(),
    "sqrt": lambda a, b: ((a * a) + 0.5).sqrt().sum(),
    "softmax": lambda a, b: (a.softmax(axis=-1) * b.detach()).sum(),
    "log_softmax": lambda a, b: (a.log_softmax(axis=-1) * b.detach()).sum(),
    "sum_axis": lambda a, b: (a.sum(axis=0) * a.sum(axis=1).sum()).sum(),
    "mean": lambda a, b: a.mean(axis=1).mean(),
    "norm": lambda a, b: a.norm(axis=1).sum(),
    "broadcast_add": lambda a, b: (a + b[0]).sum(),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    # randomized shapes up to 16x16 across >= 20 seeds
    fn = PRIMITIVES[name]
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        shape = (int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        other = Tensor(rng.standard_normal(shape))
        if name == "matmul":
            other = Tensor(rng.standard_normal((shape[1], int(rng.integers(1, 17)))))
        err = grad_check(lambda t, o=other: fn(t, o), rng.standard_normal(shape))
        assert err < 1e-5, f"{name} seed {seed}: rel error {err}"


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    p = Tensor(rng.standard_normal((8, 5)) * 10).softmax(axis=-1).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p > 0) and np.all(p < 1)


def test_frozen_leaf_untouched_and_zero_grad():
    frozen = Tensor([[1.0, 2.0], [3.0, 4.0]], trainable=False)
    before = frozen.data.copy()
    x = Tensor([[1.0, 1.0]], trainable=True)
    loss = (x @ frozen).sum()
    loss.backward()
    np.testing.assert_array_equal(frozen.data, before)
    np.testing.assert_array_equal(frozen.grad, np.zeros_like(before))
    assert np.any(x.grad != 0)


def test_identical_graphs_are_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        a = Tensor(rng.standard_normal((6, 6)), trainable=True)
        b = Tensor(rng.standard_normal((6, 6)), trainable=True)
        loss = ((a @ b).relu().softmax(axis=-1) * (a + b)).sum()
        loss.backward()
        return loss.data.copy(), a.grad.copy(), b.grad.copy()

    first, second = run(), run()
    for x, y in zip(first, second):
        np.testing.assert_array_equal(x, y)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(4))


def test_repeated_use_of_node_accumulates_once_per_edge():
    x = Tensor([2.0], trainable=True)
    y = x * x + x  # d/dx = 2x + 1 = 5
    y.sum().backward()
    assert x.grad == pytest.approx([5.0])
