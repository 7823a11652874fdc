import numpy as np
import pytest

from graphmt.tensor import Tensor, concat, grad_check, no_grad, rows, stack


def rand(rng, *shape, offset=0.0):
    t = Tensor(rng.normal(size=shape) + offset, requires_grad=True)
    return t


SEEDS = [0, 1, 2]


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_ops(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 3, 4)
    b = rand(rng, 3, 4)
    checks = {
        "add": lambda: (a + b).sum(),
        "sub": lambda: (a - b).sum(),
        "mul": lambda: (a * b).mean(),
        "div": lambda: (a / (b * b + 1.0)).sum(),
        "neg": lambda: (-a).sum(),
        "pow": lambda: (a * a + 1.0).pow_const(1.5).sum(),
    }
    for name, fn in checks.items():
        assert grad_check(fn, [a, b]) <= 1e-5, name


@pytest.mark.parametrize("seed", SEEDS)
def test_broadcasting_grads(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 2, 3, 4)
    row = rand(rng, 4)
    col = rand(rng, 3, 1)
    assert grad_check(lambda: (a + row).sum(), [a, row]) <= 1e-5
    assert grad_check(lambda: (a * col).sum(), [a, col]) <= 1e-5
    assert grad_check(lambda: (row * col).sum(), [row, col]) <= 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 3, 4)
    b = rand(rng, 4, 2)
    assert grad_check(lambda: (a @ b).sum(), [a, b]) <= 1e-5
    # batched: shared weight broadcast over a leading batch axis
    x = rand(rng, 5, 3, 4)
    assert grad_check(lambda: (x @ b).mean(), [x, b]) <= 1e-5
    # full batched matmul
    y = rand(rng, 5, 4, 2)
    assert grad_check(lambda: (x @ y).sum(), [x, y]) <= 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_nonlinearities(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 4, 3)
    shifted = Tensor(rng.normal(size=(4, 3)) + np.where(
        rng.normal(size=(4, 3)) > 0, 0.5, -0.5), requires_grad=True)
    checks = {
        "tanh": lambda: a.tanh().sum(),
        "sigmoid": lambda: a.sigmoid().mean(),
        "exp": lambda: (a * 0.3).exp().sum(),
        "log": lambda: (a * a + 0.5).log().sum(),
        # relu checked away from the kink at 0
        "relu": lambda: shifted.relu().sum(),
    }
    for name, fn in checks.items():
        assert grad_check(fn, [a, shifted]) <= 1e-5, name


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_family(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 3, 5)
    w = Tensor(rng.normal(size=(3, 5)), requires_grad=False)
    assert grad_check(lambda: (a.softmax(axis=-1) * w).sum(), [a]) <= 1e-5
    assert grad_check(lambda: (a.log_softmax(axis=-1) * w).sum(), [a]) <= 1e-5
    s = a.softmax(axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(a.log_softmax(-1).data), s.data, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_reductions_and_shapes(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 2, 3, 4)
    checks = {
        "sum_all": lambda: a.sum(),
        "sum_axis": lambda: a.sum(axis=1).sum(),
        "sum_keep": lambda: (a - a.sum(axis=-1, keepdims=True)).sum(),
        "mean_axis": lambda: a.mean(axis=2).sum(),
        "reshape": lambda: a.reshape(6, 4).sum(axis=0).sum(),
        "swap": lambda: a.swapaxes(0, 2).mean(),
        "slice": lambda: a[:, 1:3, :].sum(),
        "fancy": lambda: a[np.array([0, 1, 1]), np.array([2, 0, 2])].sum(),
    }
    for name, fn in checks.items():
        assert grad_check(fn, [a]) <= 1e-5, name


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_stack_rows(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 2, 3)
    b = rand(rng, 2, 5)
    c = rand(rng, 2, 3)
    table = rand(rng, 7, 4)
    ids = np.array([[1, 3, 1], [0, 6, 6]])
    checks = {
        "concat": lambda: concat([a, b, c], axis=1).sum(),
        "stack": lambda: stack([a, c], axis=0).mean(),
        "rows": lambda: rows(table, ids).sum(),
    }
    for name, fn in checks.items():
        assert grad_check(fn, [a, b, c, table]) <= 1e-5, name
    # repeated ids must accumulate into the same row
    out = rows(table, np.array([2, 2]))
    out.sum().backward()
    assert table.grad[2].sum() == pytest.approx(8.0)


def test_duplicate_node_in_graph_counts_twice():
    a = Tensor(np.array([3.0]), requires_grad=True)
    y = a * a
    y.backward()
    np.testing.assert_allclose(a.grad, [6.0])


def test_backward_requires_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2).backward()


def test_epsilon_zero_rejected():
    a = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: a.sum(), [a], epsilon=0)


def test_no_grad_produces_leaves():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (a * 2 + 1).sum()
    assert out._parents == ()
    assert out._backward is None


def test_grad_accumulates_across_paths():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (a * 3).sum() + (a * a).sum()
    loss.backward()
    np.testing.assert_allclose(a.grad, [3 + 2 * 1.0, 3 + 2 * 2.0])
