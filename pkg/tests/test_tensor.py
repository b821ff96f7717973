import numpy as np
import pytest

from utils.errors import GraphError, NonFiniteError, ShapeMismatchError
from utils.tensor import (Graph, Tensor, add, debug_mode, evaluate, grad_check, log, mul, record_op, reduce_sum,
                          relu, sigmoid, take)

testdata_forward = [
    (lambda x, y: add(x, y), [1.0, 2.0], [3.0, 4.0], [4.0, 6.0]),
    (lambda x, y: mul(x, x), [0.5, 2.0], [0.0, 0.0], [0.25, 4.0]),
    (lambda x, y: x, [7.0], [0.0], [7.0]),
]


@pytest.mark.parametrize("fn, x, y, expected", testdata_forward)
def test_evaluate(fn, x, y, expected):
    out, graph = evaluate(fn, Tensor(x, requires_grad=True), Tensor(y))
    assert np.allclose(out.data, expected)


testdata_backward = [
    (lambda x: reduce_sum(x), [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]),
    (lambda x: reduce_sum(x * x), [3.0], [6.0]),
    (lambda x: reduce_sum(sigmoid(x)), [0.0], [0.25]),
]


@pytest.mark.parametrize("fn, x, expected", testdata_backward)
def test_backward(fn, x, expected):
    leaf = Tensor(x, requires_grad=True)
    with Graph() as graph:
        loss = fn(leaf)
    grads = graph.backward(loss)
    assert np.allclose(grads[leaf], expected)


def test_paths_accumulate():
    x = Tensor([2.0], requires_grad=True)
    with Graph() as graph:
        loss = reduce_sum(x * x + x)
    assert np.allclose(graph.backward(loss)[x], [5.0])


def test_backward_before_forward():
    graph = Graph()
    with pytest.raises(GraphError):
        graph.backward(Tensor([1.0]))


def test_seed_shape_mismatch():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        y = x * 2.0
    with pytest.raises(GraphError):
        graph.backward(y, seed=np.ones(3))


def test_debug_mode_non_finite():
    x = Tensor([0.0, 1.0])
    with debug_mode(True), pytest.raises(NonFiniteError):
        log(x)
    # outside debug mode the value just propagates
    assert np.isneginf(log(x).data[0])


def test_two_sided_broadcast_rejected():
    with pytest.raises(ShapeMismatchError):
        add(Tensor(np.ones((2, 1))), Tensor(np.ones((1, 3))))


def test_take_repeats_sum_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Graph() as graph:
        loss = reduce_sum(take(x, [0, 0, 2]))
    assert np.allclose(graph.backward(loss)[x], [2.0, 0.0, 1.0])


def test_linearity_of_backward():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    a, b = 2.5, -0.75

    def grad_of(fn):
        x.grad = None
        with Graph() as graph:
            loss = fn()
        return graph.backward(loss)[x]

    f = lambda: reduce_sum(sigmoid(x))
    g = lambda: reduce_sum(x * x)
    combined = grad_of(lambda: f() * a + g() * b)
    assert np.allclose(combined, a * grad_of(f) + b * grad_of(g))


def test_determinism():
    rng = np.random.default_rng(3)
    values = rng.standard_normal((4, 3))
    results = []
    for _ in range(2):
        x = Tensor(values.copy(), requires_grad=True)
        with Graph() as graph:
            loss = reduce_sum(sigmoid(x) * x)
        results.append(graph.backward(loss)[x])
    assert np.array_equal(results[0], results[1])


testdata_grad_check = [
    (lambda x: reduce_sum(x * x), [1.0, 2.0, 3.0], 1e-7),
    (lambda x: reduce_sum(relu(x)), [5.0], 0.0),
]


@pytest.mark.parametrize("fn, x, bound", testdata_grad_check)
def test_grad_check(fn, x, bound):
    leaf = Tensor(np.asarray(x, dtype=np.float64))
    report = grad_check(lambda: fn(leaf), leaf, step=1e-5)
    assert report.passed
    assert report.max_rel_error <= max(bound, 1e-12)
    assert report.n_checked == len(x)


def _scaled_with_doubled_gradient(x: Tensor, scale: float) -> Tensor:
    return record_op("scaled", (x,), x.data * scale, lambda g: (2.0 * scale * g,))


testdata_wrong_gradient = [1.0, 1e-4]


@pytest.mark.parametrize("scale", testdata_wrong_gradient)
def test_grad_check_catches_a_wrong_gradient(scale):
    leaf = Tensor(np.array([0.3, -1.2]))
    report = grad_check(lambda: reduce_sum(_scaled_with_doubled_gradient(leaf, scale)), leaf)
    assert not report.passed


testdata_item = [(np.array(2.5), 2.5), (np.array([[-1.0]]), -1.0)]


@pytest.mark.parametrize("values, expected", testdata_item)
def test_item(values, expected):
    assert Tensor(values).item() == expected


def test_item_of_a_vector():
    with pytest.raises(GraphError, match="shape"):
        Tensor(np.zeros(3)).item()
