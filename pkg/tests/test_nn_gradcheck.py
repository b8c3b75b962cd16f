import numpy as np
import pytest

from ganshield.errors import NumericError
from ganshield.nn import (
    DenseParams,
    ParamTensor,
    dense_backward,
    dense_forward,
    grad_check,
    init_dense,
)


def test_quadratic_loss_is_nearly_exact():
    rng = np.random.default_rng(4)
    params = [ParamTensor("p", rng.normal(size=(3, 2)))]

    def loss_and_grads(ps):
        loss = 0.5 * float(np.sum(ps[0].value ** 2))
        return loss, [ps[0].value.copy()]

    # central differences are exact on polynomials of degree <= 2, so a
    # moderate h avoids cancellation noise entirely
    assert grad_check(loss_and_grads, params, h=1e-3) < 1e-9


def test_sign_flip_is_detected():
    rng = np.random.default_rng(5)
    params = [ParamTensor("p", rng.normal(size=4) + 2.0)]

    def corrupted(ps):
        loss = 0.5 * float(np.sum(ps[0].value ** 2))
        g = ps[0].value.copy()
        g[1] = -g[1]
        return loss, [g]

    assert grad_check(corrupted, params) > 0.5


def test_dense_layer_gradient():
    rng = np.random.default_rng(6)
    dense = init_dense(rng, 4, 3)
    x = rng.normal(size=(2, 4))
    params = [ParamTensor("d.W", dense.W), ParamTensor("d.b", dense.b)]

    def loss_and_grads(ps):
        layer = DenseParams(W=ps[0].value, b=ps[1].value)
        y = dense_forward(layer, x)
        grads = layer.zeros_like()
        dense_backward(layer, x, np.ones_like(y), grads)
        return float(np.sum(y)), [grads.W, grads.b]

    assert grad_check(loss_and_grads, params) < 1e-8


def test_dense_sum_loss_gradient_is_outer_product():
    # y = W x + b, loss = sum(y): dL/dW = outer(ones, x), dL/db = ones
    layer = DenseParams(W=np.zeros((3, 2)), b=np.zeros(3))
    x = np.array([[1.5, -2.0]])
    grads = layer.zeros_like()
    y = dense_forward(layer, x)
    dense_backward(layer, x, np.ones_like(y), grads)
    np.testing.assert_array_equal(grads.W, np.outer(np.ones(3), x[0]))
    np.testing.assert_array_equal(grads.b, np.ones(3))


def test_nonfinite_loss_raises():
    params = [ParamTensor("p", np.ones(2))]

    def bad(ps):
        return float("nan"), [np.zeros(2)]

    with pytest.raises(NumericError):
        grad_check(bad, params)


def test_subsampled_coordinates_deterministic():
    rng = np.random.default_rng(7)
    params = [ParamTensor("p", rng.normal(size=50))]

    def loss_and_grads(ps):
        return 0.5 * float(np.sum(ps[0].value ** 2)), [ps[0].value.copy()]

    a = grad_check(loss_and_grads, params, max_coords_per_param=10, seed=3)
    b = grad_check(loss_and_grads, params, max_coords_per_param=10, seed=3)
    assert a == b
