import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import LAYERS, check, dot_probe as _dot
from pointfuse.nn.autograd import (
    Tensor,
    affine,
    backward,
    concat,
    group_max,
    log_softmax_np,
    softmax_np,
)


def test_affine_outer_product():
    x = np.array([[1.0, 2.0, 3.0]])
    W = Tensor(np.zeros((3, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    y = affine(x, W, b)
    up = np.array([[0.5, -2.0]])
    backward(_dot(y, up))
    np.testing.assert_allclose(W.grad, np.outer(x[0], up[0]))
    np.testing.assert_allclose(b.grad, up[0])


def test_group_max_gradient_at_argmax_only():
    x = Tensor(np.array([[[1.0, 5.0], [3.0, 5.0], [2.0, 0.0]]]), requires_grad=True)
    y = group_max(x)
    np.testing.assert_array_equal(y.data, [[3.0, 5.0]])
    backward(_dot(y, np.ones((1, 2))))
    # tie in column 1 goes to the first member
    np.testing.assert_array_equal(x.grad[0], [[0, 1], [1, 0], [0, 0]])


def test_group_max_identical_members():
    row = np.array([0.3, -1.0, 2.0])
    x = np.tile(row, (1, 4, 1))
    np.testing.assert_array_equal(group_max(Tensor(x)).data[0], row)


@given(seed=st.integers(0, 2**31))
def test_group_max_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 7, 3))
    perm = rng.permutation(7)
    np.testing.assert_array_equal(group_max(Tensor(x)).data, group_max(Tensor(x[:, perm])).data)


def test_softmax_rows():
    z = np.random.default_rng(0).normal(size=(10, 6)) * 50
    np.testing.assert_allclose(softmax_np(z).sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.exp(log_softmax_np(z)), softmax_np(z), atol=1e-12)


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_finite_difference(name):
    fn, make = LAYERS[name]
    rng = np.random.default_rng(7)
    errs = check(fn, make(rng), 40, rng)
    assert max(errs) < 1e-4, f"{name}: {max(errs)}"


def test_backward_accumulates_shared_inputs():
    x = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    y = concat([x, x])
    backward(_dot(y, np.array([[1.0, 2.0, 3.0, 4.0]])))
    np.testing.assert_allclose(x.grad, [[4.0, 6.0]])
