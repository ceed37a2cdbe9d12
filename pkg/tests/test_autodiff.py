import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshadv import autodiff as ad


def fd_error(f, x, h=1e-5):
    return ad.finite_diff_check(f, x, h)


@pytest.mark.parametrize(
    "f",
    [
        lambda x: ad.sum(x * x),
        lambda x: ad.sum(ad.exp(x) / (1.0 + x * x)),
        lambda x: ad.sum(ad.sin(x) * ad.cos(x)),
        lambda x: ad.mean(ad.sqrt(x * x + 1.0)),
        lambda x: ad.sum(ad.log(x * x + 2.0)),
        lambda x: ad.sum(ad.acos(x / 4.0)),
        lambda x: ad.sum(ad.relu(x + 0.05)),
        lambda x: ad.sum(ad.norm(ad.reshape(x, (2, 3)))),
        lambda x: ad.sum(ad.cross(ad.reshape(x, (2, 3)), ad.reshape(x * x, (2, 3)))),
        lambda x: ad.sum(ad.dot(ad.reshape(x, (2, 3)), ad.reshape(x + 1.0, (2, 3)))),
        lambda x: ad.sum(ad.max(ad.reshape(x, (2, 3)), axis=1)),
        lambda x: ad.sum(ad.reshape(x, (2, 3)) @ ad.reshape(x, (3, 2))),
        lambda x: ad.sum(ad.take(x, [0, 0, 5, 2]) * 3.0),
        lambda x: ad.sum(ad.square(ad.scatter_add(x, [0, 1, 1, 0, 2, 2], 3))),
        lambda x: ad.sum(ad.stack([x, 2.0 * x], axis=1) * ad.concat([x, x])[:6, None]),
        lambda x: ad.softmax_cross_entropy(ad.reshape(x, (2, 3)), [2, 0]),
        lambda x: ad.softmax_cross_entropy(x, 4),
        lambda x: ad.sum(ad.transpose(ad.reshape(x, (2, 3))) @ ad.reshape(x, (2, 3))),
    ],
)
def test_ops_match_central_differences(f):
    x = np.array([0.3, -0.7, 1.1, 0.25, -1.4, 0.9])
    assert fd_error(f, x) < 1e-7


def test_backward_requires_scalar():
    tape = ad.Tape()
    x = tape.variable(np.ones(3))
    with pytest.raises(ad.GradientError):
        tape.backward(x * 2.0)


def test_unreachable_leaf_gets_zero_gradient():
    tape = ad.Tape()
    x = tape.variable(np.ones(3))
    y = tape.variable(np.ones(2))
    grads = tape.backward(ad.sum(x * x))
    assert np.array_equal(grads[y], np.zeros(2))
    assert np.allclose(grads[x], 2.0)


def test_shared_subexpression_accumulates():
    # f = x*x + x*x, df/dx = 4x
    val, g = ad.value_and_grad(lambda x: ad.sum(x * x + x * x), np.array([1.5, -2.0]))
    assert val == pytest.approx(12.5)
    assert np.allclose(g, [6.0, -8.0])


def test_broadcast_gradients_are_reduced():
    tape = ad.Tape()
    a = tape.variable(np.ones((4, 3)))
    b = tape.variable(np.array([1.0, 2.0, 3.0]))
    grads = tape.backward(ad.sum(a * b))
    assert grads[b].shape == (3,)
    assert np.allclose(grads[b], 4.0)


def test_max_routes_to_first_of_ties():
    _, g = ad.value_and_grad(lambda x: ad.max(x), np.array([1.0, 3.0, 3.0]))
    assert np.array_equal(g, [0.0, 1.0, 0.0])


def test_norm_at_zero_has_zero_gradient():
    _, g = ad.value_and_grad(lambda x: ad.sum(ad.norm(x)), np.zeros(3))
    assert np.array_equal(g, np.zeros(3))


def test_division_by_exact_zero_raises():
    with pytest.raises(ZeroDivisionError):
        ad.div(ad.Node(np.ones(2)), ad.Node(np.array([1.0, 0.0])))


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ad.GradientError):
        ad.softmax_cross_entropy(ad.Node(np.zeros(3)), 3)


def test_matmul_needs_matrices():
    with pytest.raises(ad.GradientError):
        ad.matmul(ad.Node(np.ones(3)), ad.Node(np.ones((3, 2))))


def test_finite_diff_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda x: ad.sum(x), np.ones(2), h=0.0)


def test_constants_do_not_grow_the_tape():
    tape = ad.Tape()
    c = tape.constant(np.ones(3))
    _ = c * 2.0 + 1.0
    assert len(tape.nodes) == 0


def test_tape_reusable_after_backward():
    tape = ad.Tape()
    x = tape.variable(np.array([2.0]))
    g1 = tape.backward(ad.sum(x * x))[x].copy()
    g2 = tape.backward(ad.sum(x * x * x))[x]
    assert g1 == pytest.approx([4.0])
    assert g2 == pytest.approx([12.0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)), arrays(np.float64, (4, 2), elements=st.floats(-3, 3)))
def test_matmul_gradient_is_outer_product_rule(a, b):
    tape = ad.Tape()
    A, B = tape.variable(a), tape.variable(b)
    grads = tape.backward(ad.sum(A @ B))
    assert np.allclose(grads[A], np.ones((3, 2)) @ b.T)
    assert np.allclose(grads[B], a.T @ np.ones((3, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-20, 20)), st.integers(0, 4))
def test_cross_entropy_gradient_is_softmax_minus_onehot(logits, label):
    _, g = ad.value_and_grad(lambda z: ad.softmax_cross_entropy(z, label), logits)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    p[label] -= 1.0
    assert np.allclose(g, p, atol=1e-12)
    assert g.sum() == pytest.approx(0.0, abs=1e-12)
