import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glad import diffnet
from glad.diffnet import (MlpSpec, NonFiniteGradientError, ShapeError,
                          finite_difference_check, grl_backward, init_mlp,
                          init_sgd_state, mlp_apply, mlp_backward, mlp_forward,
                          mlp_gradients, sgd_step, softmax_cross_entropy,
                          softmax_cross_entropy_batch)


def test_mlp_identity_case():
    spec = MlpSpec((2, 2))
    params = [np.eye(2), np.zeros(2)]
    out = mlp_apply(spec, params, np.array([1.0, 2.0]))
    assert np.allclose(out, [1.0, 2.0])


def test_mlp_sigmoid_zero_params():
    spec = MlpSpec((3, 1), output_activation="sigmoid")
    params = [np.zeros((3, 1)), np.zeros(1)]
    out = mlp_apply(spec, params, np.array([5.0, -1.0, 2.0]))
    assert np.allclose(out, [0.5])


def test_mlp_matches_matrix_oracle():
    rng = np.random.default_rng(3)
    spec = MlpSpec((4, 6, 3), hidden_activation="relu")
    params = init_mlp(spec, rng)
    x = rng.normal(size=4)
    # straight-line matrix arithmetic
    h = np.maximum(x @ params[0] + params[1], 0.0)
    expected = h @ params[2] + params[3]
    assert np.allclose(mlp_apply(spec, params, x), expected, atol=1e-12)


def test_mlp_shape_mismatch_rejected():
    spec = MlpSpec((4, 3))
    params = init_mlp(spec, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        mlp_apply(spec, params, np.zeros(5))
    with pytest.raises(ShapeError):
        mlp_apply(MlpSpec((5, 3)), params, np.zeros(5))


def test_linear_layer_analytic_gradient():
    rng = np.random.default_rng(1)
    spec = MlpSpec((3, 2))
    params = init_mlp(spec, rng)
    x = rng.normal(size=3)
    g = rng.normal(size=2)
    grads, dx = mlp_gradients(spec, params, x, g)
    assert np.allclose(grads[0], np.outer(x, g))
    assert np.allclose(grads[1], g)
    assert np.allclose(dx, params[0] @ g)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(2)
    spec = MlpSpec((3, 5, 2), output_activation="sigmoid")
    params = init_mlp(spec, rng)
    grads, dx = mlp_gradients(spec, params, rng.normal(size=3), np.zeros(2))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(dx == 0)


@pytest.mark.parametrize("hidden,out", [("relu", "identity"), ("tanh", "sigmoid")])
def test_mlp_gradients_match_finite_differences(hidden, out):
    rng = np.random.default_rng(7)
    spec = MlpSpec((3, 4, 2), hidden_activation=hidden, output_activation=out)
    params = init_mlp(spec, rng)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 2))  # fixed projection making the loss scalar

    def loss_fn(p):
        return float(np.sum(mlp_apply(spec, p, x) * w))

    _, cache = mlp_forward(spec, params, x)
    grads, _ = mlp_backward(spec, params, cache, w)
    assert finite_difference_check(loss_fn, params, grads) < 1e-6


def test_softmax_xent_symmetric_case():
    loss, grad = softmax_cross_entropy(np.array([0.0, 0.0]), 0)
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    assert np.allclose(grad, [-0.5, 0.5])


def test_softmax_xent_large_margin():
    loss, _ = softmax_cross_entropy(np.array([100.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_xent_direct_value():
    loss, _ = softmax_cross_entropy(np.array([1.0, 2.0, 3.0]), 2)
    expected = np.log(np.exp(1) + np.exp(2) + np.exp(3)) - 3
    assert loss == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(0.407606, abs=1e-6)


def test_softmax_xent_rejects_empty():
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.array([]), 0)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
def test_softmax_xent_grad_sums_to_zero(logits, data):
    target = data.draw(st.integers(0, len(logits) - 1))
    _, grad = softmax_cross_entropy(np.array(logits), target)
    assert abs(grad.sum()) < 1e-12


def test_softmax_xent_batch_matches_single():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 4))
    targets = rng.integers(0, 4, size=6)
    losses, grads = softmax_cross_entropy_batch(logits, targets)
    for i in range(6):
        l, g = softmax_cross_entropy(logits[i], int(targets[i]))
        assert losses[i] == pytest.approx(l, abs=1e-12)
        assert np.allclose(grads[i], g, atol=1e-12)


def test_grl_examples():
    assert np.allclose(grl_backward(np.array([1.0, -2.0]), 1.0), [-1.0, 2.0])
    assert np.allclose(grl_backward(np.array([4.0]), 0.5), [-2.0])
    assert np.all(grl_backward(np.array([3.0, 7.0]), 0.0) == 0.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6),
       st.floats(-5, 5), st.floats(-5, 5),
       st.floats(0, 3))
def test_grl_is_exactly_linear(vec, a, b, coeff):
    u = np.array(vec)
    w = u[::-1].copy()
    left = grl_backward(a * u + b * w, coeff)
    right = a * grl_backward(u, coeff) + b * grl_backward(w, coeff)
    assert np.allclose(left, right, rtol=1e-12, atol=1e-6)


def test_sgd_plain_step():
    params = [np.array([1.0])]
    grads = [np.array([0.5])]
    state = init_sgd_state(params, learning_rate=0.1, momentum=0.0, weight_decay=0.0)
    new, _ = sgd_step(params, grads, state)
    assert new[0][0] == pytest.approx(0.95)


def test_sgd_momentum_first_step():
    params = [np.array([[1.0]])]
    grads = [np.array([[0.5]])]
    state = init_sgd_state(params, learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    new, state = sgd_step(params, grads, state)
    assert state.velocity[0][0, 0] == pytest.approx(0.5)
    assert new[0][0, 0] == pytest.approx(0.95)


def test_sgd_zero_grad_no_decay_keeps_params():
    params = [np.array([[2.0]]), np.array([3.0])]
    grads = [np.zeros((1, 1)), np.zeros(1)]
    state = init_sgd_state(params, learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    new, _ = sgd_step(params, grads, state)
    assert np.allclose(new[0], params[0]) and np.allclose(new[1], params[1])


def test_sgd_lr_zero_is_identity():
    rng = np.random.default_rng(4)
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    grads = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    state = init_sgd_state(params, learning_rate=0.0, momentum=0.5, weight_decay=0.1)
    new, _ = sgd_step(params, grads, state)
    assert np.array_equal(new[0], params[0]) and np.array_equal(new[1], params[1])


def test_sgd_weight_decay_skips_biases():
    params = [np.array([[1.0]]), np.array([1.0])]
    grads = [np.zeros((1, 1)), np.zeros(1)]
    state = init_sgd_state(params, learning_rate=1.0, momentum=0.0, weight_decay=0.1)
    new, _ = sgd_step(params, grads, state)
    assert new[0][0, 0] == pytest.approx(0.9)
    assert new[1][0] == pytest.approx(1.0)


def test_sgd_aborts_on_non_finite_gradient():
    params = [np.array([1.0])]
    state = init_sgd_state(params, learning_rate=0.1)
    with pytest.raises(NonFiniteGradientError):
        sgd_step(params, [np.array([np.nan])], state)


def test_finite_difference_quadratic():
    params = [np.array([3.0])]

    def loss_fn(p):
        return 0.5 * float(p[0][0]) ** 2

    err = finite_difference_check(loss_fn, params, [np.array([3.0])], eps=1e-5)
    assert err < 1e-8


def test_finite_difference_constant_loss():
    params = [np.array([1.0, 2.0])]
    err = finite_difference_check(lambda p: 1.0, params, [np.zeros(2)])
    assert err == 0.0


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    named = [("a.0", rng.normal(size=(3, 2)).astype(np.float32).astype(np.float64)),
             ("a.1", rng.normal(size=2).astype(np.float32).astype(np.float64))]
    diffnet.save_params(str(tmp_path), named)
    loaded = diffnet.load_params(str(tmp_path))
    assert [n for n, _ in loaded] == ["a.0", "a.1"]
    for (_, orig), (_, back) in zip(named, loaded):
        assert np.array_equal(orig, back)
