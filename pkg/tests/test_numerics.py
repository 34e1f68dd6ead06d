import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csff import numerics as nm
from csff.errors import FormatError, NumericError, ShapeError, StateError


def test_dense_identity():
    y = nm.dense_forward(np.array([3.0, -1.0]), np.eye(2), np.zeros(2))
    assert np.array_equal(y, [3.0, -1.0])


def test_dense_zero_weights():
    y = nm.dense_forward(np.array([7.0, 9.0]), np.zeros((2, 2)), np.array([5.0, 5.0]))
    assert np.array_equal(y, [5.0, 5.0])


def test_dense_hand_matrix():
    # [[1,2],[3,4]] @ [1,1] = [3, 7]
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = nm.dense_forward(np.array([1.0, 1.0]), w, np.zeros(2))
    assert np.array_equal(y, [3.0, 7.0])


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        nm.dense_forward(np.ones(3), np.eye(2), np.zeros(2))


def test_conv_identity_kernel():
    x = np.arange(12, dtype=float).reshape(2, 6, 1)
    k = np.ones((1, 1, 1, 1))
    out = nm.conv_forward(x, k, np.zeros(1))
    assert np.array_equal(out, x)


def test_conv_hand_cross_correlation():
    # row [1,2,3] with kernel [1,1] -> [3, 5]
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    k = np.ones((1, 2, 1, 1))
    out = nm.conv_forward(x, k, np.zeros(1))
    assert np.array_equal(out.ravel(), [3.0, 5.0])


def test_conv_zero_input_bias():
    x = np.zeros((2, 5, 3))
    k = np.ones((2, 3, 3, 4))
    out = nm.conv_forward(x, k, np.full(4, 2.5))
    assert np.all(out == 2.5)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        nm.conv_forward(np.zeros((2, 3, 1)), np.ones((2, 4, 1, 1)), np.zeros(1))


def test_conv_dirac_kernel_shifts():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 9, 1))
    k = np.zeros((1, 3, 1, 1))
    k[0, 2, 0, 0] = 1.0  # picks column j+2
    out = nm.conv_forward(x, k, np.zeros(1))
    assert np.array_equal(out[:, :, 0], x[:, 2:, 0])


def test_maxpool_hand():
    x = np.array([1.0, 4.0, 2.0, 3.0]).reshape(1, 4, 1)
    out, idx = nm.maxpool_forward(x)
    assert np.array_equal(out.ravel(), [4.0, 3.0])
    assert idx is not None


def test_maxpool_constant():
    x = np.full((1, 6, 2), 3.25)
    out, _ = nm.maxpool_forward(x)
    assert out.shape == (1, 3, 2)
    assert np.all(out == 3.25)


def test_maxpool_width_one_passthrough():
    x = np.array([5.0]).reshape(1, 1, 1)
    out, idx = nm.maxpool_forward(x)
    assert np.array_equal(out, x)
    assert idx is None


def test_maxpool_odd_width_truncates():
    x = np.array([1.0, 2.0, 9.0]).reshape(1, 3, 1)
    out, _ = nm.maxpool_forward(x)
    assert np.array_equal(out.ravel(), [2.0])


def test_relu_values():
    assert nm.relu(np.array(-1.0)) == 0.0
    assert nm.relu(np.array(3.0)) == 3.0
    assert nm.relu(np.array(0.0)) == 0.0


def test_softmax_xent_uniform():
    loss, grad = nm.softmax_xent(np.array([0.0, 0.0]), 0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)
    assert grad == pytest.approx([-0.5, 0.5], abs=1e-12)


def test_softmax_xent_no_overflow():
    loss, grad = nm.softmax_xent(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(grad).all()


def test_softmax_xent_direct_formula():
    # loss = ln(1 + e^-1) for logits [1, 2], label 1
    loss, _ = nm.softmax_xent(np.array([1.0, 2.0]), 1)
    assert loss == pytest.approx(np.log(1.0 + np.exp(-1.0)), abs=1e-12)


def test_softmax_xent_bad_label():
    with pytest.raises(IndexError):
        nm.softmax_xent(np.array([0.0, 0.0]), 2)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_softmax_grad_sums_to_zero(vals):
    _, grad = nm.softmax_xent(np.array(vals), 0)
    assert abs(grad.sum()) <= 1e-12


def test_backward_dense_hand_case():
    # y = Wx + b, quadratic loss L = 0.5||y||^2 so dL/dy = y
    chain = [nm.dense(2)]
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    params = [(w, np.zeros(2))]
    x = np.array([1.0, 1.0])
    y, cache = nm.forward_chain(chain, params, x)
    grads, dx = nm.backward(chain, params, cache, y)
    assert np.array_equal(grads[0][0], [[3.0, 3.0], [7.0, 7.0]])
    assert np.array_equal(grads[0][1], [3.0, 7.0])
    assert np.array_equal(dx, [24.0, 34.0])  # W.T @ [3,7]


def test_backward_zero_upstream_grad():
    chain = [nm.dense(3), nm.relu_layer(), nm.dense(2)]
    params = nm.init_params(chain, (4,), seed=0)
    x = np.arange(4.0)
    _, cache = nm.forward_chain(chain, params, x)
    grads, dx = nm.backward(chain, params, cache, np.zeros(2))
    for gw, gb in grads:
        assert not gw.any() and not gb.any()
    assert not dx.any()


def test_backward_requires_cache():
    chain = [nm.dense(2)]
    params = nm.init_params(chain, (2,), seed=0)
    with pytest.raises(StateError):
        nm.backward(chain, params, None, np.zeros(2))


def test_finite_diff_linear_layer():
    chain = [nm.dense(3)]
    params = nm.init_params(chain, (4,), seed=1)
    err = nm.finite_diff_check(chain, params, np.array([0.3, -0.7, 1.1, 0.2]), label=1,
                               eps=1e-5, probes_per_tensor=8, seed=2)
    assert err <= 1e-7


def test_finite_diff_relu_chain():
    chain = [nm.dense(6), nm.relu_layer(), nm.dense(3)]
    params = nm.init_params(chain, (5,), seed=4)
    x = np.array([0.9, -1.3, 0.4, 2.0, -0.2])
    err = nm.finite_diff_check(chain, params, x, label=2, eps=1e-5,
                               probes_per_tensor=8, seed=5)
    assert err <= 1e-6


def test_finite_diff_conv_pool_chain():
    chain = [nm.conv(2, 3, 4), nm.relu_layer(), nm.maxpool(), nm.conv(1, 2, 3),
             nm.relu_layer(), nm.dense(3)]
    params = nm.init_params(chain, (2, 12, 1), seed=6)
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 12, 1))
    err = nm.finite_diff_check(chain, params, x, label=0, eps=1e-5,
                               probes_per_tensor=6, seed=8)
    assert err <= 1e-4


def test_sgd_zero_lr():
    params = [(np.ones((2, 2)), np.ones(2))]
    grads = [(np.full((2, 2), 3.0), np.full(2, 3.0))]
    nm.sgd_step(params, grads, 0.0)
    assert np.array_equal(params[0][0], np.ones((2, 2)))


def test_sgd_scalar_arithmetic():
    params = [(np.array([[1.0]]), np.zeros(1))]
    grads = [(np.array([[2.0]]), np.zeros(1))]
    nm.sgd_step(params, grads, 0.1)
    assert params[0][0][0, 0] == pytest.approx(0.8)


def test_sgd_two_steps_equal_summed_grads():
    p1 = [(np.array([[1.0, 2.0]]), np.array([0.5]))]
    p2 = [(np.array([[1.0, 2.0]]), np.array([0.5]))]
    g = [(np.array([[0.3, -0.1]]), np.array([0.2]))]
    nm.sgd_step(p1, g, 0.05)
    nm.sgd_step(p1, g, 0.05)
    gsum = [(2 * g[0][0], 2 * g[0][1])]
    nm.sgd_step(p2, gsum, 0.05)
    assert np.allclose(p1[0][0], p2[0][0]) and np.allclose(p1[0][1], p2[0][1])


def test_sgd_nonfinite_grad_reports_layer():
    params = [(np.ones((1, 1)), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))]
    grads = [(np.ones((1, 1)), np.zeros(1)), (np.array([[np.nan]]), np.zeros(1))]
    with pytest.raises(NumericError, match="layer 1"):
        nm.sgd_step(params, grads, 0.1)


def test_forward_deterministic_repeated_calls():
    chain = [nm.conv(2, 3, 4), nm.relu_layer(), nm.maxpool(), nm.dense(5)]
    params = nm.init_params(chain, (2, 10, 1), seed=9)
    x = np.random.default_rng(10).standard_normal((2, 10, 1))
    a, _ = nm.forward_chain(chain, params, x, want_cache=False)
    b, _ = nm.forward_chain(chain, params, x, want_cache=False)
    assert np.array_equal(a, b)


def test_batched_equals_single_bitwise():
    chain = [nm.conv(2, 3, 4), nm.relu_layer(), nm.maxpool(), nm.conv(1, 2, 3),
             nm.relu_layer(), nm.dense(4), nm.relu_layer(), nm.dense(2)]
    params = nm.init_params(chain, (2, 11, 1), seed=11)
    rng = np.random.default_rng(12)
    xs = rng.standard_normal((17, 2, 11, 1))
    batch, _ = nm.forward_chain(chain, params, xs, want_cache=False)
    for i in range(xs.shape[0]):
        one, _ = nm.forward_chain(chain, params, xs[i], want_cache=False)
        assert np.array_equal(one, batch[i])


def test_chain_shapes_guidance_when_kernel_too_wide():
    chain = [nm.conv(2, 11, 4)]
    with pytest.raises(ShapeError, match="smaller kernels"):
        nm.chain_shapes(chain, (2, 8, 1))


def test_checkpoint_round_trip(tmp_path):
    chain = [nm.conv(2, 3, 4), nm.relu_layer(), nm.maxpool(), nm.dense(6),
             nm.relu_layer(), nm.dense(2)]
    params = nm.init_params(chain, (2, 9, 1), seed=13)
    centers = np.random.default_rng(14).standard_normal((3, 6))
    path = tmp_path / "net.ckpt"
    nm.save_network(str(path), chain, params, (2, 9, 1),
                    meta={"net": "test", "seed": "13"}, centers=centers)
    chain2, params2, shape2, meta2, centers2 = nm.load_network(str(path))
    assert chain2 == chain
    assert shape2 == (2, 9, 1)
    assert meta2 == {"net": "test", "seed": "13"}
    for (w, b), (w2, b2) in zip(params, params2):
        assert np.array_equal(w, w2) and np.array_equal(b, b2)
    assert np.array_equal(centers, centers2)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(FormatError):
        nm.load_network(str(path))


def test_checkpoint_truncated(tmp_path):
    chain = [nm.dense(2)]
    params = nm.init_params(chain, (3,), seed=0)
    path = tmp_path / "net.ckpt"
    nm.save_network(str(path), chain, params, (3,))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        nm.load_network(str(path))
