"""
Gradient checks for the tape and its primitives.

Every primitive is compared with central finite differences at >= 100
coordinates; for relu and maxpool, coordinates whose +-1e-3 probes switch a
branch are excluded.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ..autodiff import ops
from ..autodiff.gradcheck import (
    finite_difference_at,
    finite_difference_gradient,
    relative_error,
    sample_smooth_coordinates,
)
from ..autodiff.tape import Tape, Tensor, backward
from ..utils.errors import ContractError, ShapeError

TOLERANCE = 1e-4


def weighted_sum(op, weights):
    """Scalar test function sum(weights * op(x)) evaluated without a tape."""
    def f(x):
        return float(np.sum(weights * op(Tensor(x)).data))
    return f


def tape_gradient(op, x, weights):
    tape = Tape()
    xv = tape.variable(x)
    out = op(xv)
    return backward(tape, out, seed=weights)[xv]


def branch_signature(op):
    def signature(x):
        tape = Tape()
        op(tape.variable(x))
        return tape.branch_signature()
    return signature


def check_primitive(op, x, rng, count=100, kinked=False):
    weights = rng.normal(size=op(Tensor(x)).shape)
    analytic = tape_gradient(op, x, weights).reshape(-1)
    if kinked:
        coords = sample_smooth_coordinates(branch_signature(op), x, count, rng)
    else:
        coords = rng.permutation(x.size)[:count]
    assert len(coords) >= min(count, x.size)
    numeric = finite_difference_at(weighted_sum(op, weights), x, coords)
    assert relative_error(analytic[coords], numeric).max() <= TOLERANCE


def test_conv2d_input_gradient(rng):
    kernel = rng.normal(size=(4, 3, 2, 2))
    bias = rng.normal(size=4)
    check_primitive(lambda x: ops.conv2d(x, kernel, bias), rng.normal(size=(3, 8, 8)), rng)


def test_conv2d_parameter_gradients(rng):
    x = rng.normal(size=(3, 8, 8))
    kernel = rng.normal(size=(4, 3, 2, 2))
    bias = rng.normal(size=4)
    weights = rng.normal(size=(4, 8, 8))

    tape = Tape()
    kv, bv = tape.variable(kernel), tape.variable(bias)
    grads = backward(tape, ops.conv2d(Tensor(x), kv, bv), seed=weights)

    numeric_kernel = finite_difference_gradient(
        lambda k: float(np.sum(weights * ops.conv2d(x, k, bias).data)), kernel)
    numeric_bias = finite_difference_gradient(
        lambda b: float(np.sum(weights * ops.conv2d(x, kernel, b).data)), bias)
    assert relative_error(grads[kv], numeric_kernel).max() <= TOLERANCE
    assert relative_error(grads[bv], numeric_bias).max() <= TOLERANCE


def test_conv2d_identity_and_shift_kernels():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    identity = np.zeros((1, 1, 2, 2))
    identity[0, 0, 0, 0] = 1.0
    assert np.array_equal(ops.conv2d(x, identity, np.zeros(1)).data, x)

    right = np.zeros((1, 1, 2, 2))
    right[0, 0, 0, 1] = 1.0
    shifted = ops.conv2d(x, right, np.zeros(1)).data[0]
    assert np.array_equal(shifted[:, :3], x[0, :, 1:])
    # zero padding on the right edge
    assert np.array_equal(shifted[:, 3], np.zeros(4))


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((1, 4, 4)), np.zeros((2, 1, 2, 2)), np.zeros(1))


def test_maxpool_gradient(rng):
    check_primitive(ops.maxpool2, rng.normal(size=(2, 10, 10)), rng, kinked=True)


def test_maxpool_odd_extent():
    with pytest.raises(ShapeError):
        ops.maxpool2(np.zeros((1, 3, 4)))


def test_maxpool_tie_routes_to_first_position():
    x = np.ones((1, 2, 2))
    tape = Tape()
    xv = tape.variable(x)
    grad = backward(tape, ops.maxpool2(xv))[xv]
    assert np.array_equal(grad, np.array([[[1.0, 0.0], [0.0, 0.0]]]))


@given(arrays(np.float64, (2, 4, 6), elements=st.floats(-10, 10, allow_nan=False)))
@settings(max_examples=50, deadline=None)
def test_maxpool_routes_each_adjoint_to_one_window_maximum(x):
    tape = Tape()
    xv = tape.variable(x)
    out = ops.maxpool2(xv)
    seed = np.arange(1.0, out.size + 1.0).reshape(out.shape)
    grad = backward(tape, out, seed=seed)[xv]
    assert np.isclose(grad.sum(), seed.sum())
    windows = x.reshape(2, 2, 2, 3, 2).transpose(0, 1, 3, 2, 4)
    grad_windows = grad.reshape(2, 2, 2, 3, 2).transpose(0, 1, 3, 2, 4)
    for c in range(2):
        for i in range(2):
            for j in range(3):
                hit = np.flatnonzero(grad_windows[c, i, j].reshape(-1))
                assert len(hit) == 1
                assert windows[c, i, j].reshape(-1)[hit[0]] == out.data[c, i, j]


@pytest.mark.parametrize("fn", ["relu", "tanh", "sigmoid"])
def test_pointwise_gradients(fn, rng):
    op = lambda x: ops.pointwise(x, fn)  # noqa: E731
    check_primitive(op, rng.uniform(-3.0, 3.0, size=(6, 25)), rng, kinked=(fn == "relu"))


def test_relu_derivative_at_zero_is_one():
    tape = Tape()
    xv = tape.variable(np.array([-1.0, 0.0, 2.0]))
    grad = backward(tape, ops.relu(xv), seed=np.ones(3))[xv]
    assert np.array_equal(grad, np.array([0.0, 1.0, 1.0]))


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        out = ops.sigmoid(np.array([-800.0, 0.0, 800.0])).data
    assert np.array_equal(out, np.array([0.0, 0.5, 1.0]))


def test_unknown_pointwise_function():
    with pytest.raises(ContractError):
        ops.pointwise(np.zeros(2), "softplus")


def test_affine_gradients(rng):
    weight = rng.normal(size=(10, 12))
    bias = rng.normal(size=10)
    check_primitive(lambda x: ops.affine(x, weight, bias), rng.normal(size=12), rng, count=12)

    x = rng.normal(size=12)
    check_primitive(lambda w: ops.affine(x, w, bias), weight, rng, count=100)
    check_primitive(lambda b: ops.affine(x, weight, b), bias, rng, count=10)


def test_affine_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.affine(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


def test_flatten_gradient(rng):
    check_primitive(ops.flatten, rng.normal(size=(3, 5, 8)), rng)


def test_flatten_is_row_major():
    x = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(ops.flatten(x).data, np.arange(24.0))


def test_masked_blend():
    x = np.array([1.0, 2.0, 3.0])
    bits = np.array([1.0, 0.0, 1.0])
    constants = np.array([9.0, 8.0, 7.0])
    tape = Tape()
    xv = tape.variable(x)
    out = ops.masked_blend(xv, bits, constants)
    assert np.array_equal(out.data, np.array([1.0, 8.0, 3.0]))
    assert np.array_equal(backward(tape, out, seed=np.ones(3))[xv], bits)


def test_backward_needs_seed_for_non_scalar_output():
    tape = Tape()
    out = ops.relu(tape.variable(np.ones(3)))
    with pytest.raises(ContractError):
        backward(tape, out)
    with pytest.raises(ShapeError):
        backward(tape, out, seed=np.ones(2))


def test_unreached_node_has_zero_gradient():
    tape = Tape()
    x = tape.variable(np.ones(2))
    unused = tape.variable(np.ones((2, 2)))
    grads = backward(tape, ops.affine(x, np.ones((1, 2)), np.zeros(1)))
    assert not grads.reached(unused)
    assert np.array_equal(grads[unused], np.zeros((2, 2)))
    assert np.array_equal(grads[x], np.ones(2))


def test_inputs_on_different_tapes():
    a = Tape().variable(np.ones(2))
    b = Tape().variable(np.ones((1, 2)))
    with pytest.raises(ContractError):
        ops.affine(a, b, np.zeros(1))


def test_untracked_evaluation_records_nothing():
    out = ops.relu(np.array([1.0, -1.0]))
    assert not out.is_recorded


def test_tensor_rejects_empty_extent():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_tape_node_names():
    tape = Tape()
    x = tape.variable(np.ones(2), name="image")
    assert tape.node("image").node_id == x.node_id
    with pytest.raises(ContractError):
        tape.variable(np.ones(2), name="image")
    with pytest.raises(ContractError):
        tape.node("missing")


def test_adjoint_mask_on_intermediate_node(rng):
    weight = rng.normal(size=(5, 4))
    head = rng.normal(size=(1, 5))
    mask = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
    tape = Tape()
    x = tape.variable(rng.normal(size=4))
    hidden = ops.affine(x, weight, np.zeros(5))
    out = ops.affine(hidden, head, np.zeros(1))
    grads = backward(tape, out, adjoint_masks={hidden: mask})
    expected = weight.T @ (mask * head[0])
    assert np.allclose(grads[x], expected, rtol=0, atol=1e-14)
    # the output itself is unaffected by masking
    assert np.array_equal(grads[out], np.ones(1))


def test_adjoint_mask_shape_checked():
    tape = Tape()
    x = tape.variable(np.ones(3))
    out = ops.relu(x)
    with pytest.raises(ShapeError):
        backward(tape, out, seed=np.ones(3), adjoint_masks={x: np.ones(2)})


def test_finite_difference_rejects_bad_eps():
    with pytest.raises(ContractError):
        finite_difference_at(lambda x: 0.0, np.zeros(2), [0], eps=0.0)


def test_composed_model_input_gradient(synthetic_model, random_image, rng):
    image = random_image()

    def signature(x):
        return synthetic_model.forward(x).tape.branch_signature()

    coords = sample_smooth_coordinates(signature, image, 100, rng)
    assert len(coords) == 100
    result = synthetic_model.forward(image)
    analytic = backward(result.tape, result.score_node)[result.image].reshape(-1)
    numeric = finite_difference_at(synthetic_model.score, image, coords)
    assert relative_error(analytic[coords], numeric).max() <= TOLERANCE


def test_composed_model_parameter_gradients(small_model, rng):
    image = rng.uniform(0.0, 2.0, size=(8, 8))
    result = small_model.forward(image)
    grads = backward(result.tape, result.score_node)
    reference = result.tape.branch_signature()
    for name, value in small_model.parameters.items():
        def score_with(param, name=name):
            model = small_model.copy()
            model.parameters[name] = param
            return model.score(image)

        def signature(param, name=name):
            model = small_model.copy()
            model.parameters[name] = param
            return model.forward(image).tape.branch_signature()

        coords = sample_smooth_coordinates(signature, value, 20, rng)
        if len(coords) == 0:
            continue
        assert signature(value) == reference
        analytic = grads[result.parameter_nodes[name]].reshape(-1)[coords]
        numeric = finite_difference_at(score_with, value, coords)
        assert relative_error(analytic, numeric).max() <= TOLERANCE


def test_conv2d_all_ones_kernel_worked_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out = ops.conv2d(x, np.ones((1, 1, 2, 2)), np.zeros(1)).data
    assert np.array_equal(out, np.array([[[10.0, 6.0], [7.0, 4.0]]]))


def test_affine_worked_example():
    out = ops.affine(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2)).data
    assert np.array_equal(out, np.array([3.0, 7.0]))


@pytest.mark.parametrize("in_channels,out_channels,size", [(1, 1, 2), (1, 4, 8), (3, 2, 5), (4, 8, 16)])
def test_conv2d_adjoint_dot_product_identity(rng, in_channels, out_channels, size):
    for _ in range(5):
        x = rng.normal(size=(in_channels, size, size))
        kernel = rng.normal(size=(out_channels, in_channels, 2, 2))
        y = rng.normal(size=(out_channels, size, size))
        forward_side = float(np.sum(ops.conv2d(x, kernel, np.zeros(out_channels)).data * y))
        adjoint_side = float(np.sum(x * ops.conv2d_backward_input(y, kernel)))
        assert abs(forward_side - adjoint_side) <= 1e-10 * max(1.0, abs(forward_side))


def test_backward_replay_is_identical(synthetic_model, random_image):
    result = synthetic_model.forward(random_image())
    features = result.tape.node("features")
    mask = np.tile([1.0, 0.0], 16)
    for masks in (None, {features: mask}):
        first = backward(result.tape, result.score_node, adjoint_masks=masks)
        second = backward(result.tape, result.score_node, adjoint_masks=masks)
        assert list(first) == list(second)
        for node_id in first:
            assert np.array_equal(first[node_id], second[node_id])
