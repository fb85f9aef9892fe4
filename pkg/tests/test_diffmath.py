"""Autodiff ops: values, backward rules vs finite differences, contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loco import diffmath as dm
from loco.diffmath import ContractError, ShapeError, Tape

from oracles import central_difference, rel_error


def test_matmul_identity():
    tape = Tape()
    m = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
    eye = tape.constant(np.eye(2))
    assert np.array_equal(dm.matmul(eye, m).value, m.value)
    assert np.array_equal(dm.matmul(m, eye).value, m.value)


def test_matmul_shape_errors():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        dm.matmul(a, b)
    with pytest.raises(ShapeError):
        dm.matmul(a, tape.leaf(np.ones(3)))


def test_matmul_gradient_is_row_sums_of_b():
    rng = np.random.default_rng(3)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 5))

    tape = Tape()
    a = tape.leaf(a0)
    loss = dm.total(dm.matmul(a, tape.constant(b0)))
    grad = tape.backward(loss)[a]
    expected = np.tile(b0.sum(axis=1), (3, 1))
    assert np.allclose(grad, expected, atol=1e-12)

    def f(x):
        return float(np.sum(x @ b0))

    assert rel_error(grad, central_difference(f, a0)) <= 1e-6


def test_row_softmax_zero_row_uniform():
    tape = Tape()
    out = dm.row_softmax(tape.leaf(np.zeros((1, 5))), 3.0)
    assert np.allclose(out.value, 0.2, atol=1e-15)


def test_row_softmax_analytic():
    tape = Tape()
    out = dm.row_softmax(tape.leaf([[0.0, math.log(3.0)]]), 1.0)
    assert np.allclose(out.value, [[0.25, 0.75]], atol=1e-12)


def test_row_softmax_rows_stochastic():
    rng = np.random.default_rng(11)
    tape = Tape()
    out = dm.row_softmax(tape.leaf(rng.standard_normal((6, 7)) * 4), 2.0)
    assert np.all(out.value > 0)
    assert np.max(np.abs(out.value.sum(axis=1) - 1.0)) <= 1e-12


def test_row_softmax_gradient_vs_fd():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 5))
    scale = math.sqrt(5.0)

    tape = Tape()
    x = tape.leaf(x0)
    loss = dm.total(dm.square(dm.row_softmax(x, scale)))
    grad = tape.backward(loss)[x]

    def f(v):
        logits = v / scale
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        y = e / e.sum(axis=1, keepdims=True)
        return float(np.sum(y * y))

    assert rel_error(grad, central_difference(f, x0)) <= 1e-5


def test_row_softmax_scale_contract():
    tape = Tape()
    with pytest.raises(ContractError):
        dm.row_softmax(tape.leaf(np.zeros((2, 2))), 0.0)


def test_max_norm_basic():
    tape = Tape()
    assert float(dm.max_norm(tape.leaf([0.1, 0.4, 0.2])).value) == 0.4


def test_max_norm_tie_routes_to_first():
    tape = Tape()
    x = tape.leaf(np.full((2, 3), 0.7))
    out = dm.max_norm(x)
    assert float(out.value) == 0.7
    grad = tape.backward(out)[x]
    expected = np.zeros((2, 3))
    expected[0, 0] = 1.0
    assert np.array_equal(grad, expected)


def test_max_norm_gradient_vs_fd():
    rng = np.random.default_rng(9)
    x0 = rng.uniform(0.1, 1.0, size=8)
    x0[3] = 2.0  # unique max, far from ties

    tape = Tape()
    x = tape.leaf(x0)
    loss = dm.square(dm.max_norm(x))
    grad = tape.backward(loss)[x]
    assert rel_error(grad, central_difference(lambda v: float(np.max(v) ** 2), x0)) <= 1e-6


def test_max_norm_empty():
    tape = Tape()
    with pytest.raises(ShapeError):
        dm.max_norm(tape.leaf(np.zeros((0,))))


def test_backward_sum_gives_ones():
    tape = Tape()
    z = tape.leaf(np.arange(6.0).reshape(2, 3))
    grad = tape.backward(dm.total(z))[z]
    assert np.array_equal(grad, np.ones((2, 3)))


def test_backward_constant_loss_gives_zeros():
    tape = Tape()
    z = tape.leaf(np.ones((2, 2)))
    loss = tape.constant(3.0)
    assert np.array_equal(tape.backward(loss)[z], np.zeros((2, 2)))


def test_backward_requires_scalar():
    tape = Tape()
    z = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ContractError):
        tape.backward(z + z)


def test_operands_must_share_tape():
    a = Tape().leaf(1.0)
    b = Tape().leaf(2.0)
    with pytest.raises(ContractError):
        _ = a + b


def test_detach_blocks_gradient():
    tape = Tape()
    x = tape.leaf([1.0, 2.0, 3.0])
    frozen = dm.detach(dm.square(x))
    loss = dm.total(x * frozen)
    grad = tape.backward(loss)[x]
    # d/dx of x * const(x^2) is just x^2, not 3x^2.
    assert np.array_equal(grad, np.array([1.0, 4.0, 9.0]))

    tape2 = Tape()
    y = tape2.leaf([1.0, 2.0])
    only_detached = dm.total(dm.detach(dm.square(y)))
    assert np.array_equal(tape2.backward(only_detached)[y], np.zeros(2))


def test_constant_gradient_reported_zero():
    tape = Tape()
    x = tape.leaf([2.0, 3.0])
    c = tape.constant([5.0, 7.0])
    loss = dm.total(x * c)
    grads = tape.backward(loss)
    assert np.array_equal(grads[x], np.array([5.0, 7.0]))
    assert np.array_equal(grads[c], np.zeros(2))


def test_elementwise_shape_mismatch():
    tape = Tape()
    with pytest.raises(ShapeError):
        _ = tape.leaf(np.ones((2, 2))) + tape.leaf(np.ones((2, 3)))


def test_clamp_contract():
    tape = Tape()
    with pytest.raises(ContractError):
        dm.clamp(tape.leaf(1.0), 0.5, 0.5)


def test_clamp_values_and_dead_zone_gradient():
    tape = Tape()
    x = tape.leaf([-1.0, 0.25, 2.0])
    out = dm.clamp(x, 0.0, 1.0)
    assert np.array_equal(out.value, np.array([0.0, 0.25, 1.0]))
    grad = tape.backward(dm.total(out))[x]
    assert np.array_equal(grad, np.array([0.0, 1.0, 0.0]))


def test_maximum_tie_routes_to_first_operand():
    tape = Tape()
    a = tape.leaf([1.0, 2.0])
    b = tape.leaf([1.0, 5.0])
    out = dm.maximum(a, b)
    grads = tape.backward(dm.total(out))
    assert np.array_equal(grads[a], np.array([1.0, 0.0]))
    assert np.array_equal(grads[b], np.array([0.0, 1.0]))


@pytest.mark.parametrize("op,b_is_scalar", [
    ("add", False), ("add", True),
    ("sub", False), ("sub", True),
    ("mul", False), ("mul", True),
    ("div", False), ("div", True),
    ("maximum", False), ("maximum", True),
])
def test_binary_op_gradients_vs_fd(op, b_is_scalar):
    rng = np.random.default_rng(hash(op) % 2 ** 31 + b_is_scalar)
    a0 = rng.uniform(0.5, 2.0, size=(3, 4))
    b0 = np.asarray(rng.uniform(2.5, 4.0)) if b_is_scalar else rng.uniform(2.5, 4.0, size=(3, 4))

    apply_np = {
        "add": lambda a, b: a + b,
        "sub": lambda a, b: a - b,
        "mul": lambda a, b: a * b,
        "div": lambda a, b: a / b,
        "maximum": np.maximum,
    }[op]

    def build(a_val, b_val):
        tape = Tape()
        a = tape.leaf(a_val)
        b = tape.leaf(b_val)
        fn = {"add": lambda: a + b, "sub": lambda: a - b,
              "mul": lambda: a * b, "div": lambda: a / b,
              "maximum": lambda: dm.maximum(a, b)}[op]
        return tape, a, b, dm.total(dm.square(fn()))

    tape, a, b, loss = build(a0, b0)
    grads = tape.backward(loss)

    def f_a(v):
        return float(np.sum(apply_np(v, b0) ** 2))

    def f_b(v):
        return float(np.sum(apply_np(a0, v) ** 2))

    assert rel_error(grads[a], central_difference(f_a, a0)) <= 1e-6
    assert rel_error(grads[b], central_difference(f_b, b0)) <= 1e-6


@pytest.mark.parametrize("op", ["square", "sigmoid", "log", "clamp"])
def test_unary_op_gradients_vs_fd(op):
    rng = np.random.default_rng(abs(hash(op)) % 2 ** 31)
    x0 = rng.uniform(0.2, 0.8, size=(2, 5))

    build = {
        "square": (dm.square, lambda v: v ** 2),
        "sigmoid": (dm.sigmoid, lambda v: 1 / (1 + np.exp(-v))),
        "log": (dm.log, np.log),
        "clamp": (lambda x: dm.clamp(x, 0.0, 1.0), lambda v: np.clip(v, 0.0, 1.0)),
    }[op]

    tape = Tape()
    x = tape.leaf(x0)
    loss = dm.total(dm.square(build[0](x)))
    grad = tape.backward(loss)[x]
    assert rel_error(grad, central_difference(lambda v: float(np.sum(build[1](v) ** 2)), x0)) <= 1e-4


def test_sigmoid_extreme_inputs_stay_finite():
    tape = Tape()
    out = dm.sigmoid(tape.leaf([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(out.value))
    assert out.value[0] == 0.0 and out.value[2] == 1.0


def test_determinism_bit_identical():
    def run():
        tape = Tape()
        x = tape.leaf(np.linspace(-1, 1, 12).reshape(3, 4))
        y = dm.row_softmax(dm.matmul(x, tape.constant(np.eye(4) * 2)), 2.0)
        loss = dm.total(dm.square(y)) / 3.0
        return y.value.copy(), tape.backward(loss)[x].copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2) and np.array_equal(g1, g2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_composite_chain_gradient_matches_fd(seed):
    """Blanket invariant: analytic gradients track central differences."""
    rng = np.random.default_rng(seed)
    a0 = rng.uniform(-2.0, 2.0, size=(3, 3))
    w = rng.standard_normal((3, 3))
    c = rng.uniform(0.5, 1.5, size=(3, 3))

    tape = Tape()
    a = tape.leaf(a0)
    y = dm.row_softmax(dm.matmul(a, tape.constant(w)), 1.7)
    mixed = dm.clamp(dm.sigmoid(y * tape.constant(c) + 0.3), 1e-7, 1 - 1e-7)
    loss = (0.0 - dm.total(dm.log(mixed))) / 9.0
    grad = tape.backward(loss)[a]

    def f(v):
        logits = (v @ w) / 1.7
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        y = e / e.sum(axis=1, keepdims=True)
        p = np.clip(1 / (1 + np.exp(-(y * c + 0.3))), 1e-7, 1 - 1e-7)
        return float(-np.sum(np.log(p)) / 9.0)

    assert rel_error(grad, central_difference(f, a0)) <= 1e-4
