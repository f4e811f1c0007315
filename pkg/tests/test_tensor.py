import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lexmtl import tensor as T
from lexmtl.errors import DegenerateBatchError, DimensionError, ShapeError, VocabularyError
from lexmtl.gradcheck import check_gradients
from lexmtl.tensor import Tensor


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((a @ Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_matmul_hand_product():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_zero_annihilates():
    other = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    out = Tensor(np.zeros((2, 3))) @ other
    assert out.shape == (2, 4)
    assert not out.data.any()


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 2)))


# -- conv1d ------------------------------------------------------------------------

def test_conv1d_identity_kernel():
    x = Tensor(np.random.default_rng(1).normal(size=(5, 3)))
    kernel = Tensor(np.eye(3)[None])
    np.testing.assert_allclose(T.conv1d(x, kernel).data, x.data)


def test_conv1d_zero_kernel():
    x = Tensor(np.random.default_rng(2).normal(size=(4, 2)))
    assert not T.conv1d(x, Tensor(np.zeros((3, 2, 5)))).data.any()


def test_conv1d_taps_are_one_step_shifts():
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    first = Tensor(np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1))
    middle = Tensor(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1))
    # centred window: the first tap reads t-1
    np.testing.assert_array_equal(T.conv1d(x, first).data[:, 0], [0, 1, 2])
    # causal window t-2, t-1, t
    np.testing.assert_array_equal(T.conv1d(x, first, causal=True).data[:, 0], [0, 0, 1])
    np.testing.assert_array_equal(T.conv1d(x, middle, causal=True).data[:, 0], [0, 1, 2])


def test_conv1d_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((3, 3, 1))))


@pytest.mark.parametrize("dilation", [1, 2, 3])
def test_conv1d_causal_prefix_exact(dilation):
    rng = np.random.default_rng(dilation)
    x = rng.normal(size=(9, 3))
    kernel = Tensor(rng.normal(size=(3, 3, 4)))
    base = T.conv1d(Tensor(x), kernel, dilation, causal=True).data
    for t in range(8):
        y = x.copy()
        y[t + 1:] = rng.normal(size=y[t + 1:].shape)
        out = T.conv1d(Tensor(y), kernel, dilation, causal=True).data
        np.testing.assert_array_equal(out[:t + 1], base[:t + 1])


def test_depthwise_matches_diagonal_conv1d():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 6, 4)))
    k = rng.normal(size=(3, 4))
    full = np.zeros((3, 4, 4))
    for j in range(3):
        full[j] = np.diag(k[j])
    np.testing.assert_allclose(T.depthwise_conv1d(x, Tensor(k), 2).data,
                               T.conv1d(x, Tensor(full), 2).data, atol=1e-12)


# -- softmax -----------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)


def test_softmax_closed_form():
    out = T.softmax(Tensor(np.array([0.0, math.log(3)])))
    np.testing.assert_allclose(out.data, [0.25, 0.75], rtol=1e-12)


def test_softmax_shift_invariance():
    x = np.random.default_rng(4).normal(size=(3, 5))
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, T.softmax(Tensor(x + 17.5)).data,
                               rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 7)),
              elements=st.floats(-50, 50, width=32)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


# -- layer norm ----------------------------------------------------------------------

def test_layer_norm_constant_vector_is_zero():
    out = T.layer_norm(Tensor(np.full(4, 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert not out.data.any()


def test_layer_norm_already_normalised():
    out = T.layer_norm(Tensor(np.array([-1.0, 1.0])), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       eps=1e-12)
    np.testing.assert_allclose(out.data, [-1, 1], rtol=1e-9)


def test_layer_norm_hand_values():
    out = T.layer_norm(Tensor(np.array([0.0, 2.0, 4.0])), Tensor(np.ones(3)),
                       Tensor(np.zeros(3)), eps=0.0)
    np.testing.assert_allclose(out.data, [-math.sqrt(1.5), 0, math.sqrt(1.5)], rtol=1e-12)


# -- embedding lookup ------------------------------------------------------------------

def test_embedding_row_zero():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    np.testing.assert_array_equal(T.embedding_lookup(table, [0]).data, [[0, 1, 2]])


def test_embedding_repeated_id_accumulates_grad():
    table = leaf(np.arange(12.0).reshape(4, 3))
    out = T.embedding_lookup(table, [2, 2])
    np.testing.assert_array_equal(out.data, [[6, 7, 8], [6, 7, 8]])
    T.backward(out.sum())
    expected = np.zeros((4, 3))
    expected[2] = 2.0
    np.testing.assert_array_equal(table.grad, expected)


def test_embedding_equals_one_hot_matmul():
    rng = np.random.default_rng(5)
    table = rng.normal(size=(7, 4))
    ids = rng.integers(0, 7, size=9)
    one_hot = np.eye(7)[ids]
    np.testing.assert_allclose(T.embedding_lookup(Tensor(table), ids).data,
                               (Tensor(one_hot) @ Tensor(table)).data, rtol=1e-12)


def test_embedding_out_of_range_names_id():
    with pytest.raises(VocabularyError, match="9"):
        T.embedding_lookup(Tensor(np.ones((4, 2))), [1, 9])


# -- cross entropy ------------------------------------------------------------------------

def test_cross_entropy_uniform_is_log_v():
    loss = T.cross_entropy(Tensor(np.zeros((3, 11))), [1, 4, 7], pad_id=0)
    assert loss.item() == pytest.approx(math.log(11), rel=1e-6)


def test_cross_entropy_confident_limit():
    logits = np.full((1, 5), -60.0)
    logits[0, 3] = 60.0
    assert T.cross_entropy(Tensor(logits), [3], pad_id=0).item() < 1e-12


def test_cross_entropy_closed_form():
    loss = T.cross_entropy(Tensor(np.array([[0.0, math.log(3)]])), [1], pad_id=-1)
    assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-6)
    assert loss.item() == pytest.approx(0.2877, abs=1e-4)


def test_cross_entropy_all_pad_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 0], pad_id=0)


def test_cross_entropy_ignores_pad_positions():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(4, 6))
    full = T.cross_entropy(Tensor(logits[:2]), [3, 5], pad_id=0).item()
    padded = T.cross_entropy(Tensor(logits), [3, 5, 0, 0], pad_id=0).item()
    assert padded == pytest.approx(full, rel=1e-6)


# -- backward and the tape ----------------------------------------------------------------

def test_backward_square_sum():
    x = leaf([1.0, -2.0, 3.5])
    T.backward(T.square(x).sum())
    np.testing.assert_allclose(x.grad, [2.0, -4.0, 7.0])


def test_backward_constant_loss_gives_zero_grad():
    x = leaf([1.0, 2.0])
    c = Tensor(np.array(3.0))
    T.backward(c + (x * 0.0).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_non_scalar_rejected():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        T.backward(x * 2.0)


def test_unused_leaf_gets_zero_grad():
    x, y = leaf([1.0, 2.0]), leaf([5.0])
    y * 3.0  # recorded on the tape but disconnected from the loss
    T.backward((x * x).sum())
    assert y.grad is not None and not y.grad.any()
    assert x.grad.shape == x.shape


def test_tape_topological_and_cleared():
    tape = T.get_tape()
    tape.clear()
    x = leaf([1.0, 2.0])
    out = ((x * 2.0) + 1.0).sum()
    nodes = list(tape.nodes)
    seen = {id(x)}
    for node in nodes:
        assert all(id(i) in seen or not i.requires_grad for i in node.inputs)
        seen.add(id(node.output))
    T.backward(out)
    assert len(tape.nodes) == 0


def test_no_grad_records_nothing():
    tape = T.get_tape()
    tape.clear()
    with T.no_grad():
        _ = leaf([1.0]) * 2.0
    assert len(tape.nodes) == 0


def test_float32_default_dtype():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


def test_determinism_bitwise():
    rng = np.random.default_rng(7)
    x, k = rng.normal(size=(6, 4)).astype(np.float32), rng.normal(size=(3, 4, 4)).astype(np.float32)
    a = T.softmax(T.conv1d(Tensor(x), Tensor(k), 2, causal=True)).data
    b = T.softmax(T.conv1d(Tensor(x), Tensor(k), 2, causal=True)).data
    assert a.tobytes() == b.tobytes()


# -- finite differences per op -----------------------------------------------------------

def _ops(rng):
    a = leaf(rng.normal(size=(3, 4)))
    b = leaf(rng.normal(size=(4, 2)))
    c = leaf(rng.normal(size=(3, 4)))
    v = leaf(rng.normal(size=(4,)))
    pos = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
    seq = leaf(rng.normal(size=(2, 6, 3)))
    kern = leaf(rng.normal(size=(3, 3, 2)))
    dw = leaf(rng.normal(size=(3, 3)))
    gain, bias = leaf(rng.normal(size=(4,))), leaf(rng.normal(size=(4,)))
    table = leaf(rng.normal(size=(5, 3)))
    w = rng.normal(size=(3, 4))
    weights = Tensor(rng.normal(size=(2, 6, 2)))
    return {
        "add": (lambda: ((a + c) * w).sum(), {"a": a, "c": c}),
        "sub": (lambda: ((a - v) * w).sum(), {"a": a, "v": v}),
        "mul": (lambda: (a * c).sum(), {"a": a, "c": c}),
        "div": (lambda: ((a / pos) * w).sum(), {"a": a, "pos": pos}),
        "relu": (lambda: (T.relu(a) * w).sum(), {"a": a}),
        "matmul": (lambda: ((a @ b) * Tensor(w[:, :2])).sum(), {"a": a, "b": b}),
        "batched_matmul": (lambda: ((seq @ T.transpose(seq, (0, 2, 1))) * 0.3).sum(),
                           {"seq": seq}),
        "reshape_transpose": (lambda: (T.transpose(a.reshape(4, 3)) * w).sum(), {"a": a}),
        "getitem_scatter": (lambda: (T.scatter_rows(a[np.array([2, 0])], np.array([1, 2]), 3)
                                     * w).sum(), {"a": a}),
        "mean": (lambda: (a.mean(axis=0) * v).sum(), {"a": a, "v": v}),
        "conv1d": (lambda: (T.conv1d(seq, kern, 2) * weights).sum(), {"seq": seq, "kern": kern}),
        "conv1d_causal": (lambda: (T.conv1d(seq, kern, 1, causal=True) * weights).sum(),
                          {"seq": seq, "kern": kern}),
        "depthwise": (lambda: (T.depthwise_conv1d(seq, dw, 2, causal=True)
                               * Tensor(np.ones((2, 6, 3)) * 0.7)).sum(), {"seq": seq, "dw": dw}),
        "softmax": (lambda: (T.softmax(a) * w).sum(), {"a": a}),
        "layer_norm": (lambda: (T.layer_norm(a, gain, bias) * w).sum(),
                       {"a": a, "gain": gain, "bias": bias}),
        "embedding": (lambda: (T.embedding_lookup(table, [1, 4, 1]) * Tensor(w[:, :3])).sum(),
                      {"table": table}),
        "cross_entropy": (lambda: T.cross_entropy(a, np.array([1, 3, 2]), pad_id=0), {"a": a}),
        "cross_entropy_padded": (lambda: T.cross_entropy(seq, np.array([[1, 2, 0, 1, 0, 0],
                                                                         [2, 2, 1, 0, 0, 0]]),
                                                         pad_id=0), {"seq": seq}),
    }


@pytest.mark.parametrize("op", sorted(_ops(np.random.default_rng(0))))
def test_op_gradients_match_finite_differences(op):
    for seed in range(5):
        loss_fn, params = _ops(np.random.default_rng(seed))[op]
        report = check_gradients(loss_fn, params)
        assert report.max_error < 1e-3, (op, seed, report.errors)
