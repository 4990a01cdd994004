import math

import numpy as np
import pytest

from convemo import tensor as T
from convemo.tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    parameter,
)
from helpers import FD_TOL, check_grads, random_tensor


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(eye, m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_projector_zeroes_row():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    m = Tensor([[5.0, 6.0], [7.0, 8.0]])
    out = T.matmul(p, m)
    np.testing.assert_array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    expect = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expect[i, j] += a[i, k] * b[k, j]
    out = T.matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_softmax_symmetry_and_shift_invariance():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(T.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])


def test_softmax_matches_high_precision_reference():
    import mpmath

    mpmath.mp.dps = 50
    row = [1.0, 2.0, 3.0]
    exps = [mpmath.exp(v) for v in row]
    total = sum(exps)
    expect = np.array([float(e / total) for e in exps])
    out = T.softmax_rows(Tensor([row]))
    np.testing.assert_allclose(out.data[0], expect, atol=1e-15)
    assert abs(out.data[0].sum() - 1.0) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    out = T.softmax_rows(Tensor(rng.standard_normal((6, 9)) * 5))
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(6), atol=1e-12)
    assert (out.data >= 0).all()


def test_layer_norm_constant_row_collapses_to_beta():
    x = Tensor([[5.0, 5.0, 5.0, 5.0]])
    out = T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-12)


def test_layer_norm_already_normalized_row():
    x = Tensor([[1.0, -1.0]])
    out = T.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_matches_two_pass_reference():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 7)) * 3 + 1
    gamma = rng.standard_normal(7)
    beta = rng.standard_normal(7)
    eps = 1e-5
    expect = np.empty_like(x)
    for i in range(4):
        mu = sum(x[i]) / 7
        var = sum((v - mu) ** 2 for v in x[i]) / 7
        expect[i] = (x[i] - mu) / math.sqrt(var + eps) * gamma + beta
    out = T.layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=eps)
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_layer_norm_pre_affine_moments():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 16)) * 4
    out = T.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12)
    assert np.abs(out.data.mean(axis=1)).max() < 1e-10
    assert np.abs(out.data.var(axis=1) - 1.0).max() < 1e-8


def test_relu_values():
    out = T.relu(Tensor([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])
    out = T.relu(Tensor([[-3.0, -0.5]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0]])


def test_concat_cols_widths_and_roundtrip():
    rng = np.random.default_rng(4)
    parts = [Tensor(rng.standard_normal((3, w))) for w in (100, 768, 512)]
    out = T.concat_cols(parts)
    assert out.shape == (3, 1380)
    # slicing is the exact inverse
    offs = [0, 100, 868, 1380]
    for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
        np.testing.assert_array_equal(out.data[:, lo:hi], p.data)


def test_concat_cols_single_part_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(T.concat_cols([x]).data, x.data)


def test_concat_cols_row_mismatch():
    with pytest.raises(ShapeError):
        T.concat_cols([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))])


def test_dropout_identity_cases():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((4, 4)))
    assert T.dropout(x, 0.0, training=True, rng=rng) is x
    assert T.dropout(x, 0.7, training=False) is x


def test_dropout_statistics():
    rng = np.random.default_rng(6)
    x = Tensor(np.ones((500, 200)))
    out = T.dropout(x, 0.5, training=True, rng=rng)
    survivors = (out.data != 0).mean()
    assert abs(survivors - 0.5) < 0.01 * 0.5 + 0.005  # within 1% of 0.5
    assert abs(out.data.mean() - 1.0) < 0.02  # mean preserved within 2%


def test_dropout_rejects_bad_p():
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(ValueError):
        T.dropout(x, 1.0, training=True, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        T.dropout(x, -0.1, training=True, rng=np.random.default_rng(0))


def test_backward_sum_gives_ones():
    x = parameter(np.arange(6.0).reshape(2, 3))
    tape = Tape()
    loss = T.sum_all(x, tape)
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = parameter([[1.0, 2.0]])
    tape = Tape()
    sq = T.mul(x, x, tape)
    loss = T.sum_all(sq, tape)
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, [[2.0, 4.0]])


def test_backward_rejects_non_scalar():
    x = parameter(np.ones((2, 2)))
    tape = Tape()
    y = T.relu(x, tape)
    with pytest.raises(ShapeError):
        backward(y, tape)


def test_adjoint_accumulation_duplicated_input():
    # y = sum(x @ x): both matmul slots feed the same tensor, so the grad is
    # the sum of both branch contributions: (x @ x grads) = x.T @ d + d @ x.T
    rng = np.random.default_rng(7)
    x = parameter(rng.standard_normal((3, 3)))
    tape = Tape()
    loss = T.sum_all(T.matmul(x, x, tape), tape)
    backward(loss, tape)
    ones = np.ones((3, 3))
    expect = ones @ x.data.T + x.data.T @ ones
    np.testing.assert_allclose(x.grad, expect, atol=1e-12)


def test_tensor_reused_across_two_branches():
    # loss = sum(relu(x)) + sum(x * x) exercises cross-op accumulation
    x = parameter([[1.0, -2.0, 3.0]])
    tape = Tape()
    branch_a = T.sum_all(T.relu(x, tape), tape)
    branch_b = T.sum_all(T.mul(x, x, tape), tape)
    loss = T.add(branch_a, branch_b, tape)
    loss_scalar = T.sum_all(loss, tape) if loss.data.ndim else loss
    backward(loss_scalar, tape)
    np.testing.assert_allclose(x.grad, [[1.0 + 2.0, 0.0 - 4.0, 1.0 + 6.0]])


def test_non_finite_forward_raises():
    big = Tensor([[1e308, 1e308]])
    with np.errstate(over="ignore"):
        with pytest.raises(NonFiniteError):
            T.mul(big, big)


def test_cross_entropy_uniform_and_perfect():
    logits = Tensor(np.zeros((3, 4)))
    loss = T.cross_entropy_logits(logits, np.array([0, 1, 2]))
    assert abs(loss.item() - math.log(4)) < 1e-12
    sharp = np.full((2, 3), -100.0)
    sharp[0, 1] = 100.0
    sharp[1, 2] = 100.0
    loss = T.cross_entropy_logits(Tensor(sharp), np.array([1, 2]))
    assert loss.item() < 1e-10


def test_cross_entropy_matches_high_precision():
    import mpmath

    mpmath.mp.dps = 50
    rng = np.random.default_rng(8)
    z = rng.standard_normal((4, 5)) * 3
    labels = np.array([0, 4, 2, 1])
    total = mpmath.mpf(0)
    for i in range(4):
        exps = [mpmath.exp(mpmath.mpf(v)) for v in z[i]]
        total += -mpmath.log(exps[labels[i]] / sum(exps))
    expect = float(total / 4)
    loss = T.cross_entropy_logits(Tensor(z), labels)
    assert abs(loss.item() - expect) < 1e-10


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        T.cross_entropy_logits(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_bce_logits_at_zero():
    loss = T.bce_with_logits(Tensor(np.zeros((2, 3))), np.zeros((2, 3)))
    assert abs(loss.item() - math.log(2)) < 1e-12


def test_sigmoid_values():
    out = T.sigmoid(Tensor([[0.0, 100.0, -100.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 1.0, 0.0]], atol=1e-12)


# ---------------------------------------------------------------------------
# gradient checks against finite differences

def _gradcheck_case(op_name, build, params):
    err = check_grads(build, params)
    assert err < FD_TOL, f"{op_name}: rel err {err:.3e}"


@pytest.mark.parametrize("seed", range(5))
def test_grad_matmul(seed):
    rng = np.random.default_rng(100 + seed)
    a = random_tensor(rng, 3, 4)
    b = random_tensor(rng, 4, 2)
    _gradcheck_case("matmul", lambda tape: T.sum_all(T.mul(
        T.matmul(a, b, tape), T.matmul(a, b, tape), tape), tape), [a, b])


@pytest.mark.parametrize("seed", range(5))
def test_grad_softmax(seed):
    rng = np.random.default_rng(200 + seed)
    x = random_tensor(rng, 4, 5)
    w = Tensor(rng.standard_normal((4, 5)))

    def build(tape):
        return T.sum_all(T.mul(T.softmax_rows(x, tape), w, tape), tape)

    _gradcheck_case("softmax_rows", build, [x])


@pytest.mark.parametrize("seed", range(5))
def test_grad_masked_softmax(seed):
    rng = np.random.default_rng(300 + seed)
    x = random_tensor(rng, 5, 5)
    mask = rng.random((5, 5)) < 0.6
    mask[2] = False  # one empty row
    w = Tensor(rng.standard_normal((5, 5)))

    def build(tape):
        return T.sum_all(T.mul(T.masked_softmax_rows(x, mask, tape), w, tape), tape)

    _gradcheck_case("masked_softmax_rows", build, [x])


@pytest.mark.parametrize("seed", range(5))
def test_grad_layer_norm(seed):
    rng = np.random.default_rng(400 + seed)
    x = random_tensor(rng, 3, 6)
    gamma = random_tensor(rng, 6)
    beta = random_tensor(rng, 6)
    w = Tensor(rng.standard_normal((3, 6)))

    def build(tape):
        return T.sum_all(T.mul(T.layer_norm(x, gamma, beta, tape=tape), w, tape), tape)

    _gradcheck_case("layer_norm", build, [x, gamma, beta])


@pytest.mark.parametrize("seed", range(5))
def test_grad_relu_away_from_kink(seed):
    rng = np.random.default_rng(500 + seed)
    data = rng.standard_normal((3, 4))
    data[np.abs(data) < 1e-2] = 0.5  # keep FD probes off the kink
    x = parameter(data)
    w = Tensor(rng.standard_normal((3, 4)))

    def build(tape):
        return T.sum_all(T.mul(T.relu(x, tape), w, tape), tape)

    _gradcheck_case("relu", build, [x])


@pytest.mark.parametrize("seed", range(3))
def test_grad_concat_add_bias_transpose(seed):
    rng = np.random.default_rng(600 + seed)
    a = random_tensor(rng, 2, 3)
    b = random_tensor(rng, 2, 2)
    bias = random_tensor(rng, 5)
    w = Tensor(rng.standard_normal((2, 3)))

    def build(tape):
        cat = T.concat_cols([a, b], tape)
        shifted = T.add_bias(cat, bias, tape)
        return T.sum_all(T.matmul(T.transpose(shifted, tape), w, tape), tape)

    _gradcheck_case("concat/add_bias/transpose", build, [a, b, bias])


@pytest.mark.parametrize("seed", range(3))
def test_grad_cross_entropy(seed):
    rng = np.random.default_rng(700 + seed)
    logits = random_tensor(rng, 4, 3)
    labels = rng.integers(0, 3, size=4)

    def build(tape):
        return T.cross_entropy_logits(logits, labels, tape)

    _gradcheck_case("cross_entropy_logits", build, [logits])


@pytest.mark.parametrize("seed", range(3))
def test_grad_bce(seed):
    rng = np.random.default_rng(800 + seed)
    logits = random_tensor(rng, 3, 4)
    targets = (rng.random((3, 4)) < 0.5).astype(float)

    def build(tape):
        return T.bce_with_logits(logits, targets, tape)

    _gradcheck_case("bce_with_logits", build, [logits])


@pytest.mark.parametrize("seed", range(3))
def test_grad_sigmoid_scale(seed):
    rng = np.random.default_rng(900 + seed)
    x = random_tensor(rng, 2, 5)

    def build(tape):
        return T.sum_all(T.sigmoid(T.mul_scalar(x, 1.7, tape), tape), tape)

    _gradcheck_case("sigmoid/mul_scalar", build, [x])


def test_grad_dropout_fixed_mask():
    # dropout is stochastic; check the backward gate against the saved mask
    rng = np.random.default_rng(1000)
    x = parameter(rng.standard_normal((4, 4)))
    tape = Tape()
    out = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(42), tape=tape)
    loss = T.sum_all(out, tape)
    backward(loss, tape)
    gate = (out.data != 0) * 2.0
    np.testing.assert_allclose(x.grad, gate)


# ---------------------------------------------------------------------------
# serialization

def test_params_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    params = {
        "layer.w": parameter(rng.standard_normal((3, 4))),
        "layer.b": parameter(rng.standard_normal(4)),
    }
    path = tmp_path / "params.json"
    T.save_params(path, params)
    loaded = T.load_params(path)
    assert set(loaded) == set(params)
    for name, t in params.items():
        np.testing.assert_array_equal(loaded[name], t.data)


def test_params_header_validation(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else", "version": 1, "params": {}}')
    with pytest.raises(ValueError, match="not a convemo-params file"):
        T.load_params(path)
    path.write_text('{"format": "convemo-params", "version": 99, "params": {}}')
    with pytest.raises(ValueError, match="version"):
        T.load_params(path)
