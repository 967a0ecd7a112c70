import itertools

import numpy as np
import pytest

from rncover import autodiff as ad
from rncover.gradcheck import check_ops


def test_affine_examples():
    assert ad.affine([[1, 0], [0, 1]], [0, 0], [[3, 4]]).data.tolist() == [[3, 4]]
    assert ad.affine([[2, 0]], [1], [[3, 4]]).data.tolist() == [[7]]
    assert ad.affine(np.zeros((1, 3)), [5], [[1.5, -2, 9]]).data.tolist() == [[5]]
    with pytest.raises(ad.ShapeError):
        ad.affine(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 2)))


def test_activation_examples():
    np.testing.assert_array_equal(ad.softmax(np.zeros(5)).data, np.full(5, 0.2))
    assert ad.relu([-1.0, 2.0]).data.tolist() == [0.0, 2.0]
    x = np.random.default_rng(0).normal(size=(3, 7))
    assert ad.dropout(x, 0.02, False).data is not None
    np.testing.assert_array_equal(ad.dropout(x, 0.02, False).data, x)


def test_softmax_rows():
    x = np.random.default_rng(1).normal(scale=5, size=(200, 5))
    p = ad.softmax(x).data
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)
    assert np.all((p > 0) & (p < 1))


def test_dropout_expectation():
    rng = np.random.default_rng(2)
    out = ad.dropout(np.ones((100_000, 4)), 0.02, True, rng).data
    assert np.all(np.abs(out.mean(axis=0) - 1.0) < 0.01)


def test_linear_derivative():
    tape = ad.Tape()
    w = tape.param("w", np.array([[0.7]]))
    y = ad.total(ad.affine(w, np.zeros(1), np.array([[3.0]]), tape), tape)
    assert ad.backward(tape, y)["w"].tolist() == [[3.0]]


def test_softmax_nll_gradient():
    z = np.array([[0.3, -1.2, 2.0, 0.0, 0.5]])
    tape = ad.Tape()
    zt = tape.param("z", z)
    loss = ad.scale(ad.total(ad.pick(ad.log_softmax(zt, tape), [2], tape), tape), -1.0, tape)
    g = ad.backward(tape, loss)["z"]
    p = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(g, p - np.eye(5)[2], atol=1e-15)


def test_nonscalar_loss_rejected():
    tape = ad.Tape()
    x = tape.param("x", np.ones(3))
    with pytest.raises(ad.UsageError):
        ad.backward(tape, ad.relu(x, tape))


def test_numeric_error():
    with pytest.raises(ad.NumericError):
        ad.affine([[np.inf]], [0.0], [[1.0]])


@pytest.mark.parametrize("seed", range(5))
def test_op_gradients_match_finite_differences(seed):
    res = check_ops(seed)
    assert res.max_rel_error < 1e-4, res.worst


@pytest.mark.parametrize("grads, max_norm, expected", [
    ([3.0, 4.0], 10.0, [3.0, 4.0]),
    ([3.0, 4.0], 1.0, [0.6, 0.8]),
    ([0.0, 0.0], 1.0, [0.0, 0.0]),
])
def test_clip_global_norm(grads, max_norm, expected):
    out = ad.clip_global_norm({"g": np.array(grads)}, max_norm)
    np.testing.assert_allclose(out["g"], expected, rtol=1e-15)


def test_rmsprop_zero_grad_keeps_params():
    p = {"a": np.array([1.0, -2.0])}
    opt = ad.RMSProp(p, lr=0.1)
    opt.update(p, {"a": np.zeros(2)})
    assert p["a"].tolist() == [1.0, -2.0]


def test_rmsprop_sign_step():
    p = {"a": np.array([1.0, -2.0, 0.5])}
    opt = ad.RMSProp(p, lr=0.1, rho=0.0, eps=0.0)
    opt.update(p, {"a": np.array([3.0, -0.2, 1e-3])})
    np.testing.assert_allclose(p["a"], [0.9, -1.9, 0.4], rtol=1e-14)


def test_rmsprop_formula_and_key_check():
    p = {"a": np.array([1.0])}
    opt = ad.RMSProp(p, lr=0.01, rho=0.99, eps=0.1)
    opt.update(p, {"a": np.array([2.0])})
    g2 = 0.01 * 4.0
    assert opt.g2["a"][0] == pytest.approx(g2)
    assert p["a"][0] == pytest.approx(1.0 - 0.01 * 2.0 / np.sqrt(g2 + 0.1))
    with pytest.raises(ad.UsageError):
        opt.update(p, {"b": np.array([1.0])})


def _trajectory(order, seed=0):
    rng = np.random.default_rng(seed)
    p = {k: rng.normal(size=3) for k in ("a", "b", "c")}
    opt = ad.RMSProp(p, lr=0.05)
    for _ in range(10):
        g = {k: rng.normal(size=3) for k in ("a", "b", "c")}
        opt.update(p, {k: g[k] for k in order})
    return p


def test_rmsprop_deterministic_and_order_free():
    ref = _trajectory(("a", "b", "c"))
    for order in itertools.permutations("abc"):
        other = _trajectory(order)
        for k in ref:
            np.testing.assert_array_equal(ref[k], other[k])


def test_tensor_file_layout(tmp_path):
    tensors = {"b": np.array([1.5]), "a": np.arange(6, dtype=float).reshape(2, 3)}
    blob = ad.dump_tensors(tensors, ad.CHECKPOINT_HEADER)
    expected = (b"RNAC1\n"
                + (1).to_bytes(4, "little") + b"a" + (2).to_bytes(4, "little")
                + (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
                + np.arange(6, dtype="<f8").tobytes()
                + (1).to_bytes(4, "little") + b"b" + (1).to_bytes(4, "little")
                + (1).to_bytes(4, "little") + np.array([1.5], dtype="<f8").tobytes())
    assert blob == expected
    back = ad.parse_tensors(blob, ad.CHECKPOINT_HEADER)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    with pytest.raises(ad.FormatError):
        ad.parse_tensors(blob, ad.OPTIMIZER_HEADER)
    with pytest.raises(ad.FormatError):
        ad.parse_tensors(blob[:-3], ad.CHECKPOINT_HEADER)
