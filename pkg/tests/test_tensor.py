import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rhrnet import tensor as tn
from rhrnet.errors import ContractError, DimensionError
from rhrnet.tensor import Tensor


def test_matmul_identity_is_exact(rng):
    A = rng.uniform(-1, 1, (3, 3))
    I = np.eye(3)
    assert np.array_equal(tn.matmul(I, A).data, A)
    assert np.array_equal(tn.matmul(A, I).data, A)


def test_matmul_hand_example():
    out = tn.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0], [6]]))
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_elementwise_basics():
    assert tn.elementwise("sigmoid", np.array([0.0])).data[0] == 0.5
    assert tn.elementwise("tanh", np.array([0.0])).data[0] == 0.0
    np.testing.assert_array_equal(tn.elementwise("add", np.array([1.0, 2]), np.array([3.0, 4])).data,
                                  [4, 6])
    with pytest.raises(DimensionError):
        tn.elementwise("mul", np.zeros(2), np.zeros(3))
    with pytest.raises(ContractError):
        tn.elementwise("relu", np.zeros(2))


def test_sigmoid_stays_finite_for_extreme_inputs():
    out = tn.sigmoid(np.array([-1e4, 1e4], dtype=np.float32)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_concat_features():
    np.testing.assert_array_equal(tn.concat_features(np.array([[1.0]]), np.array([[2.0]])).data,
                                  [[1, 2]])
    assert tn.concat_features(np.zeros((4, 2)), np.zeros((4, 3))).shape == (4, 5)
    with pytest.raises(DimensionError):
        tn.concat_features(np.zeros((2, 1)), np.zeros((3, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.data())
def test_concat_then_split_restores_inputs(T, f1, f2, data):
    a = data.draw(arrays(np.float64, (T, f1), elements=st.floats(-1e6, 1e6)))
    b = data.draw(arrays(np.float64, (T, f2), elements=st.floats(-1e6, 1e6)))
    left, right = tn.split_features(tn.concat_features(a, b), f1)
    assert left.data.tobytes() == a.tobytes()
    assert right.data.tobytes() == b.tobytes()


def test_default_precision_is_float32_and_float64_is_kept():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


def test_gradient_of_sum_of_squares():
    g = tn.gradients(lambda p: tn.total(tn.mul(p["p"], p["p"])), {"p": np.array([1.0, 2.0])})
    np.testing.assert_allclose(g["p"], [2.0, 4.0])


def test_gradient_of_constant_is_zero():
    g = tn.gradients(lambda p: tn.total(Tensor(np.ones(3))),
                     {"p": np.array([1.0, 2.0]), "q": np.zeros((2, 2))})
    assert not g["p"].any() and not g["q"].any()


def test_non_scalar_loss_is_rejected():
    with pytest.raises(ContractError):
        tn.gradients(lambda p: tn.mul(p["p"], p["p"]), {"p": np.array([1.0, 2.0])})


def test_shared_subexpression_accumulates():
    # y = (a*a) + (a*a) reuses the same node twice
    def loss(p):
        sq = tn.mul(p["a"], p["a"])
        return tn.total(tn.add(sq, sq))
    g = tn.gradients(loss, {"a": np.array([3.0])})
    np.testing.assert_allclose(g["a"], [12.0])


OPS = {
    "matmul": lambda p: tn.matmul(p["a"], p["b"]),
    "add": lambda p: tn.add(p["a"], tn.transpose(p["b"])),
    "sub": lambda p: tn.sub(p["a"], tn.transpose(p["b"])),
    "mul": lambda p: tn.mul(p["a"], tn.transpose(p["b"])),
    "sigmoid": lambda p: tn.sigmoid(p["a"]),
    "tanh": lambda p: tn.tanh(p["a"]),
    "add_bias": lambda p: tn.add_bias(p["a"], p["c"]),
    "concat": lambda p: tn.concat_features(p["a"], tn.transpose(p["b"])),
    "slice": lambda p: tn.slice_features(p["a"], 1, 3),
    "reshape": lambda p: tn.reshape(p["a"], (6, 2)),
    "flip": lambda p: tn.flip_time(p["a"]),
    "mean": lambda p: tn.mean(p["a"]),
    "scale": lambda p: tn.scale(p["a"], -2.5),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_matches_finite_differences(name):
    rng = np.random.default_rng(7)
    params = {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, (4, 3)),
              "c": rng.uniform(-1, 1, 4)}
    weights = Tensor(rng.uniform(-1, 1, OPS[name]({k: Tensor(v) for k, v in params.items()}).shape))

    def loss(p):
        out = OPS[name](p)
        return tn.total(tn.mul(out, weights)) if out.ndim else out

    ana = tn.gradients(loss, params, dtype=np.float64)
    num = tn.numeric_gradients(loss, params)
    for k in params:
        np.testing.assert_allclose(ana[k], num[k], rtol=1e-5, atol=1e-9)


def test_ops_do_not_mutate_inputs(rng):
    a = rng.uniform(-1, 1, (3, 4))
    before = a.copy()
    tn.gradients(lambda p: tn.total(tn.tanh(tn.flip_time(p["a"]))), {"a": a})
    assert np.array_equal(a, before)
