import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillplan.numerics import (
    ConfigError,
    ContractError,
    ParamStore,
    Tensor,
    TrainingError,
    adam_step,
    affine,
    avg_pool_time,
    concat,
    conv1d_temporal,
    finite_difference_check,
    group_norm,
    load_tensors,
    make_rng,
    matmul,
    mish,
    no_grad,
    restore_rng,
    rng_state,
    save_tensors,
    softmax,
    split,
    straight_through,
    tanh,
    upsample_time,
    where,
)

from .oracles import adam_scalar, conv1d_loops, group_norm_loops, mish_scalar


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -- autodiff core ------------------------------------------------------------------

def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = x * x + x * 3.0
    y.sum().backward()
    assert x.grad.tolist() == [7.0]


def test_broadcast_gradient_is_reduced():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.ones(4))
    (a * b).sum().backward()
    assert b.grad.tolist() == [3.0] * 4


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad


def test_backward_needs_scalar_seed():
    with pytest.raises(ContractError):
        (leaf([1.0, 2.0]) * 2.0).backward()


def test_deep_chain_does_not_recurse():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad.tolist() == [1.0]


def test_where_routes_gradient():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    where(np.array([True, False]), a, b).sum().backward()
    assert a.grad.tolist() == [1.0, 0.0]
    assert b.grad.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("seed", range(3))
def test_elementwise_and_matrix_ops_pass_gradcheck(seed):
    rng = make_rng(seed)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(2, 4, 5)))
    w = rng.normal(size=(2, 3, 5))

    def f():
        y = softmax(matmul(tanh(a), b), axis=-1) * Tensor(w)
        return concat([y, y[:, :1] ** 2], axis=1).sum()
    assert finite_difference_check(f, [a, b]) < 1e-6


# -- layers ---------------------------------------------------------------------------

def test_affine_examples():
    x = Tensor([[1.0, 2.0]])
    assert affine(x, Tensor(np.eye(2)), Tensor([0.0, 0.0])).data.tolist() == [[1.0, 2.0]]
    assert affine(x, Tensor(np.zeros((2, 2))), Tensor([3.0, 4.0])).data.tolist() == [[3.0, 4.0]]


def test_affine_weight_gradient():
    W = leaf(np.eye(2))
    affine(Tensor([[1.0, 2.0]]), W, Tensor([0.0, 0.0])).sum().backward()
    assert W.grad.tolist() == [[1.0, 1.0], [2.0, 2.0]]
    assert finite_difference_check(lambda: affine(Tensor([[1.0, 2.0]]), W, Tensor([0.0, 0.0])).sum(), [W]) < 1e-6


def test_affine_shape_mismatch():
    with pytest.raises(ContractError):
        affine(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))), Tensor(np.ones(2)))


def test_conv_zero_and_identity():
    x = np.random.default_rng(0).normal(size=(2, 1, 7))
    assert np.all(conv1d_temporal(Tensor(np.zeros((2, 3, 5))), Tensor(np.ones((4, 3, 3)))).data == 0)
    assert np.array_equal(conv1d_temporal(Tensor(x), Tensor(np.ones((1, 1, 1)))).data, x)


def test_conv_matches_loop_oracle():
    rng = make_rng(3)
    x, k, b = rng.normal(size=(2, 3, 9)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    out = conv1d_temporal(Tensor(x), Tensor(k), Tensor(b)).data
    assert out.shape == (2, 4, 9)
    assert np.allclose(out, conv1d_loops(x, k, b), atol=1e-12)


def test_conv_rejects_even_width_and_channel_mismatch():
    with pytest.raises(ConfigError):
        conv1d_temporal(Tensor(np.ones((1, 1, 4))), Tensor(np.ones((1, 1, 2))))
    with pytest.raises(ContractError):
        conv1d_temporal(Tensor(np.ones((1, 2, 4))), Tensor(np.ones((1, 3, 3))))


def test_group_norm_examples():
    one, zero = Tensor(np.ones(1)), Tensor(np.zeros(1))
    assert np.all(group_norm(Tensor(np.full((1, 1, 4), 3.0)), 1, one, zero).data == 0)
    out = group_norm(Tensor([[[1.0, -1.0]]]), 1, one, zero).data
    assert np.allclose(out, [[[1.0, -1.0]]], atol=1e-5)


def test_group_norm_statistics_and_oracle():
    rng = make_rng(4)
    x = rng.normal(2.0, 3.0, size=(3, 8, 6))
    out = group_norm(Tensor(x), 4, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    g = out.reshape(3, 4, -1)
    assert np.abs(g.mean(axis=-1)).max() < 1e-6
    assert np.abs(g.var(axis=-1) - 1).max() < 1e-3
    gain, bias = rng.normal(size=8), rng.normal(size=8)
    ref = group_norm_loops(x, 4, gain, bias)
    assert np.allclose(group_norm(Tensor(x), 4, Tensor(gain), Tensor(bias)).data, ref, atol=1e-12)


def test_group_norm_indivisible():
    with pytest.raises(ConfigError):
        group_norm(Tensor(np.ones((1, 6, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


def test_mish_values_and_gradient():
    assert mish(Tensor([0.0])).data[0] == 0.0
    assert abs(mish(Tensor([20.0])).data[0] - 20.0) < 1e-6
    xs = np.linspace(-6, 6, 25)
    assert np.allclose(mish(Tensor(xs)).data, [mish_scalar(v) for v in xs], atol=1e-14)
    x = leaf([0.5])
    mish(x).sum().backward()
    h = 1e-6
    num = (mish_scalar(0.5 + h) - mish_scalar(0.5 - h)) / (2 * h)
    assert abs(x.grad[0] - num) < 1e-6


def test_pool_and_upsample():
    x = Tensor(np.arange(8.0).reshape(1, 2, 4))
    assert avg_pool_time(x).data.tolist() == [[[0.5, 2.5], [4.5, 6.5]]]
    assert upsample_time(Tensor([[[1.0, 2.0]]])).data.tolist() == [[[1.0, 1.0, 2.0, 2.0]]]
    with pytest.raises(ConfigError):
        avg_pool_time(Tensor(np.ones((1, 1, 3))))


@pytest.mark.parametrize("seed", range(10))
def test_layer_primitives_gradcheck(seed):
    rng = make_rng(seed, 9)
    x, k, b = leaf(rng.normal(size=(2, 3, 8))), leaf(rng.normal(size=(4, 3, 3))), leaf(rng.normal(size=4))
    g, beta = leaf(rng.normal(size=4)), leaf(rng.normal(size=4))
    w = rng.normal(size=(2, 4, 8))

    def f():
        h = group_norm(conv1d_temporal(x, k, b), 2, g, beta)
        return (upsample_time(avg_pool_time(mish(h))) * Tensor(w)).sum()
    assert finite_difference_check(f, [x, k, b, g, beta]) < 1e-4


# -- straight-through ----------------------------------------------------------------

def test_straight_through_copies_gradient():
    zt = leaf([0.3, -0.7])
    out = straight_through(zt, np.array([1.0, 2.0]))
    assert out.data.tolist() == [1.0, 2.0]
    (out * out).sum().backward()
    assert zt.grad.tolist() == [2.0, 4.0]
    with pytest.raises(ContractError):
        straight_through(zt, np.zeros(3))


# -- Adam -----------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore()
    p = store.add("w", [1.0, -2.0])
    p.grad = np.zeros(2)
    adam_step(store, 0.1)
    assert p.data.tolist() == [1.0, -2.0]
    assert store.step == 1


def test_adam_first_step_is_signed_lr():
    store = ParamStore()
    p = store.add("w", [0.0, 0.0, 0.0])
    p.grad = np.array([3.0, -0.01, 250.0])
    adam_step(store, 0.01)
    assert np.allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-5)
    assert p.grad is None


def test_adam_matches_scalar_oracle():
    store = ParamStore()
    p = store.add("w", [0.7])
    grads = [0.3, -1.2, 0.05, 2.0, -0.4]
    for g in grads:
        p.grad = np.array([g])
        adam_step(store, 0.05)
    assert abs(p.data[0] - adam_scalar(0.7, grads, 0.05)) < 1e-14


def test_adam_quadratic_bowl():
    store = ParamStore()
    w = store.add("w", [3.0])
    for _ in range(200):
        (w * w).sum().backward()
        adam_step(store, 0.1)
    assert abs(w.data[0]) < 1e-2


def test_adam_rejects_nonfinite_gradient():
    store = ParamStore()
    p = store.add("layer.w", [1.0])
    p.grad = np.array([np.nan])
    with pytest.raises(TrainingError, match="layer.w"):
        adam_step(store, 0.1)


# -- finite differences -------------------------------------------------------------------

def test_finite_difference_linear_and_constant():
    w = leaf([1.0, -2.0, 0.5])
    assert finite_difference_check(lambda: (w * 3.0).sum(), [w]) < 1e-9
    assert finite_difference_check(lambda: Tensor(4.0) + (w * 0.0).sum(), [w]) == 0.0


# -- serialisation --------------------------------------------------------------------------

def test_tensor_file_roundtrip(tmp_path):
    arrays = {"a.w": np.arange(6.0).reshape(2, 3), "scalar": np.array(3.5), "empty": np.zeros((0, 4))}
    path = tmp_path / "t.skdf"
    save_tensors(path, arrays)
    blob = path.read_bytes()
    assert blob[:4] == b"SKDF"
    back = load_tensors(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape and np.array_equal(back[k], arrays[k])


def test_tensor_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_tensors(path)


def test_store_load_checks_shapes():
    store = ParamStore()
    store.add("w", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        store.load_arrays({"w": np.zeros(3)})
    with pytest.raises(KeyError):
        store.load_arrays({})


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12))
def test_tensor_file_roundtrip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("p") / "x.skdf"
    save_tensors(path, {"v": np.array(values)})
    assert load_tensors(path)["v"].tolist() == values


# -- random streams -----------------------------------------------------------------------

def test_rng_streams_are_reproducible_and_distinct():
    assert make_rng(5, 1).random() == make_rng(5, 1).random()
    assert make_rng(5, 1).random() != make_rng(5, 2).random()
    kids = split(make_rng(1), 3)
    assert len({k.random() for k in kids}) == 3


def test_rng_state_roundtrip():
    rng = make_rng(9)
    rng.normal(size=5)
    twin = restore_rng(rng_state(rng))
    assert np.array_equal(rng.normal(size=7), twin.normal(size=7))


def test_mish_large_negative_is_finite():
    assert math.isfinite(mish(Tensor([-800.0])).data[0])
