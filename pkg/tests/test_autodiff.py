import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from advae import autodiff as ad
from advae.errors import DomainError, NumericError, ShapeError
from advae.oracles import central_difference


def leaf(values):
    return ad.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestElementwise:
    def test_exp_zero(self):
        assert ad.exp(ad.Tensor([0.0])).data.tolist() == [1.0]

    def test_log_exp_inverse(self):
        np.testing.assert_allclose(ad.log(ad.exp(ad.Tensor([1.5]))).data, [1.5], rtol=0, atol=1e-15)

    def test_mul_grad_matches_central_difference(self):
        a, b = leaf([2.0]), leaf([3.0])
        ad.backward(ad.sum(a * b))
        assert a.grad.tolist() == [3.0]
        numeric = central_difference(lambda t: t * 3.0, 2.0, 1e-5)
        assert abs(numeric - a.grad[0]) < 1e-6

    def test_log_nonpositive_reports_index(self):
        with pytest.raises(DomainError) as info:
            ad.log(ad.Tensor([[1.0, 2.0], [0.0, 3.0]]))
        assert info.value.index == (1, 0)

    def test_div_by_zero(self):
        with pytest.raises(DomainError):
            ad.Tensor([1.0, 2.0]) / ad.Tensor([1.0, 0.0])

    def test_softplus_large_input_is_finite(self):
        out = ad.softplus(ad.Tensor([800.0, -800.0]))
        np.testing.assert_allclose(out.data, [800.0, 0.0], atol=1e-300)

    def test_broadcast_suffix_rule(self):
        assert ad.broadcast_shape((4, 3), (3,)) == (4, 3)
        assert ad.broadcast_shape((3,), (4, 3)) == (4, 3)
        with pytest.raises(ShapeError):
            ad.broadcast_shape((4, 3), (4,))

    def test_broadcast_grad_sums_over_leading_axes(self):
        a, b = leaf(np.ones((4, 3))), leaf([1.0, 2.0, 3.0])
        ad.backward(ad.sum(a * b))
        np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])
        np.testing.assert_array_equal(a.grad, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_rejects_empty_extent(self):
        with pytest.raises(ShapeError):
            ad.Tensor(np.zeros((0, 2)))


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor(m)).data, m)

    def test_hand_expansion(self):
        out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))

    def test_grad_of_sum_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
        ad.backward(ad.sum(ad.matmul(a, b)))
        for idx in np.ndindex(a.shape):
            def f(t, idx=idx):
                m = a.data.copy()
                m[idx] = t
                return (m @ b.data).sum()
            assert abs(central_difference(f, a.data[idx], 1e-5) - a.grad[idx]) < 1e-6

    def test_linear_equals_matmul_plus_bias(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.standard_normal((5, 3)), rng.standard_normal((2, 3)), rng.standard_normal(2)
        np.testing.assert_allclose(ad.linear(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data,
                                   x @ w.T + b, rtol=1e-14)


class TestReductions:
    def test_mean(self):
        assert ad.mean(ad.Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_empty_slice_is_an_error(self):
        with pytest.raises(ShapeError):
            ad.sum(ad.columns(ad.Tensor(np.ones((2, 3))), 2, 2))

    def test_mean_grad(self):
        a = leaf([1.0, -2.0, 0.5, 4.0])
        ad.backward(ad.mean(a))
        np.testing.assert_array_equal(a.grad, [0.25] * 4)
        for i in range(4):
            def f(t, i=i):
                v = a.data.copy()
                v[i] = t
                return v.mean()
            assert abs(central_difference(f, a.data[i], 1e-5) - 0.25) < 1e-9

    def test_axis_reduction_shapes(self):
        a = ad.Tensor(np.ones((3, 4)))
        assert ad.sum(a, axis=0).shape == (4,)
        assert ad.mean(a, axis=-1).shape == (3,)


class TestBackward:
    def test_leaf_loss(self):
        x = leaf([2.5])
        ad.backward(x)
        assert x.grad.tolist() == [1.0]

    def test_accumulates_without_reset(self):
        x = leaf([2.0])
        ad.backward(ad.sum(x * x))
        ad.backward(ad.sum(x * x))
        assert x.grad.tolist() == [8.0]
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            ad.backward(leaf([1.0, 2.0]) * 2.0)

    def test_shared_subexpression(self):
        x = leaf([3.0])
        y = x * x
        ad.backward(ad.sum(y + y))
        assert x.grad.tolist() == [12.0]

    def test_detach_blocks_gradient(self):
        x = leaf([3.0])
        ad.backward(ad.sum(x * x.detach()))
        assert x.grad.tolist() == [3.0]

    def test_requires_grad_is_fixed_when_node_is_built(self):
        w, x = leaf([2.0]), leaf([3.0])
        w.requires_grad = False
        y = ad.sum(w * x)
        w.requires_grad = True
        ad.backward(y)
        assert w.grad is None and x.grad.tolist() == [2.0]

    def test_composite_exp_log(self):
        rng = np.random.default_rng(2)
        x, y = leaf(rng.uniform(0.5, 2.0, 5)), leaf(rng.uniform(-1.0, 1.0, 5))
        report = ad.grad_check(lambda: ad.sum(ad.exp(ad.log(x) * y)), [x, y])
        assert report.max_rel_error < 1e-6

    def test_graph_replay(self):
        x = leaf([0.3, -1.2])
        out = ad.sum(ad.tanh(x) * ad.exp(x))
        g = ad.Graph.trace(out)
        assert g.nodes[-1] is out
        ops = [n.op for n in g.nodes if n.op]
        assert sorted(ops[:2]) == ["exp", "tanh"] and ops[2:] == ["mul", "sum"]
        np.testing.assert_array_equal(g.replay(), out.data)


class TestGradCheck:
    def test_square(self):
        x = leaf([3.0])
        report = ad.grad_check(lambda: ad.sum(x * x), [x])
        assert report.worst.analytic == 6.0
        assert report.max_rel_error < 1e-8

    def test_negative_control_fails(self):
        x = leaf([0.5, 1.5])
        with ad.corrupted_rule("mul"):
            report = ad.grad_check(lambda: ad.sum(x * x), [x])
        assert not report.passed
        assert report.max_rel_error == pytest.approx(1 / 3, rel=1e-6)
        assert ad.grad_check(lambda: ad.sum(x * x), [x]).passed

    def test_non_finite_value_raises_with_location(self):
        x = leaf([0.0])
        with pytest.raises(NumericError) as info:
            ad.grad_check(lambda: ad.sum(ad.exp(x * 1e6 + 710.0)), [x])
        assert "param" in info.value.context

    def test_relative_error_floor(self):
        assert ad.relative_error(0.0, 0.0) == 0.0
        assert ad.relative_error(0.0, 1e-9) == pytest.approx(1e-3)
        assert ad.relative_error(2.0, 1.0) == 0.5

    def test_max_coords_subsamples(self):
        x = leaf(np.arange(1.0, 11.0))
        report = ad.grad_check(lambda: ad.sum(x * x), [x], max_coords=3)
        assert report.params[0].checked == 3


finite = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=4), elements=finite),
       st.sampled_from(["add", "sub", "mul"]))
def test_binary_rules_match_finite_differences(a, op):
    rng = np.random.default_rng(zlib.crc32(a.tobytes()))
    ta, tb = leaf(a), leaf(rng.uniform(-2.0, 2.0, a.shape[-1:]))
    w = rng.uniform(-1.0, 1.0, a.shape)
    report = ad.grad_check(lambda: ad.sum(ad.elementwise(op, ta, tb) * w), [ta, tb])
    assert report.passed, report.worst


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=4), elements=finite),
       st.sampled_from(["exp", "tanh", "softplus", "neg"]))
def test_unary_rules_match_finite_differences(a, op):
    t = leaf(a)
    report = ad.grad_check(lambda: ad.sum(ad.elementwise(op, t) * 0.7), [t])
    assert report.passed, report.worst


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(0.05, 5.0)))
def test_log_rule(a):
    t = leaf(a)
    assert ad.grad_check(lambda: ad.sum(ad.log(t)), [t]).passed


def test_relu_gradient_is_step():
    x = leaf([-1.0, 0.0, 2.0])
    ad.backward(ad.sum(ad.relu(x)))
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_concat_and_columns_roundtrip():
    a = leaf(np.arange(6.0).reshape(2, 3))
    b = leaf(np.ones((2, 1)))
    c = ad.concat([ad.columns(a, 0, 2), b])
    assert c.shape == (2, 3)
    ad.backward(ad.sum(c * 2.0))
    np.testing.assert_array_equal(a.grad, [[2.0, 2.0, 0.0]] * 2)
    np.testing.assert_array_equal(b.grad, [[2.0]] * 2)


def test_reshape_gradient():
    a = leaf(np.arange(6.0))
    ad.backward(ad.sum(ad.reshape(a, (2, 3)) * np.arange(6.0).reshape(2, 3)))
    np.testing.assert_array_equal(a.grad, np.arange(6.0))


def test_softplus_matches_log1p_exp():
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(ad.softplus(ad.Tensor(x)).data, np.log1p(np.exp(x)), rtol=1e-14)
    assert math.isclose(ad.softplus(ad.Tensor([0.0])).item(), math.log(2.0))
