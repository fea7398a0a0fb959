import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vulcontrast import autodiff as ad


def p(data, name="p"):
    return ad.parameter(np.asarray(data, dtype=np.float64), name)


class TestForward:
    def test_row_l2_normalize_unit(self):
        out = ad.row_l2_normalize(p([[3.0, 4.0]]))
        assert np.allclose(out.data, [[0.6, 0.8]])

    def test_sigmoid_symmetry_point(self):
        assert ad.sigmoid(p([[0.0]])).item() == 0.5

    def test_row_softmax_uniform(self):
        out = ad.row_softmax(p([[1.0, 1.0, 1.0]]))
        assert np.allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_matmul_shape_error_names_primitive(self):
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(p(np.ones((2, 3))), p(np.ones((2, 3))))

    def test_add_shape_error(self):
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(p(np.ones((2, 3))), p(np.ones((3, 2))))

    def test_non_finite_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            ad.exp(p([[1000.0]]))

    def test_forward_deterministic(self):
        x = np.random.default_rng(0).normal(size=(4, 4))
        a = ad.row_softmax(ad.Tensor(x)).data
        b = ad.row_softmax(ad.Tensor(x)).data
        assert np.array_equal(a, b)


class TestBackward:
    def test_sum_of_squares(self):
        x = p([[1.0, 2.0, 3.0]])
        ad.backward(ad.sum_all(ad.mul(x, x)))
        assert np.allclose(x.grad, [[2.0, 4.0, 6.0]])

    def test_mean_gradient(self):
        x = p([[1.0, 2.0, 3.0, 4.0]])
        ad.backward(ad.mean_all(x))
        assert np.allclose(x.grad, [[0.25] * 4])

    def test_logsumexp_gradient_is_softmax(self):
        x = p([[0.0, 0.0]])
        ad.backward(ad.row_logsumexp(x))
        assert np.allclose(x.grad, [[0.5, 0.5]])

    def test_loss_must_be_scalar(self):
        with pytest.raises(ad.ShapeError, match="scalar"):
            ad.backward(p([[1.0, 2.0]]))

    def test_linearity_of_two_terms(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(3, 3))
        x = p(data.copy())
        ad.backward(ad.add(ad.sum_all(ad.mul(x, x)), ad.mean_all(ad.exp(x))))
        combined = x.grad.copy()

        x1 = p(data.copy())
        ad.backward(ad.sum_all(ad.mul(x1, x1)))
        x2 = p(data.copy())
        ad.backward(ad.mean_all(ad.exp(x2)))
        assert np.allclose(combined, x1.grad + x2.grad, atol=1e-12)

    def test_gradient_accumulates_across_backward_calls(self):
        x = p([[1.0, 2.0]])
        ad.backward(ad.sum_all(x))
        ad.backward(ad.sum_all(x))
        assert np.allclose(x.grad, [[2.0, 2.0]])


PRIMITIVE_CASES = {
    "matmul": lambda x, y: ad.sum_all(ad.matmul(x, y)),
    "add": lambda x, y: ad.sum_all(ad.mul(ad.add(x, y), ad.add(x, y))),
    "sub": lambda x, y: ad.sum_all(ad.mul(ad.sub(x, y), ad.sub(x, y))),
    "mul": lambda x, y: ad.sum_all(ad.mul(x, y)),
    "scale": lambda x, y: ad.sum_all(ad.scale(ad.mul(x, y), 1.7)),
    "exp": lambda x, y: ad.sum_all(ad.exp(x)),
    "log": lambda x, y: ad.sum_all(ad.log(ad.add(ad.mul(x, x),
                                                 ad.exp(y)))),
    "transpose": lambda x, y: ad.sum_all(ad.matmul(ad.transpose(x), y)),
    "row-softmax": lambda x, y: ad.sum_all(ad.mul(ad.row_softmax(x), y)),
    "row-log-sum-exp": lambda x, y: ad.sum_all(ad.row_logsumexp(x)),
    "row-l2-normalize": lambda x, y: ad.sum_all(
        ad.mul(ad.row_l2_normalize(x), y)),
    "mean-all": lambda x, y: ad.mean_all(ad.mul(x, y)),
    "sum-all": lambda x, y: ad.sum_all(x),
    "sqdist-rowwise": lambda x, y: ad.sum_all(ad.rowwise_sqdist(x, y)),
    "sigmoid": lambda x, y: ad.sum_all(ad.sigmoid(x)),
    "gelu": lambda x, y: ad.sum_all(ad.gelu(x)),
    "mean-pool-rows": lambda x, y: ad.sum_all(
        ad.mul(ad.mean_pool_rows(x), ad.mean_pool_rows(y))),
    "concat-rows": lambda x, y: ad.sum_all(
        ad.mul(ad.concat_rows([x, y]), ad.concat_rows([y, x]))),
    "clamp": lambda x, y: ad.sum_all(ad.clamp(x, -0.9, 0.9)),
}


class TestGradCheck:
    @pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
    def test_primitive_grad_check(self, name):
        rng = np.random.default_rng(hash(name) % 2 ** 31)
        x = p(rng.uniform(-2, 2, size=(3, 3)), "x")
        y = p(rng.uniform(-2, 2, size=(3, 3)), "y")
        fn = PRIMITIVE_CASES[name]
        err = ad.grad_check(lambda: fn(x, y), [x, y], step=1e-4)
        assert err < 1e-4, f"{name}: max relative error {err}"

    def test_embedding_lookup_gradient(self):
        table = p(np.random.default_rng(5).normal(size=(6, 4)), "table")
        ids = [0, 2, 2, 5]
        err = ad.grad_check(
            lambda: ad.sum_all(ad.mul(ad.embedding_lookup(table, ids),
                                      ad.embedding_lookup(table, ids))),
            [table], step=1e-4)
        assert err < 1e-4

    def test_sigmoid_sum_grad_check(self):
        x = p(np.random.default_rng(7).uniform(-2, 2, size=(2, 5)), "x")
        err = ad.grad_check(lambda: ad.sum_all(ad.sigmoid(x)), [x],
                            step=1e-4)
        assert err < 1e-4

    def test_constant_function_zero_error(self):
        x = p([[1.0, 2.0]], "x")
        c = ad.constant([[5.0]])
        err = ad.grad_check(lambda: ad.sum_all(c), [x], step=1e-4)
        assert err == 0.0

    def test_rejects_nonpositive_step(self):
        x = p([[1.0]], "x")
        with pytest.raises(ValueError):
            ad.grad_check(lambda: ad.sum_all(x), [x], step=0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6))
def test_softmax_rows_sum_to_one(values):
    out = ad.row_softmax(ad.Tensor(np.array([values])))
    assert abs(out.data.sum() - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6).filter(
    lambda v: sum(x * x for x in v) > 1e-6))
def test_l2_normalize_rows_unit_norm(values):
    out = ad.row_l2_normalize(ad.Tensor(np.array([values])))
    assert abs(np.linalg.norm(out.data) - 1.0) < 1e-12
