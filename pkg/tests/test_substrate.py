import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hignn.substrate import (DimensionError, InvalidMaskError, ParamStore, backprop, cross_entropy_loss,
                             derive_rng, finite_difference_check, glorot_, gradient_reverse, masked_softmax,
                             matmul, mse_loss, tanh_act)


def t(x, grad=False):
    return torch.tensor(x, dtype=torch.float64, requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        assert torch.equal(matmul(torch.eye(2, dtype=torch.float64), t([[1., 2.], [3., 4.]])), t([[1., 2.], [3., 4.]]))

    def test_hand_value(self):
        assert matmul(t([[1., 2.]]), t([[3.], [4.]])).item() == 11.0

    def test_zero(self):
        assert torch.equal(matmul(torch.zeros(2, 3), torch.randn(3, 2)), torch.zeros(2, 2))

    def test_shape_error_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(torch.zeros(2, 3), torch.zeros(2, 2))

    def test_gradients(self):
        a, b = t([[1., 2.], [3., 4.]], True), t([[5.], [6.]], True)
        g = torch.tensor([[1.], [-1.]])
        (matmul(a, b) * g).sum().backward()
        assert torch.allclose(a.grad, g @ b.detach().T)
        assert torch.allclose(b.grad, a.detach().T @ g)


class TestTanh:
    def test_zero(self):
        assert tanh_act(t(0.0)).item() == 0.0

    def test_saturation(self):
        x = t(20.0, True)
        y = tanh_act(x)
        y.backward()
        assert abs(y.item() - 1.0) < 1e-8 and abs(x.grad.item()) < 1e-8

    def test_one(self):
        assert tanh_act(t(1.0)).item() == pytest.approx(0.7615941559, abs=1e-10)


class TestMaskedSoftmax:
    def test_uniform(self):
        out = masked_softmax(t([2.5, 2.5, 2.5]), torch.tensor([True, True, True]))
        assert torch.allclose(out, torch.full((3,), 1 / 3))

    def test_closed_form(self):
        out = masked_softmax(t([0.0, math.log(3)]), torch.tensor([True, True]))
        assert torch.allclose(out, t([0.25, 0.75]), atol=1e-15)

    def test_single_survivor(self):
        out = masked_softmax(t([5.0, 9.0]), torch.tensor([True, False]))
        assert out.tolist() == [1.0, 0.0]

    def test_empty_mask(self):
        with pytest.raises(InvalidMaskError):
            masked_softmax(t([1.0, 2.0]), torch.tensor([False, False]))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.data())
    def test_normalised(self, scores, data):
        mask = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
        mask[data.draw(st.integers(0, len(scores) - 1))] = True
        out = masked_softmax(t(scores), torch.tensor(mask))
        m = torch.tensor(mask)
        assert abs(out[m].sum().item() - 1.0) < 1e-6
        assert (out[~m] == 0).all() and (out[m] > 0).all()


class TestLosses:
    def test_mse_zero(self):
        assert mse_loss(t([1., 2.]), t([1., 2.])).item() == 0.0

    def test_mse_value_and_grad(self):
        p = t([1., 3.], True)
        loss = mse_loss(p, t([0., 1.]))
        assert loss.item() == 2.5
        loss.backward()
        assert p.grad.tolist() == [1.0, 2.0]

    def test_mse_shape(self):
        with pytest.raises(DimensionError):
            mse_loss(t([1., 2.]), t([1.]))

    def test_ce_uniform(self):
        assert cross_entropy_loss(torch.zeros(5), 3).item() == pytest.approx(math.log(5))

    def test_ce_certain(self):
        assert cross_entropy_loss(t([10., -10.]), 0).item() < 1e-8

    def test_ce_closed_form(self):
        assert cross_entropy_loss(t([0., math.log(3)]), 1).item() == pytest.approx(-math.log(0.75), abs=1e-7)

    def test_ce_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(torch.zeros(3), 3)


class TestGradientReverse:
    def test_forward_identity(self):
        x = torch.randn(4, 3)
        assert torch.equal(gradient_reverse(x, 1.0), x)

    def test_backward_negates(self):
        x = torch.randn(3, requires_grad=True)
        g = torch.randn(3)
        gradient_reverse(x, 1.0).backward(g)
        assert torch.equal(x.grad, -g)

    def test_lambda_zero(self):
        x = torch.randn(3, requires_grad=True)
        gradient_reverse(x, 0.0).backward(torch.randn(3))
        assert (x.grad == 0).all()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 3.0))
    def test_scaled_vs_identity_path(self, seed, lam):
        torch.manual_seed(seed)
        w = torch.randn(4, 3, requires_grad=True)
        v = torch.randn(3, 2)
        x = torch.randn(5, 4)

        def run(reverse):
            w.grad = None
            h = torch.tanh(x @ w)
            h = gradient_reverse(h, lam) if reverse else h
            (torch.sin(h @ v) ** 2).sum().backward()
            return w.grad.clone()

        assert torch.allclose(run(True), -lam * run(False), atol=1e-12, rtol=0)


class TestBackprop:
    def test_chain_rule(self):
        w = t(1.0, True)
        backprop(mse_loss((w * 2.0).view(1), t([0.0])))
        assert w.grad.item() == 8.0

    def test_constant(self):
        w = t(1.0, True)
        backprop(w * 0.0 + 3.0)
        assert w.grad.item() == 0.0

    def test_reversal_flips_sign(self):
        grads = []
        for lam, rev in ((1.0, True), (None, False)):
            w = t(1.0, True)
            y = w * 2.0
            y = gradient_reverse(y, lam) if rev else y
            backprop(y)
            grads.append(w.grad.item())
        assert grads[0] == -grads[1] == -2.0

    def test_accumulates(self):
        w = t(1.0, True)
        backprop(w * 3.0)
        backprop(w * 3.0)
        assert w.grad.item() == 6.0

    def test_non_scalar(self):
        with pytest.raises(DimensionError):
            backprop(torch.ones(2, requires_grad=True) * 2)


class TestFiniteDifference:
    def test_sum(self):
        p = {"a": torch.randn(3, 2, requires_grad=True), "b": torch.randn(4, requires_grad=True)}
        rep = finite_difference_check(lambda: p["a"].sum() + p["b"].sum(), p)
        assert rep.passed and rep.worst < 1e-9

    def test_two_layer_tanh(self):
        rng = derive_rng(0, "fd")
        p = {k: torch.tensor(rng.normal(size=s), requires_grad=True)
             for k, s in {"w1": (3, 5), "w2": (5, 2)}.items()}
        x = torch.tensor(rng.normal(size=(4, 3)))
        y = torch.tensor(rng.normal(size=(4, 2)))
        rep = finite_difference_check(lambda: mse_loss(torch.tanh(x @ p["w1"]) @ p["w2"], y), p)
        assert rep.passed, rep.max_rel_error

    def test_through_masked_softmax(self):
        s = torch.randn(6, requires_grad=True)
        target = torch.randn(6)
        mask = torch.tensor([True, False, True, True, False, True])
        rep = finite_difference_check(lambda: ((masked_softmax(s, mask) - target) ** 2).sum(), {"s": s})
        assert rep.passed, rep.max_rel_error

    def test_nondeterminism_flagged(self):
        p = {"a": torch.randn(2, requires_grad=True)}
        counter = iter(range(100))
        rep = finite_difference_check(lambda: p["a"].sum() + next(counter), p)
        assert rep.nondeterministic and not rep.passed

    def test_detects_wrong_gradient(self):
        class Bad(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x ** 2

            @staticmethod
            def backward(ctx, g):
                return g

        p = {"a": torch.tensor([1.5, -2.0], requires_grad=True)}
        assert not finite_difference_check(lambda: Bad.apply(p["a"]).sum(), p).passed


def test_glorot_bounds_and_determinism():
    a = torch.empty(30, 10)
    b = torch.empty(30, 10)
    glorot_(a, derive_rng(5, "x"))
    glorot_(b, derive_rng(5, "x"))
    assert torch.equal(a, b)
    assert a.abs().max().item() <= math.sqrt(6 / 40)
    z = torch.ones(4)
    glorot_(z, derive_rng(5, "y"))
    assert (z == 0).all()


def test_param_store_order_and_mismatch():
    store = ParamStore({"b": torch.zeros(2), "a": torch.zeros(3)})
    assert list(store) == ["a", "b"]
    m = torch.nn.Linear(2, 2)
    with pytest.raises(DimensionError, match="weight"):
        ParamStore({"weight": torch.zeros(3, 2), "bias": torch.zeros(2)}).load_into(m)


def test_derive_rng_independent_streams():
    a = derive_rng(1, "a").normal(size=5)
    b = derive_rng(1, "b").normal(size=5)
    assert not np.allclose(a, b)
    assert np.array_equal(a, derive_rng(1, "a").normal(size=5))
