"""Adam against an independent numpy oracle and its documented edge cases."""

import numpy as np
import pytest

from invgraph.autodiff import Tensor
from invgraph.errors import ContractError
from invgraph.optim import Adam


def reference_adam(x0, grads, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook update sequence, written independently of the product code."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x


def test_matches_reference_over_random_sequence():
    rng = np.random.default_rng(0)
    for shape in [(3,), (2, 4), (1,)]:
        x0 = rng.normal(size=shape)
        grad_seq = [rng.normal(size=shape) for _ in range(7)]
        p = Tensor(x0.copy(), requires_grad=True)
        opt = Adam([("p", p)], lr=0.01)
        for g in grad_seq:
            opt.step({p: g})
        want = reference_adam(x0, grad_seq, lr=0.01)
        np.testing.assert_allclose(p.data, want, rtol=0, atol=1e-15)


def test_first_step_size_is_about_lr():
    # bias correction makes the first update lr * g/(|g| + eps) = ~lr * sign(g)
    p = Tensor(np.zeros(4), requires_grad=True)
    opt = Adam([("p", p)], lr=0.05)
    g = np.array([3.0, -0.2, 1e-3, -7.0])
    opt.step({p: g})
    np.testing.assert_allclose(p.data, -0.05 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_converges_on_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.1)
    for _ in range(500):
        opt.step({p: 2.0 * p.data})  # d/dx of |x|^2
    assert np.abs(p.data).max() < 1e-3


def test_unused_parameter_untouched_and_moments_frozen():
    p = Tensor(np.ones(3), requires_grad=True)
    q = Tensor(np.ones(3) * 2.0, requires_grad=True)
    opt = Adam([("p", p), ("q", q)], lr=0.1)
    opt.step({p: np.ones(3)})
    opt.step({p: np.ones(3)})
    np.testing.assert_array_equal(q.data, np.ones(3) * 2.0)
    np.testing.assert_array_equal(opt._m["q"], np.zeros(3))
    np.testing.assert_array_equal(opt._v["q"], np.zeros(3))
    # the skipped parameter later resumes as if time had not passed for its moments
    assert opt.t == 2


def test_shared_step_counter_still_matches_reference_after_skip():
    # a parameter first updated at t=2 sees bias correction for t=2; mirror that
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.01)
    opt.step({})  # p absent: t advances, moments untouched
    g = np.array([0.5])
    opt.step({p: g})
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_hat = ((1 - beta1) * g) / (1 - beta1**2)
    v_hat = ((1 - beta2) * g * g) / (1 - beta2**2)
    want = 1.0 - 0.01 * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.data, want, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "kw",
    [
        {"lr": 0.0},
        {"lr": -1.0},
        {"beta1": 1.0},
        {"beta2": -0.1},
        {"eps": 0.0},
    ],
)
def test_rejects_bad_hyperparameters(kw):
    p = Tensor(np.ones(1), requires_grad=True)
    with pytest.raises(ContractError):
        Adam([("p", p)], **kw)


def test_rejects_empty_parameter_list():
    with pytest.raises(ContractError):
        Adam([])
