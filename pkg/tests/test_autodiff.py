import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneesight import autodiff as ad


def numgrad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_broadcast_add_and_mul_gradients(rng):
    A = rng.normal(size=(4, 3))
    b = rng.normal(size=3)

    def f(A_, b_):
        return ((ad.Var(A_) * ad.Var(b_) + ad.Var(b_)) * ad.Var(A_)).sum()

    va, vb = ad.Var(A), ad.Var(b)
    out = ((va * vb + vb) * va).sum()
    out.backward()
    np.testing.assert_allclose(va.grad, numgrad(lambda a: float(f(a, b).value), A), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(vb.grad, numgrad(lambda bb: float(f(A, bb).value), b), rtol=1e-6, atol=1e-8)


def test_matmul_and_elementwise_functions(rng):
    X = rng.normal(size=(5, 2))
    W = rng.normal(size=(2, 3))

    def f(W_):
        z = ad.Var(X) @ ad.Var(W_)
        h = ad.concat([ad.tanh(z), ad.sin(z), ad.cos(z), ad.exp(z * 0.1)], axis=1)
        return ad.square(h).mean()

    vw = ad.Var(W)
    z = ad.Var(X) @ vw
    h = ad.concat([ad.tanh(z), ad.sin(z), ad.cos(z), ad.exp(z * 0.1)], axis=1)
    loss = ad.square(h).mean()
    loss.backward()
    np.testing.assert_allclose(vw.grad, numgrad(lambda w: float(f(w).value), W), rtol=1e-6, atol=1e-9)


def test_shared_node_accumulates():
    x = ad.Var(np.array(3.0))
    y = x * x + x
    y.backward()
    assert float(x.grad) == 7.0


def test_backward_twice_resets():
    x = ad.Var(np.array(2.0))
    y = x * x
    y.backward()
    y.backward()
    assert float(x.grad) == 4.0


def test_division_by_var_unsupported():
    with pytest.raises(TypeError):
        ad.Var(1.0) / ad.Var(2.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(0.2, 3))
def test_jet_matches_closed_form(x0, a):
    # f(x) = tanh(a x) * sin(x) + exp(x)
    j = ad.Jet.seed(np.array([x0]), np.array([1.0]))
    f = ad.tanh(j * a) * ad.sin(j) + ad.exp(j)
    t = np.tanh(a * x0)
    dt = a * (1 - t * t)
    d2t = -2 * a * a * t * (1 - t * t)
    s, c = np.sin(x0), np.cos(x0)
    e = np.exp(x0)
    assert f.v[0] == pytest.approx(t * s + e, rel=1e-12, abs=1e-12)
    assert f.d1[0] == pytest.approx(dt * s + t * c + e, rel=1e-12, abs=1e-12)
    assert f.d2[0] == pytest.approx(d2t * s + 2 * dt * c - t * s + e, rel=1e-10, abs=1e-12)


def test_jet_direction_scaling():
    j = ad.Jet.seed(np.array([0.5]), np.array([2.0]))
    f = ad.sin(j)
    assert f.d1[0] == pytest.approx(2 * np.cos(0.5))
    assert f.d2[0] == pytest.approx(-4 * np.sin(0.5))
