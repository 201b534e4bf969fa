import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeonlab.autodiff import (
    DomainError, GraphError, Tape, Value, backward, clip, concat, dot, erfinv, exp, leaky_relu, log,
    logsumexp, max0, sigmoid, stack, tanh,
)

H = 1e-5


def central_diff(f, x, h=H):
    """Elementwise central difference of a scalar-valued f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, n):
    a, n = np.asarray(a), np.asarray(n)
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))


def rel_err_norm(a, n):
    """Norm-wise relative error; per-entry ratios on tiny components only
    measure finite-difference roundoff."""
    a, n = np.ravel(a), np.ravel(n)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)


def grad_of(fn, x):
    v = Value(x, requires_grad=True)
    out = fn(v)
    return backward(out)[v]


# (name, scalar fn on a Value, sampler for interior points)
UNARY = [
    ("exp", exp, lambda r: r.uniform(-3, 3)),
    ("log", log, lambda r: r.uniform(0.1, 5)),
    ("max0", max0, lambda r: r.choice([-1, 1]) * r.uniform(0.01, 3)),
    ("leaky_relu", lambda v: leaky_relu(v, 0.01), lambda r: r.choice([-1, 1]) * r.uniform(0.01, 3)),
    ("sigmoid", sigmoid, lambda r: r.uniform(-6, 6)),
    ("tanh", tanh, lambda r: r.uniform(-3, 3)),
    ("neg", lambda v: -v, lambda r: r.uniform(-3, 3)),
    ("pow3", lambda v: v ** 3, lambda r: r.uniform(-2, 2)),
    ("sqrt", lambda v: v ** 0.5, lambda r: r.uniform(0.1, 4)),
    ("erfinv", erfinv, lambda r: r.uniform(-0.95, 0.95)),
    ("clip", lambda v: clip(v, -1.0, 1.0), lambda r: r.choice([r.uniform(-0.99, 0.99), r.uniform(1.01, 3)])),
    ("reciprocal", lambda v: 1.0 / v, lambda r: r.choice([-1, 1]) * r.uniform(0.2, 3)),
]


@pytest.mark.parametrize("name,fn,sample", UNARY, ids=[u[0] for u in UNARY])
def test_unary_partials_match_finite_differences(name, fn, sample):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(100):
        x = float(sample(rng))
        a = grad_of(fn, x)
        n = (fn(Value(x + H)).data - fn(Value(x - H)).data) / (2 * H)
        assert rel_err(a, n) <= 1e-6, (name, x, a, n)


BINARY = [
    ("add", lambda a, b: a + b),
    ("sub", lambda a, b: a - b),
    ("mul", lambda a, b: a * b),
    ("div", lambda a, b: a / b),
]


@pytest.mark.parametrize("name,fn", BINARY, ids=[b[0] for b in BINARY])
def test_binary_partials_match_finite_differences(name, fn):
    rng = np.random.default_rng(len(name))
    for _ in range(100):
        x, y = rng.uniform(0.2, 3, size=2) * rng.choice([-1, 1], size=2)
        a, b = Value(x, requires_grad=True), Value(y, requires_grad=True)
        g = backward(fn(a, b))
        nx = (fn(Value(x + H), Value(y)).data - fn(Value(x - H), Value(y)).data) / (2 * H)
        ny = (fn(Value(x), Value(y + H)).data - fn(Value(x), Value(y - H)).data) / (2 * H)
        assert rel_err(g[a], nx) <= 1e-6
        assert rel_err(g[b], ny) <= 1e-6


def test_reduction_and_matrix_partials():
    rng = np.random.default_rng(1)
    for _ in range(100):
        A = rng.standard_normal((3, 4))
        B = rng.standard_normal((4, 2))
        c = rng.standard_normal(2)

        def f_a(a):
            return float(np.sum(np.tanh(a @ B + c)))

        Av = Value(A, requires_grad=True)
        g = backward((tanh(dot(Av, Value(B)) + c)).sum())[Av]
        assert rel_err_norm(g, central_diff(f_a, A)) <= 1e-6

        x = rng.uniform(-5, 5, size=6)
        xv = Value(x, requires_grad=True)
        g = backward(logsumexp(xv))[xv]
        assert rel_err_norm(g, central_diff(lambda z: float(np.log(np.exp(z).sum())), x)) <= 1e-6


def test_logsumexp_masked_and_axis_gradients():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((4, 5))
    mask = rng.random((4, 5)) < 0.6
    mask[:, 0] = True

    def ref(z):
        return float(sum(np.log(np.exp(z[i][mask[i]]).sum()) * (i + 1) for i in range(4)))

    Xv = Value(X, requires_grad=True)
    weights = np.arange(1, 5, dtype=float)
    g = backward((logsumexp(Xv, axis=1, mask=mask) * weights).sum())[Xv]
    assert rel_err_norm(g, central_diff(ref, X)) <= 1e-6
    assert np.all(g[~mask] == 0.0)


def test_primitive_examples():
    assert logsumexp(Value(np.zeros(10))).item() == pytest.approx(math.log(10), abs=1e-12)
    assert max0(Value(-0.5)).item() == 0.0
    assert grad_of(max0, -0.5) == 0.0
    assert erfinv(Value(0.0)).item() == 0.0


def test_backward_examples():
    x, y = Value(2.0, requires_grad=True), Value(3.0, requires_grad=True)
    g = backward(x * y)
    assert g[x] == 3.0 and g[y] == 2.0
    assert grad_of(sigmoid, 0.0) == pytest.approx(0.25, abs=1e-15)


def test_gradient_accumulates_over_reuse():
    x = Value(1.5, requires_grad=True)
    y = x * x + x * 3.0 + exp(x)
    assert backward(y)[x] == pytest.approx(2 * 1.5 + 3 + math.exp(1.5), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-2, 2))
def test_backward_is_linear(a, b, x0):
    def f(v):
        return sigmoid(v) * v

    def g(v):
        return tanh(v) + v ** 2

    x = Value(x0, requires_grad=True)
    combined = backward(f(x) * a + g(x) * b)[x]
    gf = backward(f(x))[x]
    gg = backward(g(x))[x]
    assert combined == pytest.approx(a * gf + b * gg, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_logsumexp_finite_up_to_1e3(xs):
    v = Value(np.array(xs), requires_grad=True)
    out = logsumexp(v)
    assert np.isfinite(out.item())
    assert out.item() >= max(xs) - 1e-9
    assert np.all(np.isfinite(backward(out)[v]))


def test_sigmoid_stable_at_extremes():
    out = sigmoid(Value(np.array([-800.0, 800.0])))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == 0.0 and out.data[1] == 1.0


def test_topological_order_and_single_visit():
    a = Value(1.0, requires_grad=True)
    b = a * 2.0
    c = b + a
    d = c * b
    tape = Tape(d)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p, _ in n.parents:
            assert pos[id(p)] < pos[id(n)]
    assert len(pos) == len(tape.nodes)


def test_cycle_is_detected():
    a = Value(1.0, requires_grad=True)
    b = a * 2.0
    a.parents = ((b, lambda g: g),)  # splice a back edge
    with pytest.raises(GraphError):
        backward(b)


def test_non_scalar_root_rejected():
    v = Value(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        backward(v * 2.0)


def test_domain_errors():
    with pytest.raises(DomainError):
        log(Value(0.0))
    with pytest.raises(DomainError):
        log(Value(-1.0))
    for bad in (1.0, -1.0, 2.0, float("nan")):
        with pytest.raises(DomainError):
            erfinv(Value(bad))
    with pytest.raises(DomainError):
        logsumexp(Value(np.zeros((2, 3))), axis=1, mask=np.array([[True, False, False], [False] * 3]))


def test_shape_mismatch_raises():
    with pytest.raises(GraphError):
        dot(Value(np.ones((2, 3))), Value(np.ones((2, 3))))


def test_detach_blocks_gradient():
    x = Value(2.0, requires_grad=True)
    y = x * x.detach()
    assert backward(y)[x] == pytest.approx(2.0)


def test_broadcast_gradients_reduce_to_operand_shape():
    W = Value(np.ones((3, 2)), requires_grad=True)
    b = Value(np.zeros(2), requires_grad=True)
    out = (W * 2.0 + b).sum()
    g = backward(out)
    assert g[b].shape == (2,) and np.all(g[b] == 3.0)
    assert g[W].shape == (3, 2)


def test_indexing_concat_stack_gradients():
    x = Value(np.arange(6.0), requires_grad=True)
    y = concat([x[:2], x[4:]]).sum() + stack([x[1], x[1]]).sum()
    assert np.array_equal(backward(y)[x], [1, 3, 0, 0, 1, 1])
    idx = np.array([0, 0, 5])
    assert np.array_equal(backward(x[idx].sum())[x], [2, 0, 0, 0, 0, 1])


def test_erfinv_inverts_erf():
    from scipy.special import erf

    y = np.linspace(-0.999999, 0.999999, 2001)
    assert np.max(np.abs(erf(erfinv(Value(y)).data) - y)) < 1e-14
