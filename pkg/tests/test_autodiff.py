import threading

import numpy as np
import pytest

from unimom import autodiff as ad
from unimom.autodiff import ShapeError, Tape, Tensor

RNG = np.random.default_rng(42)


def numeric_grads(build, tensors, h=1e-6):
    """Central-difference gradients of a scalar-producing graph builder."""
    grads = []
    for t in tensors:
        flat = t.data.ravel()
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build().data)
            flat[i] = orig - h
            down = float(build().data)
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def test_tanh_fixed_point():
    assert ad.tanh(Tensor(0.0)).item() == 0.0


def test_softmax_symmetry():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 7.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(m))
    assert np.array_equal(out.data, m)


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = ad.mul(x, x)
    (g,) = tape.backward(loss, wrt=[x])
    assert np.isclose(g, 6.0)


def test_tanh_derivative_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        loss = ad.tanh(x)
    (g,) = tape.backward(loss, wrt=[x])
    assert np.isclose(g, 1.0)


def test_mean_gradient_is_uniform():
    x = Tensor([1.0, 5.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(x)
    (g,) = tape.backward(loss, wrt=[x])
    assert np.allclose(g, [0.5, 0.5])


def test_reused_tensor_accumulates_gradient():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        loss = ad.add(ad.mul(x, x), x)
    (g,) = tape.backward(loss, wrt=[x])
    assert np.isclose(g, 5.0)  # d/dx (x^2 + x) at 2


def test_unused_parameter_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([[3.0, 4.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(x)
    g_x, g_u = tape.backward(loss, wrt=[x, unused])
    assert np.allclose(g_x, 0.5)
    assert np.array_equal(g_u, np.zeros((1, 2)))


OPS = [
    ("add", lambda a, b: ad.add(a, b), [(3, 4), (3, 4)], False),
    ("add_bias", lambda a, b: ad.add(a, b), [(3, 4), (4,)], False),
    ("add_scalar", lambda a, b: ad.add(a, b), [(3, 4), ()], False),
    ("sub", lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)], False),
    ("mul", lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)], False),
    ("div", lambda a, b: ad.div(a, b), [(3, 4), (3, 4)], True),
    ("neg", lambda a: ad.neg(a), [(3, 4)], False),
    ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)], False),
    ("tanh", lambda a: ad.tanh(a), [(3, 4)], False),
    ("sigmoid", lambda a: ad.sigmoid(a), [(3, 4)], False),
    ("exp", lambda a: ad.exp(a), [(3, 4)], False),
    ("log", lambda a: ad.log(a), [(3, 4)], True),
    ("sqrt", lambda a: ad.sqrt(a), [(3, 4)], True),
    ("abs", lambda a: ad.absolute(a), [(3, 4)], False),
    ("softmax", lambda a: ad.softmax(a), [(3, 4)], False),
    ("mean_all", lambda a: ad.mean(a), [(3, 4)], False),
    ("mean_axis", lambda a: ad.mean(a, axis=1, keepdims=True), [(3, 4)], False),
    ("std_all", lambda a: ad.std(a), [(3, 4)], False),
    ("std_axis", lambda a: ad.std(a, axis=1, keepdims=True), [(3, 4)], False),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 3)], False),
    ("reshape", lambda a: ad.reshape(a, (2, 6)), [(3, 4)], False),
    ("repeat_cols", lambda a: ad.repeat_cols(a, 5), [(3, 1)], False),
    ("slice", lambda a: a[1:, 1:3], [(3, 4)], False),
    ("maximum", lambda a, b: ad.maximum(a, b), [(3, 4), (3, 4)], False),
    ("minimum", lambda a, b: ad.minimum(a, b), [(3, 4), ()], False),
]


@pytest.mark.parametrize("name,op,shapes,positive", OPS, ids=[o[0] for o in OPS])
def test_op_gradient_matches_finite_differences(name, op, shapes, positive):
    lo = 0.2 if positive else -2.0
    tensors = [Tensor(RNG.uniform(lo, 2.0, size=s), requires_grad=True)
               for s in shapes]
    coef = RNG.uniform(-1.0, 1.0, size=op(*tensors).data.shape)

    def build():
        return ad.mean(ad.mul(op(*tensors), Tensor(coef)))

    with Tape() as tape:
        loss = build()
    analytic = tape.backward(loss, wrt=tensors)
    numeric = numeric_grads(build, tensors)
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        assert err.max() < 1e-6, f"{name}: max rel err {err.max():.2e}"


def test_softmax_rows_positive_and_normalized():
    x = Tensor(RNG.uniform(-5, 5, size=(20, 7)))
    out = ad.softmax(x).data
    assert (out > 0).all()
    assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12


def test_composite_matches_manual_chain_rule():
    x = Tensor(RNG.uniform(-1.5, 1.5, size=(5,)), requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(ad.tanh(ad.mul(x, x)))
    (g,) = tape.backward(loss, wrt=[x])
    inner = x.data * x.data
    manual = (1.0 - np.tanh(inner) ** 2) * 2.0 * x.data / x.data.size
    assert np.allclose(g, manual, atol=1e-14)


def test_replay_determinism():
    vals = RNG.uniform(-2, 2, size=(4, 4))

    def run():
        x = Tensor(vals.copy(), requires_grad=True)
        with Tape() as tape:
            loss = ad.mean(ad.mul(ad.tanh(x), ad.sigmoid(x)))
        (g,) = tape.backward(loss, wrt=[x])
        return loss.data.copy(), g.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(g1, g2)


def test_independent_tapes_on_threads():
    results = {}

    def job(key, scale):
        x = Tensor(np.full(3, scale), requires_grad=True)
        with Tape() as tape:
            loss = ad.mean(ad.mul(x, x))
        (g,) = tape.backward(loss, wrt=[x])
        results[key] = g

    threads = [threading.Thread(target=job, args=(k, float(k + 1))) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(4):
        assert np.allclose(results[k], 2.0 * (k + 1) / 3.0)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(2, 4\)"):
        ad.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ad.mul(Tensor(np.zeros((3, 1))), Tensor(np.zeros((3, 4))))


def test_domain_errors():
    with pytest.raises(ValueError):
        ad.log(Tensor([-1.0]))
    with pytest.raises(ValueError):
        ad.log(Tensor([0.0]))
    with pytest.raises(ValueError):
        ad.sqrt(Tensor([-0.5]))
    with pytest.raises(ZeroDivisionError):
        ad.div(Tensor([1.0]), Tensor([0.0]))


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = ad.mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(out)


def test_backward_on_empty_tape():
    with pytest.raises(RuntimeError, match="empty tape"):
        Tape().backward(Tensor(1.0))


def test_detach_blocks_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.add(ad.mean(ad.mul(x.detach(), x.detach())), ad.mean(x))
    (g,) = tape.backward(loss, wrt=[x])
    assert np.allclose(g, 0.5)
