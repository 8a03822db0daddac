import numpy as np
import pytest

from unimom import autodiff as ad
from unimom.autodiff import Tensor
from unimom.optim import Adam, clip_global_norm, finite_diff_check


def make_params():
    return {"w": Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True),
            "b": Tensor(np.array([[0.1, 0.2]]), requires_grad=True)}


def test_zero_gradients_leave_parameters_unchanged():
    params = make_params()
    before = {k: p.data.copy() for k, p in params.items()}
    adam = Adam()
    for _ in range(5):
        adam.step(params, {k: np.zeros_like(p.data) for k, p in params.items()})
    for k, p in params.items():
        assert np.array_equal(p.data, before[k])


def test_first_step_moves_against_gradient():
    params = make_params()
    g = {"w": np.array([0.3, -0.7, 0.0]), "b": np.array([[1.0, -1.0]])}
    before = {k: p.data.copy() for k, p in params.items()}
    Adam(lr=1e-3).step(params, g)
    for k in params:
        delta = params[k].data - before[k]
        nz = g[k] != 0
        assert np.all(np.sign(delta[nz]) == -np.sign(g[k][nz]))
        assert np.all(delta[~nz] == 0)


def test_identical_calls_from_identical_state():
    g = {"w": np.array([0.3, -0.7, 0.1]), "b": np.array([[1.0, -1.0]])}
    outs = []
    for _ in range(2):
        params = make_params()
        adam = Adam()
        for _ in range(7):
            adam.step(params, g)
        outs.append({k: p.data.copy() for k, p in params.items()})
    for k in outs[0]:
        assert np.array_equal(outs[0][k], outs[1][k])


def test_moment_shapes_and_step_counter():
    params = make_params()
    adam = Adam()
    adam.step(params, {k: np.ones_like(p.data) for k, p in params.items()})
    adam.step(params, {k: np.ones_like(p.data) for k, p in params.items()})
    assert adam.step_count == 2
    for k, p in params.items():
        assert adam.m[k].shape == p.data.shape
        assert adam.v[k].shape == p.data.shape


def test_nan_gradient_names_parameter():
    params = make_params()
    g = {"w": np.array([0.1, np.nan, 0.0]), "b": np.zeros((1, 2))}
    with pytest.raises(ValueError, match="'w'"):
        Adam().step(params, g)


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    clipped, norm = clip_global_norm(grads, 2.5)
    assert np.isclose(norm, 5.0)
    total = np.sqrt(sum(float((g * g).sum()) for g in clipped.values()))
    assert np.isclose(total, 2.5)
    same, norm2 = clip_global_norm(grads, 10.0)
    assert same is grads and np.isclose(norm2, 5.0)


def test_finite_diff_quadratic():
    x = Tensor(3.0, requires_grad=True)
    err = finite_diff_check(lambda: ad.mul(x, x), [x])
    assert err < 1e-7


def test_finite_diff_constant_objective():
    x = Tensor([1.0, -1.0], requires_grad=True)
    err = finite_diff_check(lambda: ad.add(ad.mean(ad.mul(x, 0.0)), 4.0), [x])
    assert err < 1e-9


def test_finite_diff_rejects_non_finite_objective():
    x = Tensor(1.0, requires_grad=True)
    with pytest.raises(ValueError, match="non-finite"):
        finite_diff_check(lambda: ad.mul(x, float("nan")), [x])
