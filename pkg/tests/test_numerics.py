import numpy as np
import pytest

from jlvae.numerics import (
    Activation,
    Mlp,
    MlpLayer,
    ShapeError,
    StaleCacheError,
    affine_forward,
    as_matrix,
    finite_diff_grad,
    max_rel_error,
    mlp_backward,
    mlp_forward,
)


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def _mlp(widths, rng, last=Activation.LINEAR):
    layers = []
    for i in range(len(widths) - 1):
        act = last if i == len(widths) - 2 else Activation.RELU
        layers.append(MlpLayer(rng.standard_normal((widths[i], widths[i + 1])), rng.uniform(-0.5, 0.5, widths[i + 1]), act))
    return Mlp(layers)


def test_as_matrix_promotes_vectors_and_rejects_nan():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])
    assert np.isnan(as_matrix([[np.nan]], checked=False)[0, 0])
    with pytest.raises(ShapeError):
        as_matrix(np.zeros((2, 2, 2)))


def test_layer_and_mlp_shape_checks():
    with pytest.raises(ShapeError):
        MlpLayer(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ShapeError):
        Mlp([MlpLayer(np.zeros((3, 2)), np.zeros(2)), MlpLayer(np.zeros((3, 1)), np.zeros(1))])
    mlp = _mlp([3, 4, 2], _rng())
    assert mlp.widths == [3, 4, 2]
    with pytest.raises(ShapeError):
        mlp_forward(mlp, np.zeros((5, 4)))


def test_forward_matches_manual_composition():
    rng = _rng(1)
    mlp = _mlp([3, 5, 4, 2], rng)
    x = rng.standard_normal((6, 3))
    h = x
    for layer in mlp.layers:
        h = affine_forward(h, layer)
    out, _ = mlp_forward(mlp, x)
    np.testing.assert_array_equal(out, h)
    l0 = mlp.layers[0]
    np.testing.assert_allclose(affine_forward(x, l0), np.maximum(x @ l0.weights + l0.bias, 0.0))


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = _rng(seed)
    mlp = _mlp([4, 6, 3, 2], rng)
    x = rng.standard_normal((5, 4))
    upstream = rng.standard_normal((5, 2))
    out, cache = mlp_forward(mlp, x)
    grads, gx = mlp_backward(mlp, cache, upstream)

    def f():
        return float(np.sum(mlp_forward(mlp, x)[0] * upstream))

    arrays = [a for layer in mlp.layers for a in (layer.weights, layer.bias)]
    numeric = finite_diff_grad(f, arrays)
    analytic = [a for g in grads for a in (g.weights, g.bias)]
    for a, n in zip(analytic, numeric):
        assert max_rel_error(a, n, floor=1e-7) < 1e-6

    def fx():
        return float(np.sum(mlp_forward(mlp, x)[0] * upstream))

    (nx,) = finite_diff_grad(fx, [x])
    assert max_rel_error(gx, nx, floor=1e-7) < 1e-6


def test_relu_subgradient_at_zero_is_zero():
    layer = MlpLayer(np.eye(2), np.zeros(2), Activation.RELU)
    mlp = Mlp([layer])
    x = np.array([[0.0, 1.0]])
    _, cache = mlp_forward(mlp, x)
    grads, gx = mlp_backward(mlp, cache, np.ones((1, 2)))
    np.testing.assert_array_equal(gx, [[0.0, 1.0]])
    np.testing.assert_array_equal(grads[0].bias, [0.0, 1.0])


def test_backward_rejects_foreign_cache():
    rng = _rng(2)
    a, b = _mlp([2, 3], rng), _mlp([2, 3], rng)
    _, cache = mlp_forward(a, np.zeros((1, 2)))
    with pytest.raises(StaleCacheError):
        mlp_backward(b, cache, np.zeros((1, 3)))
    with pytest.raises(ShapeError):
        mlp_backward(a, cache, np.zeros((1, 2)))


def test_finite_diff_on_quadratic_and_restores_params():
    p = np.array([1.0, -2.0, 3.0])
    before = p.copy()
    (g,) = finite_diff_grad(lambda: float(np.sum(p**2)), [p])
    np.testing.assert_allclose(g, 2 * before, rtol=1e-9)
    np.testing.assert_array_equal(p, before)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda: 0.0, [p], eps=0.0)


def test_max_rel_error_floor():
    assert max_rel_error(np.array([1e-12]), np.array([0.0])) == 0.0
    assert max_rel_error(np.array([1.0]), np.array([0.5])) == pytest.approx(0.5)
