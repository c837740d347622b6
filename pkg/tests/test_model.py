import math

import numpy as np
import pytest

from helpers import model_gradcheck, random_small_config
from jlvae.model import (
    LOG_VAR_CLAMP,
    NETWORKS,
    GaussianLatent,
    ModelConfig,
    NonFiniteLossError,
    ReconLoss,
    encode_behavioral,
    init_params,
    kdd99_config,
    kl_rows,
    kl_std_normal,
    loss_backward,
    loss_forward,
    plant_synth_config,
    recon_rows,
    reconstruct,
    zero_params,
)
from jlvae.numerics import Activation, ShapeError, StaleCacheError


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def test_kdd_layout_widths():
    w = kdd99_config().widths()
    assert w["recognizer_x"] == [65, 58, 32, 8]
    assert w["recognizer_c"] == [110, 40, 22, 8]
    assert w["generator_x"] == [8, 32, 58, 65]
    assert w["generator_c"] == [4, 22, 40, 45]


def test_plant_layout_widths():
    cfg = plant_synth_config(dim_c=10)
    w = cfg.widths()
    assert w["recognizer_c"][0] == 38
    assert w["generator_c"] == [2, 4, 7, 10]
    assert w["generator_x"] == [7, 10, 20, 28]
    assert cfg.recon_loss is ReconLoss.SQUARED_L2


def test_config_round_trip_and_validation():
    cfg = kdd99_config(l1_lambda=0.0)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.with_dims(10, 3).widths()["recognizer_c"][0] == 13
    with pytest.raises(ValueError):
        ModelConfig(0, 1, 1, 1)
    with pytest.raises(ValueError):
        ModelConfig(1, 1, 1, 1, l1_lambda=-1.0)


def test_init_is_glorot_with_zero_bias_and_linear_heads():
    cfg = kdd99_config()
    a, b = init_params(cfg, 7), init_params(cfg, 7)
    for (name, ma), (_, mb) in zip(a.networks(), b.networks()):
        for la, lb in zip(ma.layers, mb.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)
            assert np.all(la.bias == 0.0)
            limit = math.sqrt(6.0 / (la.fan_in + la.fan_out))
            assert np.abs(la.weights).max() <= limit
        assert ma.layers[-1].activation is Activation.LINEAR
        assert all(layer.activation is Activation.RELU for layer in ma.layers[:-1])
    assert not np.array_equal(init_params(cfg, 8).recognizer_x.layers[0].weights, a.recognizer_x.layers[0].weights)


def test_kl_zero_exactly_at_standard_normal():
    lat = GaussianLatent(np.zeros((3, 4)), np.zeros((3, 4)))
    assert kl_std_normal(lat) == 0.0


def test_kl_matches_closed_form_single():
    lat = GaussianLatent(np.array([[1.0]]), np.array([[math.log(4.0)]]))
    # 0.5 * (sigma^2 + mu^2 - 1 - log sigma^2)
    assert kl_rows(lat)[0] == pytest.approx(0.5 * (4.0 + 1.0 - 1.0 - math.log(4.0)))


def test_recon_variants():
    t = np.array([[0.0, 0.0]])
    r = np.array([[3.0, 4.0]])
    assert recon_rows(t, r, ReconLoss.L2_NORM)[0] == 5.0
    assert recon_rows(t, r, ReconLoss.SQUARED_L2)[0] == 12.5


def test_loss_is_sum_of_terms_and_kl_counted_once():
    cfg = plant_synth_config(dim_c=10, l1_lambda=1e-3)
    params = init_params(cfg, 0)
    rng = _rng(1)
    x, c = rng.standard_normal((7, 28)), rng.standard_normal((7, 10))
    b, _ = loss_forward(params, x, c, rng.standard_normal((7, 5)), rng.standard_normal((7, 2)), cfg)
    assert b.total == pytest.approx(b.kl_zx + b.kl_zc + b.recon_x + b.recon_c + b.l1)
    assert b.l1 == pytest.approx(1e-3 * params.l1_norm())
    # biases are outside the penalty
    for _, m in params.networks():
        m.layers[0].bias[...] = 5.0
    assert params.l1_norm() == pytest.approx(b.l1 / 1e-3)


def test_cross_link_context_changes_behavioral_reconstruction():
    cfg = plant_synth_config(dim_c=10)
    params = init_params(cfg, 3)
    rng = _rng(2)
    x = rng.standard_normal((4, 28))
    c1, c2 = rng.standard_normal((4, 10)), rng.standard_normal((4, 10))
    x1, _ = reconstruct(params, x, c1)
    x2, _ = reconstruct(params, x, c2)
    assert not np.allclose(x1, x2)
    # generator_x input is [z_x, z_c]
    assert params.generator_x.in_dim == cfg.latent_x + cfg.latent_c


def test_log_var_clamped_and_gradient_blocked_outside():
    cfg = ModelConfig(1, 1, 1, 1, l1_lambda=0.0)
    params = zero_params(cfg)
    head = params.recognizer_x.layers[-1]
    head.bias[1] = 50.0  # raw log-variance far above the clamp
    x, c = np.ones((2, 1)), np.ones((2, 1))
    q = encode_behavioral(params, x)
    assert np.all(q.log_var == LOG_VAR_CLAMP)
    _, cache = loss_forward(params, x, c, np.zeros((2, 1)), np.zeros((2, 1)), cfg)
    g = loss_backward(params, cache)
    assert g.recognizer_x[-1].bias[1] == 0.0


def test_gradient_matches_finite_differences():
    rng = _rng(11)
    for i in range(8):
        cfg = random_small_config(rng, [ReconLoss.L2_NORM, ReconLoss.SQUARED_L2][i % 2], [0.0, 1e-5][i // 4])
        assert model_gradcheck(cfg, i) < 1e-4


def test_backward_rejects_other_params():
    cfg = ModelConfig(2, 1, 1, 1)
    p, q = init_params(cfg, 0), init_params(cfg, 1)
    _, cache = loss_forward(p, np.ones((1, 2)), np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), cfg)
    with pytest.raises(StaleCacheError):
        loss_backward(q, cache)


def test_shape_and_nonfinite_errors():
    cfg = ModelConfig(2, 1, 1, 1)
    p = init_params(cfg, 0)
    with pytest.raises(ShapeError):
        loss_forward(p, np.ones((1, 3)), np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), cfg)
    with pytest.raises(ShapeError):
        loss_forward(p, np.ones((1, 2)), np.ones((1, 1)), np.zeros((2, 1)), np.zeros((1, 1)), cfg)
    with pytest.raises(NonFiniteLossError):
        loss_forward(p, np.array([[np.inf, 0.0]]), np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), cfg)


def test_mc_samples_average_reconstruction():
    cfg = ModelConfig(2, 2, 1, 1, recon_loss="squared_l2")
    p = init_params(cfg, 0)
    rng = _rng(5)
    x, c = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    ex, ec = rng.standard_normal((2, 3, 1)), rng.standard_normal((2, 3, 1))
    both, _ = loss_forward(p, x, c, ex, ec, cfg)
    one, _ = loss_forward(p, x, c, ex[0], ec[0], cfg)
    two, _ = loss_forward(p, x, c, ex[1], ec[1], cfg)
    assert both.recon_x == pytest.approx(0.5 * (one.recon_x + two.recon_x))
    assert both.kl_zx == one.kl_zx


def test_networks_order():
    assert NETWORKS == ("recognizer_x", "recognizer_c", "generator_x", "generator_c")
