import numpy as np
import pytest
import torch

from didark.denoiser import (
    DESK_DENOISER,
    PAPER_DENOISER,
    DenoiserConfig,
    denoise,
    forward_with_grad,
    get_params,
    init_params,
    param_shapes,
    set_params,
)
from didark.diffusion import precond_coefficients
from didark.errors import ArgumentError, NumericError
from oracles import finite_difference_check, weighted_mse

TINY = DenoiserConfig(base_channels=8, res_blocks_per_resolution=1)


def inputs(n=2, size=32, seed=0, cfg=TINY):
    g = torch.Generator().manual_seed(seed)
    noisy = torch.randn(n, cfg.out_channels, size, size, generator=g)
    cond = torch.randn(n, cfg.in_channels - cfg.out_channels, size, size, generator=g)
    return noisy, cond


class TestConfig:
    def test_paper_defaults(self):
        c = PAPER_DENOISER
        assert (c.base_channels, c.channel_multipliers, c.res_blocks_per_resolution) == (128, (2, 2, 2), 4)
        assert (c.dropout, c.in_channels, c.out_channels) == (0.10, 12, 3)
        assert c.level_channels == [256, 256, 256]
        assert c.embedding_dim == 128

    def test_desk(self):
        assert DESK_DENOISER.base_channels == 32
        assert DESK_DENOISER.level_channels == [64, 64, 64]

    def test_divisor(self):
        assert PAPER_DENOISER.min_spatial_divisor == 4

    @pytest.mark.parametrize("kw", [dict(base_channels=0), dict(in_channels=9), dict(dropout=1.0),
                                    dict(channel_multipliers=())])
    def test_rejects(self, kw):
        with pytest.raises(ArgumentError):
            DenoiserConfig(**kw)


class TestForward:
    def test_output_shape(self):
        model = init_params(TINY)
        noisy, cond = inputs()
        assert denoise(model, noisy, cond, 1.0).shape == noisy.shape

    def test_zero_init_is_skip_only(self):
        model = init_params(TINY)
        noisy, cond = inputs()
        sigma = torch.tensor([0.3, 4.0])
        c_skip = precond_coefficients(sigma, 0.5)[0]
        out = denoise(model, noisy, cond, sigma)
        torch.testing.assert_close(out, c_skip[:, None, None, None] * noisy)

    def test_conditioning_matters_after_training_step(self):
        model = init_params(TINY)
        with torch.no_grad():
            model.net.conv_out.weight.normal_(0, 0.1)
        noisy, cond = inputs()
        a = denoise(model, noisy, cond, 1.0)
        b = denoise(model, noisy, cond + 1.0, 1.0)
        assert not torch.allclose(a, b)

    def test_eval_is_deterministic(self):
        model = init_params(DenoiserConfig(base_channels=8, res_blocks_per_resolution=1, dropout=0.5))
        with torch.no_grad():
            model.net.conv_out.weight.normal_(0, 0.1)
        noisy, cond = inputs()
        assert torch.equal(denoise(model, noisy, cond, 1.0), denoise(model, noisy, cond, 1.0))

    def test_denoise_restores_training_flag(self):
        model = init_params(TINY)
        model.train()
        denoise(model, *inputs(), 1.0)
        assert model.training

    def test_bad_shapes(self):
        model = init_params(TINY)
        noisy, cond = inputs()
        with pytest.raises(ArgumentError):
            model(noisy, cond[:, :6], 1.0)
        with pytest.raises(ArgumentError):
            model(noisy[..., :30, :30], cond[..., :30, :30], 1.0)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ArgumentError):
            init_params(TINY)(*inputs(), torch.tensor([1.0, 0.0]))

    def test_nonfinite_output(self):
        model = init_params(TINY)
        with torch.no_grad():
            model.net.conv_out.bias.fill_(float("nan"))
        with pytest.raises(NumericError):
            denoise(model, *inputs(), 1.0)


class TestParams:
    def test_seeded_init_reproducible(self):
        a, b = get_params(init_params(TINY, 3)), get_params(init_params(TINY, 3))
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = get_params(init_params(TINY, 4))
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_init_leaves_global_rng_alone(self):
        torch.manual_seed(99)
        expected = torch.rand(3)
        torch.manual_seed(99)
        init_params(TINY, 0)
        assert torch.equal(torch.rand(3), expected)

    def test_shapes_match_model(self):
        model = init_params(DESK_DENOISER)
        assert list(param_shapes(DESK_DENOISER).items()) == [(k, tuple(p.shape)) for k, p in model.named_parameters()]

    def test_set_get_round_trip(self):
        src = get_params(init_params(TINY, 1))
        model = init_params(TINY, 2)
        set_params(model, src)
        out = get_params(model)
        assert all(np.array_equal(src[k], out[k]) for k in src)

    def test_set_rejects_mismatch(self):
        params = get_params(init_params(TINY))
        model = init_params(TINY)
        name = next(iter(params))
        with pytest.raises(ArgumentError):
            set_params(model, {k: v for k, v in params.items() if k != name})
        params[name] = params[name][..., :1]
        with pytest.raises(ArgumentError):
            set_params(model, params)


class TestGradients:
    def test_finite_differences(self):
        errors = finite_difference_check(DenoiserConfig(base_channels=4, res_blocks_per_resolution=1), n_params=60)
        assert errors.max() < 1e-3

    def test_scale_is_linear(self):
        cfg = DenoiserConfig(base_channels=4, res_blocks_per_resolution=1, dropout=0.0)
        model = init_params(cfg).double()
        with torch.no_grad():
            model.net.conv_out.weight.normal_(0, 0.1)
        noisy, cond = (t.double() for t in inputs(cfg=cfg, size=8))
        target, sigma = torch.zeros_like(noisy), torch.ones(2)
        a = forward_with_grad(model, noisy, cond, target, sigma, weighted_mse)
        b = forward_with_grad(model, noisy, cond, target, sigma, weighted_mse, scale=3.0)
        assert b.loss == pytest.approx(3 * a.loss)
        for k in a.grads:
            np.testing.assert_allclose(b.grads[k], 3 * a.grads[k], rtol=1e-10, atol=1e-14)

    def test_nonfinite_gradient_names_parameter(self):
        model = init_params(DenoiserConfig(base_channels=4, res_blocks_per_resolution=1))
        noisy, cond = inputs(cfg=model.cfg, size=8)

        def bad(pred, target, sigma):
            return (pred * float("inf")).sum()

        with pytest.raises(NumericError, match="parameter"):
            forward_with_grad(model, noisy, cond, noisy, torch.ones(2), bad)
