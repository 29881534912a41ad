import numpy as np
import pytest
import torch
from torch import nn

from freqportrait import network
from freqportrait.data import Frame, window_audio
from freqportrait.errors import ConfigError, ContractError, FormatError
from freqportrait.network import (AudioFrequencyModulator, GatedConv, InvertedResidual, ModelConfig,
                                  VisualFrequencyModulator, build_model)
from freqportrait.spectral import frequency_loss
from oracles import check_grad, numeric_grad, rel_err


def randn(*shape, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=dtype)


def test_inverted_residual_stride2_shape():
    block = InvertedResidual(16, 24, stride=2)
    out = network.inverted_residual_block(torch.randn(16, 32, 32), block)
    assert out.shape == (24, 16, 16)


def test_inverted_residual_zero_projection_is_identity():
    block = InvertedResidual(8, 8, stride=1)
    nn.init.zeros_(block.project.weight)
    nn.init.zeros_(block.project.bias)
    x = torch.randn(2, 8, 5, 5)
    assert torch.equal(block(x), x)


def test_inverted_residual_rejects_bad_residual():
    with pytest.raises(ConfigError):
        InvertedResidual(8, 16, stride=1, residual=True)
    with pytest.raises(ConfigError):
        InvertedResidual(8, 8, stride=2, residual=True)


@pytest.mark.parametrize("stride", [1, 2])
def test_inverted_residual_gradient(stride):
    block = InvertedResidual(2, 2, stride=stride).double()
    x = randn(1, 2, 4, 4).requires_grad_()
    w = randn(*block(x).shape, seed=1)
    params = [x, block.expand.weight, block.depthwise.weight]
    assert check_grad(lambda: (block(x) * w).sum(), params) < 1e-4


def test_gated_conv_saturated_gates():
    gc = GatedConv(3, 3).double()
    x = randn(1, 3, 6, 6)
    nn.init.zeros_(gc.gate.weight)
    nn.init.constant_(gc.gate.bias, 20.0)
    feat = gc.activation(gc.feature(x))
    assert torch.allclose(gc(x), feat, atol=1e-6 * (1 + feat.abs().max().item()))
    nn.init.constant_(gc.gate.bias, -20.0)
    assert gc(x).abs().max() < 1e-6 * (1 + feat.abs().max().item())


def test_gated_conv_gradient():
    gc = GatedConv(2, 3).double()
    x = randn(2, 2, 4, 4).requires_grad_()
    w = randn(2, 3, 4, 4, seed=1)
    assert check_grad(lambda: (gc(x) * w).sum(), [x, gc.feature.weight, gc.gate.weight]) < 1e-4


def identity_gate(gc):
    """Conv_f = identity kernel, gate saturated open."""
    with torch.no_grad():
        gc.feature.weight.zero_()
        gc.feature.bias.zero_()
        c = gc.feature.weight.shape[0]
        for i in range(c):
            gc.feature.weight[i, i, 1, 1] = 1.0
        gc.gate.weight.zero_()
        gc.gate.bias.fill_(40.0)


def test_vefm_identity_filter():
    vefm = VisualFrequencyModulator(6, 4, gate_activation=nn.Identity()).double()
    identity_gate(vefm.gated)
    with torch.no_grad():
        vefm.filter.weight.zero_()
        vefm.filter.bias.fill_(1.0)
    f_r, f_m = randn(2, 6, 8, 8), randn(2, 4, 8, 8, seed=1)
    assert (network.vefm_forward(f_r, f_m, vefm) - f_m).abs().max() < 1e-6


def test_vefm_identity_with_default_activation_on_positive_features():
    # ELU is the identity for positive inputs.
    vefm = VisualFrequencyModulator(3, 3).double()
    identity_gate(vefm.gated)
    with torch.no_grad():
        vefm.filter.weight.zero_()
        vefm.filter.bias.fill_(1.0)
    f_m = randn(1, 3, 8, 8).abs() + 0.1
    assert (vefm(randn(1, 3, 8, 8, seed=2), f_m) - f_m).abs().max() < 1e-6


def test_vefm_zero_filter():
    vefm = VisualFrequencyModulator(4, 4)
    with torch.no_grad():
        vefm.filter.weight.zero_()
        vefm.filter.bias.zero_()
    out = vefm(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
    assert torch.equal(out, torch.zeros_like(out))


def test_vefm_filter_uses_real_spectrum():
    vefm = VisualFrequencyModulator(2, 3).double()
    f_r = randn(1, 2, 4, 4)
    spec = torch.fft.fft2(f_r).real
    want = torch.einsum("oc,bchw->bohw", vefm.filter.weight[:, :, 0, 0], spec) + vefm.filter.bias[None, :, None, None]
    assert torch.allclose(vefm.reference_filter(f_r), want)


def test_vefm_spatial_mismatch():
    vefm = VisualFrequencyModulator(4, 4)
    with pytest.raises(ContractError):
        vefm(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4))


def test_vefm_gradient():
    vefm = VisualFrequencyModulator(4, 4).double()
    f_r = randn(2, 4, 8, 8).requires_grad_()
    f_m = randn(2, 4, 8, 8, seed=1).requires_grad_()
    w = randn(2, 4, 8, 8, seed=2)
    fn = lambda: (vefm(f_r, f_m) * w).sum()  # noqa: E731
    assert check_grad(fn, [f_r, f_m, vefm.filter.weight]) < 1e-4


def test_avfm_filters():
    avfm = AudioFrequencyModulator(5, 4).double()
    f_mod, f_a = randn(2, 4, 4, 4), randn(2, 5, 4, 4, seed=1)
    with torch.no_grad():
        avfm.filter.weight.zero_()
        avfm.filter.bias.fill_(1.0)
    assert (network.avfm_forward(f_mod, f_a, avfm) - f_mod).abs().max() < 1e-6
    with torch.no_grad():
        avfm.filter.bias.zero_()
    assert torch.equal(avfm(f_mod, f_a), torch.zeros_like(f_mod))


def test_avfm_gradient():
    avfm = AudioFrequencyModulator(3, 4).double()
    f_mod = randn(2, 4, 8, 8).requires_grad_()
    f_a = randn(2, 3, 8, 8, seed=1).requires_grad_()
    w = randn(2, 4, 8, 8, seed=2)
    assert check_grad(lambda: (avfm(f_mod, f_a) * w).sum(), [f_mod, f_a]) < 1e-4


def test_avfm_spatial_mismatch():
    with pytest.raises(ContractError):
        AudioFrequencyModulator(3, 4)(torch.randn(1, 4, 4, 4), torch.randn(1, 3, 2, 2))


def inputs(cfg, batch=2, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    s = cfg.image_size
    return (torch.rand(batch, 3, s, s, generator=g, dtype=dtype),
            torch.rand(batch, 3, s, s, generator=g, dtype=dtype),
            torch.randn(batch, 32, 32, 32, generator=g, dtype=dtype))


def test_default_forward_shape_and_range():
    model = build_model(ModelConfig())
    out = model(*inputs(model.config))
    assert out.shape == (2, 3, 64, 64)
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("vefm,avfm", [(False, True), (True, False), (False, False)])
def test_ablation_variants_forward(vefm, avfm):
    cfg = ModelConfig(use_vefm=vefm, use_avfm=avfm)
    model = build_model(cfg)
    if not vefm:
        assert all(isinstance(m, network.ConcatFusion) for m in model.visual_fusion)
    if not avfm:
        assert isinstance(model.audio_fusion, network.ConcatFusion)
    assert model(*inputs(cfg)).shape == (2, 3, 64, 64)


@pytest.mark.parametrize("size", [32, 64, 128])
@pytest.mark.parametrize("stages", [3, 4])
def test_shapes_follow_config(size, stages):
    cfg = ModelConfig(image_size=size, stages=stages, widths=(8, 16, 24, 32)[:stages])
    model = build_model(cfg)
    ref, msk, aud = inputs(cfg, batch=1)
    with torch.no_grad():
        f_mod, f_a, bottom, _ = model.encode(ref, msk, aud)
        out = model(ref, msk, aud)
    assert [tuple(f.shape[1:]) for f in f_mod] == network.feature_shapes(cfg)
    grid = size // 2 ** stages
    assert tuple(f_a.shape[1:]) == (cfg.audio_channels, grid, grid)
    assert tuple(bottom.shape[1:]) == network.feature_shapes(cfg)[-1]
    assert out.shape == (1, 3, size, size)
    assert torch.isfinite(out).all()


def test_config_errors():
    with pytest.raises(ConfigError):
        ModelConfig(image_size=60)
    with pytest.raises(ConfigError):
        ModelConfig(stages=1, widths=(8,))
    with pytest.raises(ConfigError):
        ModelConfig(widths=(8, 16))
    with pytest.raises(ConfigError):
        ModelConfig(image_size=512, stages=3, widths=(8, 8, 8))  # 64x64 bottleneck > audio grid


def test_audio_encoder_contract():
    cfg = ModelConfig()
    model = build_model(cfg)
    window = window_audio(np.zeros((20, 2, 1024), np.float32), 3)
    f_a = network.audio_encoder(window, model.audio_encoder)
    assert f_a.shape == (128, 4, 4)

    enc = network.AudioEncoder(16, 4, 2)
    with torch.no_grad():
        for name, p in enc.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    assert torch.equal(enc(torch.zeros(1, 32, 32, 32)), torch.zeros(1, 16, 4, 4))


def test_build_is_seed_deterministic():
    a = build_model(ModelConfig(seed=3))
    b = build_model(ModelConfig(seed=3))
    c = build_model(ModelConfig(seed=4))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)
    assert network.parameter_count(a) == network.parameter_count(c)
    x = inputs(a.config)
    assert torch.equal(a(*x), b(*x))


def test_build_does_not_touch_global_rng():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    build_model(ModelConfig())
    assert torch.equal(torch.rand(3), expected)


def test_forward_finite_on_random_batches():
    model = build_model(ModelConfig(image_size=32, stages=3, widths=(8, 16, 32)))
    for seed in range(3):
        ref, msk, aud = inputs(model.config, batch=3, seed=seed)
        with torch.no_grad():
            assert torch.isfinite(model(ref, msk, aud * 10)).all()


def test_model_forward_frame_api():
    model = build_model(ModelConfig(image_size=32, stages=3, widths=(8, 16, 32)))
    px = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)
    window = window_audio(np.zeros((20, 2, 1024), np.float32), 5)
    out = network.model_forward(Frame(px), Frame(px), window, model)
    assert out.pixels.shape == (3, 32, 32)
    assert 0 <= out.pixels.min() and out.pixels.max() <= 1


def test_end_to_end_gradient_probe():
    cfg = ModelConfig(image_size=32, stages=3, widths=(4, 8, 8), seed=1)
    model = build_model(cfg).double()
    ref, msk, aud = inputs(cfg, batch=1, dtype=torch.float64)
    tgt = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(9), dtype=torch.float64)

    def loss():
        return frequency_loss(model(ref, msk, aud), tgt)

    probes = [model.visual_fusion[0].filter.weight, model.audio_fusion.filter.weight,
              model.ref_encoder.stages[1][0].expand.weight, model.decoder.head[1].weight]
    model.zero_grad()
    loss().backward()
    for p in probes:
        idx = list(range(0, p.numel(), max(1, p.numel() // 5)))[:5]
        analytic = p.grad.view(-1)[idx].numpy()
        with torch.no_grad():
            numeric = numeric_grad(loss, p, indices=idx)
        assert rel_err(analytic, numeric) < 1e-3


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(image_size=32, stages=3, widths=(8, 16, 32), use_avfm=False, seed=2)
    model = build_model(cfg)
    path = tmp_path / "m.frk"
    network.save_checkpoint(path, model)
    assert path.read_bytes()[:4] == b"FRK1"
    back = network.load_checkpoint(path, expected_config=cfg)
    assert back.config == cfg
    x = inputs(cfg)
    model.eval()
    assert torch.equal(model(*x), back(*x))


def test_checkpoint_rejects_config_mismatch(tmp_path):
    cfg = ModelConfig(image_size=32, stages=3, widths=(8, 16, 32))
    path = tmp_path / "m.frk"
    network.save_checkpoint(path, build_model(cfg))
    with pytest.raises(ConfigError):
        network.load_checkpoint(path, expected_config=ModelConfig(image_size=32, stages=3, widths=(8, 16, 16)))
    (tmp_path / "bad.frk").write_bytes(b"FRK1CK")
    with pytest.raises(FormatError):
        network.load_checkpoint(tmp_path / "bad.frk")


def test_config_text_round_trip():
    cfg = ModelConfig(image_size=128, stages=3, widths=(4, 5, 6), expansion=3, use_vefm=False, seed=9)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
