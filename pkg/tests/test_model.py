import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from neid import losses
from neid.errors import BadChannelCount, ShapeMismatch
from neid.model import (VARIANTS, ArchConfig, IdentityStub, build_model, bicubic_resize_tensor,
                        pixel_shuffle, space_to_depth)
from neid.imgcore import bicubic_resize

TINY = ArchConfig(levels=2, base_channels=4)


def tiny(variant="full", seed=0):
    return build_model(ArchConfig(levels=2, base_channels=4, variant=variant), seed=seed, dtype=torch.float64)


class TestPixelShuffle:
    def test_single(self):
        x = torch.tensor([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        assert pixel_shuffle(x, 2).reshape(2, 2).tolist() == [[1, 2], [3, 4]]

    def test_mapping_definition(self):
        x = torch.arange(2 * 12 * 3 * 4, dtype=torch.float64).reshape(2, 12, 3, 4)
        out = pixel_shuffle(x, 2)
        r = 2
        for n in range(2):
            for c in range(3):
                for y in range(6):
                    for xx in range(8):
                        src = x[n, c * r * r + (y % r) * r + (xx % r), y // r, xx // r]
                        assert out[n, c, y, xx] == src

    def test_matches_torch(self):
        x = torch.randn(2, 12, 5, 7)
        assert torch.equal(pixel_shuffle(x), torch.nn.functional.pixel_shuffle(x, 2))

    def test_shape(self):
        assert pixel_shuffle(torch.zeros(3, 12, 5, 7)).shape == (3, 3, 10, 14)

    def test_roundtrip(self):
        x = torch.randn(2, 3, 10, 14)
        assert torch.equal(pixel_shuffle(space_to_depth(x)), x)
        y = torch.randn(2, 12, 5, 7)
        assert torch.equal(space_to_depth(pixel_shuffle(y)), y)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
    def test_permutation(self, n, c, h, w):
        x = torch.randn(n, 4 * c, h, w, dtype=torch.float64)
        out = pixel_shuffle(x)
        assert torch.equal(out.flatten().sort().values, x.flatten().sort().values)

    def test_bad_channels(self):
        with pytest.raises(BadChannelCount):
            pixel_shuffle(torch.zeros(1, 6, 2, 2))


class TestInit:
    def test_same_seed(self):
        a, b = build_model(seed=3), build_model(seed=3)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_statistics_and_bias(self):
        model = build_model(seed=1)
        checked = 0
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                assert torch.count_nonzero(p) == 0
            elif p.numel() >= 10_000:
                vals = p.detach().double()
                n = vals.numel()
                assert abs(vals.mean().item()) < 3 * 0.02 / np.sqrt(n)
                assert abs(vals.std().item() - 0.02) < 0.05 * 0.02
                checked += 1
        assert checked > 10

    def test_names_unique_and_stable(self):
        names = [n for n, _ in build_model().named_parameters()]
        assert len(names) == len(set(names))
        assert names == [n for n, _ in build_model(seed=9).named_parameters()]
        enc = [n for n in names if "encoder" in n]
        assert all(n.startswith("encoder.") for n in enc)


class TestShapes:
    def test_encoder_shapes(self):
        model = build_model()
        skips, bottleneck = model.encode(torch.rand(2, 3, 128, 128))
        assert [tuple(s.shape[1:]) for s in skips] == [(32, 128, 128), (64, 64, 64), (128, 32, 32), (256, 16, 16)]
        assert bottleneck.shape == (2, 256, 8, 8)

    def test_zero_input_zero_features(self):
        model = build_model()
        skips, bottleneck = model.encode(torch.zeros(1, 3, 64, 64))
        assert all(torch.count_nonzero(s) == 0 for s in skips)
        assert torch.count_nonzero(bottleneck) == 0

    def test_decoders_and_fusion(self):
        model = build_model()
        skips, bottleneck = model.encode(torch.rand(2, 3, 128, 128))
        feats, dr = model.decode_dr(bottleneck, skips)
        assert feats.shape == (2, 32, 128, 128) and dr.shape == (2, 3, 256, 256)
        assert dr.min() > 0 and dr.max() < 1
        feats2, none = model.decode_dr(bottleneck, skips, with_head=False)
        assert none is None and torch.equal(feats, feats2)
        fused = model.ff_fuse(bottleneck, feats)
        assert fused.shape == bottleneck.shape
        w = model.ff.attention(feats)
        assert w.shape == (2, 256) and w.min() > 0 and w.max() < 1
        le = model.decode_le(fused, skips)
        assert le.shape == (2, 3, 256, 256) and le.min() > 0 and le.max() < 1

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_forward_contract(self, variant):
        model = build_model(ArchConfig(variant=variant))
        out = model(torch.rand(2, 3, 128, 128), mode="train")
        assert out.le_image.shape == (2, 3, 256, 256)
        if variant in ("le_dr", "full"):
            assert out.dr_image.shape == (2, 3, 256, 256)
        else:
            assert out.dr_image is None
        infer = model(torch.rand(2, 3, 128, 128), mode="infer")
        assert infer.dr_image is None and infer.le_image.shape == (2, 3, 256, 256)

    def test_variant_submodules(self):
        le = build_model(ArchConfig(variant="le_only"))
        assert not hasattr(le, "ff") and not hasattr(le, "dr_decoder")
        le_dr = build_model(ArchConfig(variant="le_dr"))
        assert hasattr(le_dr, "dr_decoder") and not hasattr(le_dr, "ff")
        unet = build_model(ArchConfig(variant="unet_baseline"))
        assert hasattr(unet, "baseline_head") and not hasattr(unet, "le_head")

    def test_le_only_uses_bottleneck_directly(self):
        model = tiny("le_only")
        x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        skips, bottleneck = model.encode(x)
        assert torch.equal(model(x).le_image, model.decode_le(bottleneck, skips))

    def test_full_image_geometry(self):
        model = build_model(ArchConfig(levels=4, base_channels=8))
        out = model(torch.rand(1, 3, 48, 80), mode="infer")
        assert out.le_image.shape == (1, 3, 96, 160)

    def test_bad_input(self):
        with pytest.raises(ShapeMismatch):
            build_model()(torch.rand(1, 3, 100, 128))
        with pytest.raises(ShapeMismatch):
            build_model()(torch.rand(1, 1, 128, 128))

    def test_deterministic(self):
        model = build_model(ArchConfig(levels=3, base_channels=8))
        x = torch.rand(2, 3, 32, 32)
        assert torch.equal(model(x).le_image, model(x).le_image)

    def test_fusion_limit_weights_one(self):
        model = tiny()
        with torch.no_grad():
            model.ff.fc2.bias.fill_(60.0)
        skips, bottleneck = model.encode(torch.rand(2, 3, 16, 16, dtype=torch.float64))
        feats, _ = model.decode_dr(bottleneck, skips)
        fused = model.ff_fuse(bottleneck, feats)
        assert (fused - bottleneck).abs().max() < 1e-5


def test_bicubic_tensor_matches_numpy():
    img = np.random.default_rng(0).random((12, 20, 3))
    x = torch.from_numpy(img.transpose(2, 0, 1)[None].copy())
    out = bicubic_resize_tensor(x, 24, 40)[0].numpy().transpose(1, 2, 0)
    assert np.abs(out - bicubic_resize(img, 24, 40, clamp=False)).max() < 1e-12


def test_identity_stub_is_bicubic():
    img = np.random.default_rng(1).random((8, 8, 3))
    x = torch.from_numpy(img.transpose(2, 0, 1)[None].copy())
    out = IdentityStub()(x).le_image[0].numpy().transpose(1, 2, 0)
    assert np.abs(out - bicubic_resize(img, 16, 16)).max() < 1e-12


def _joint_loss(model, x, t_le, t_dr):
    return losses.total_loss(model(x, "train"), t_le, t_dr).total


def test_parameter_gradients_vs_finite_differences():
    torch.manual_seed(0)
    model = tiny()
    # larger weights push activations away from the near-constant sigmoid regime
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.2 * torch.randn_like(p))
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    t_le = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    t_dr = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    loss = _joint_loss(model, x, t_le, t_dr)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    rng = np.random.default_rng(0)
    eps = 1e-5
    worst = 0.0
    for name, p, g in zip(names, params, grads):
        flat = p.data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = _joint_loss(model, x, t_le, t_dr).item()
                flat[idx] = orig - eps
                down = _joint_loss(model, x, t_le, t_dr).item()
                flat[idx] = orig
            fd = (up - down) / (2 * eps)
            analytic = g.view(-1)[idx].item()
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6)
            worst = max(worst, rel)
            assert rel < 1e-3, (name, idx, fd, analytic)
    assert worst < 1e-3


def test_encoder_gradient_is_sum_of_branches():
    model = tiny()
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    t_le = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    t_dr = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    cfg = losses.LossConfig()
    enc = [p for n, p in model.named_parameters() if n.startswith("encoder.")]
    out = model(x, "train")
    le_term = losses.huber_loss(out.le_image, t_le) + cfg.lambda_color * sum(losses.color_loss(out.le_image, t_le))
    dr_term = cfg.lambda_mse * losses.mse_loss(out.dr_image, t_dr)
    g_le = torch.autograd.grad(le_term, enc, retain_graph=True)
    g_dr = torch.autograd.grad(dr_term, enc, retain_graph=True)
    g_joint = torch.autograd.grad(losses.total_loss(out, t_le, t_dr, cfg).total, enc)
    for a, b, j in zip(g_le, g_dr, g_joint):
        assert (a + b - j).abs().max() < 1e-10
    assert any(b.abs().max() > 0 for b in g_dr)
