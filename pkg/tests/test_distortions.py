import numpy as np
import pytest
import torch

from tilemark.distortions import (
    DEFAULT_RANGES,
    KINDS,
    DistortionConfig,
    DistortionContext,
    DistortionError,
    DistortionPool,
    apply_config,
    apply_cropout,
    apply_dropout,
    apply_jpeg,
    apply_quantization,
    collude,
    eval_configs,
    sample_distortion,
)
from tilemark.imaging import psnr


def rand_image(seed=0, c=3, h=16, w=16, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(lo, hi, (c, h, w)).astype(np.float32))


class TestConfigValidation:
    def test_unknown_kind(self):
        with pytest.raises(DistortionError, match="unknown"):
            DistortionConfig(kind="blur")

    @pytest.mark.parametrize("kind,params", [
        ("cropout", {"area": 0.0}),
        ("cropout", {"area": 1.5}),
        ("cropout", {}),
        ("dropout", {"p": -0.1}),
        ("dropout", {"p": 1.2}),
        ("jpeg", {"quality": 0}),
        ("jpeg", {"quality": 101}),
        ("quantization", {"bits": 0}),
        ("quantization", {"bits": 9}),
    ])
    def test_bad_params(self, kind, params):
        with pytest.raises(DistortionError):
            DistortionConfig(kind=kind, params=params)

    def test_context_shape_check(self):
        with pytest.raises(DistortionError, match="original"):
            DistortionContext(augmented=rand_image(), original=rand_image(h=8))


class TestCropout:
    def test_full_area_is_identity(self):
        x = rand_image(1)
        assert torch.equal(apply_cropout(x, 1.0, seed=3), x)

    def test_single_pixel_upscale_is_constant(self):
        x = torch.tensor([[[0.5, -0.2], [0.1, 0.9]]])
        out = apply_cropout(x, 0.25, seed=0)
        assert out.shape == x.shape
        picked = out[0, 0, 0]
        # constant up to interpolation rounding, and equal to a source pixel
        assert torch.allclose(out, picked.expand_as(out), atol=1e-6)
        assert torch.isclose(x, picked, atol=1e-6).any()

    def test_deterministic_per_seed(self):
        x = rand_image(2, h=32, w=32)
        a = apply_cropout(x, 0.5, seed=7)
        b = apply_cropout(x, 0.5, seed=7)
        assert torch.equal(a, b)

    def test_seeds_vary_rectangles(self):
        x = rand_image(3, h=64, w=64)
        outs = {apply_cropout(x, 0.3, seed=s).numpy().tobytes() for s in range(12)}
        assert len(outs) > 1

    def test_degenerate_crop_rejected(self):
        x = rand_image(4, h=4, w=4)
        with pytest.raises(DistortionError, match="degenerates"):
            apply_cropout(x, 0.001, seed=0)

    def test_gradient_flows(self):
        x = rand_image(5, h=16, w=16).requires_grad_(True)
        apply_cropout(x, 0.5, seed=1).sum().backward()
        assert x.grad is not None
        assert torch.isfinite(x.grad).all()
        assert x.grad.abs().sum() > 0

    def test_patch_mode_keeps_rect_and_restores_rest(self):
        aug = torch.zeros(3, 16, 16)
        orig = torch.ones(3, 16, 16)
        out = apply_cropout(aug, 0.25, seed=4, mode="patch", orig=orig)
        kept = int((out == 0.0).sum())
        assert kept == 3 * 8 * 8  # the kept rectangle stays augmented
        assert int((out == 1.0).sum()) == 3 * (256 - 64)

    def test_patch_mode_requires_original(self):
        with pytest.raises(DistortionError, match="original"):
            apply_cropout(rand_image(6), 0.5, seed=0, mode="patch")

    def test_unknown_mode_rejected(self):
        with pytest.raises(DistortionError, match="mode"):
            apply_cropout(rand_image(7), 0.5, seed=0, mode="tile")


class TestDropout:
    def test_p_zero_keeps_augmented(self):
        aug, orig = rand_image(1), rand_image(2)
        assert torch.equal(apply_dropout(aug, orig, 0.0, seed=0), aug)

    def test_p_one_returns_original(self):
        aug, orig = rand_image(3), rand_image(4)
        assert torch.equal(apply_dropout(aug, orig, 1.0, seed=0), orig)

    def test_replacement_fraction_binomial_bound(self):
        aug = torch.zeros(3, 256, 256)
        orig = torch.ones(3, 256, 256)
        out = apply_dropout(aug, orig, 0.5, seed=9)
        frac = float((out == 1.0).float().mean())
        assert abs(frac - 0.5) < 0.02  # 3 sigma is ~0.006 over 65536 pixels

    def test_pixelwise_mask_spans_channels(self):
        aug = torch.zeros(3, 32, 32)
        orig = torch.ones(3, 32, 32)
        out = apply_dropout(aug, orig, 0.4, seed=5)
        per_channel = out.reshape(3, -1)
        assert torch.equal(per_channel[0], per_channel[1])
        assert torch.equal(per_channel[0], per_channel[2])

    def test_deterministic(self):
        aug, orig = rand_image(6), rand_image(7)
        assert torch.equal(apply_dropout(aug, orig, 0.3, seed=2),
                           apply_dropout(aug, orig, 0.3, seed=2))

    def test_shape_mismatch(self):
        with pytest.raises(DistortionError, match="mismatch"):
            apply_dropout(rand_image(1), rand_image(2, h=8), 0.5, seed=0)


class TestJpeg:
    def test_constant_midgray_survives(self):
        x = torch.zeros(3, 64, 64)
        out = apply_jpeg(x, 50)
        assert psnr(x.numpy(), out.numpy()) > 45.0

    def test_quality_monotonicity_spot_check(self):
        rng = np.random.default_rng(10)
        base = rng.uniform(-0.7, 0.7, (3, 8, 8))
        x = torch.from_numpy(np.repeat(np.repeat(base, 8, axis=1), 8, axis=2).astype(np.float32))
        hi = apply_jpeg(x, 95)
        lo = apply_jpeg(x, 25)
        assert psnr(x.numpy(), hi.numpy()) > psnr(x.numpy(), lo.numpy())

    def test_shape_and_range(self):
        x = rand_image(11, h=24, w=40)
        out = apply_jpeg(x, 30)
        assert out.shape == x.shape
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_deterministic(self):
        x = rand_image(12)
        assert torch.equal(apply_jpeg(x, 60), apply_jpeg(x, 60))

    def test_straight_through_gradient(self):
        x = rand_image(13).requires_grad_(True)
        out = apply_jpeg(x, 50)
        upstream = rand_image(14)
        out.backward(upstream)
        assert torch.equal(x.grad, upstream)

    def test_grayscale_supported(self):
        x = rand_image(15, c=1)
        assert apply_jpeg(x, 80).shape == x.shape

    def test_bad_quality(self):
        with pytest.raises(DistortionError):
            apply_jpeg(rand_image(16), 0)


class TestQuantization:
    def test_eight_bit_grid_fixed_point(self):
        from tilemark.imaging import from_uint8

        u8 = np.arange(256, dtype=np.uint8).reshape(16, 16)
        x = torch.from_numpy(from_uint8(u8)).unsqueeze(0)
        out = apply_quantization(x, 8)
        assert torch.equal(out, x)

    def test_one_bit_binarizes(self):
        x = rand_image(17)
        out = apply_quantization(x, 1)
        assert set(torch.unique(out).tolist()) <= {-1.0, 1.0}

    def test_matches_scalar_nearest_level_loop(self):
        x = rand_image(18, h=8, w=8)
        bits = 3
        levels = [2.0 * k / (2**bits - 1) - 1.0 for k in range(2**bits)]
        out = apply_quantization(x, bits)
        flat_in = x.flatten().tolist()
        flat_out = out.flatten().tolist()
        for value, got in zip(flat_in, flat_out):
            nearest = min(levels, key=lambda lv: abs(value - lv))
            assert got == np.float32(nearest)

    def test_straight_through_gradient(self):
        x = rand_image(19).requires_grad_(True)
        out = apply_quantization(x, 2)
        upstream = rand_image(20)
        out.backward(upstream)
        assert torch.equal(x.grad, upstream)

    def test_idempotent(self):
        x = rand_image(21)
        once = apply_quantization(x, 4)
        assert torch.equal(apply_quantization(once, 4), once)


class TestCollusion:
    def test_average_of_equal_inputs_is_identity(self):
        x = rand_image(22)
        assert torch.allclose(collude(x, x, "average"), x)

    def test_average_of_extremes_is_zero(self):
        lo = torch.full((3, 8, 8), -1.0)
        hi = torch.full((3, 8, 8), 1.0)
        assert torch.all(collude(lo, hi, "average") == 0.0)

    def test_alternate_matches_parity_loop(self):
        a, b = rand_image(23, h=4, w=4), rand_image(24, h=4, w=4)
        out = collude(a, b, "alternate")
        for y in range(4):
            for x in range(4):
                src = a if (y + x) % 2 == 0 else b
                assert torch.equal(out[:, y, x], src[:, y, x])

    def test_average_commutes(self):
        a, b = rand_image(25), rand_image(26)
        assert torch.allclose(collude(a, b, "average"), collude(b, a, "average"))

    def test_alternate_partition(self):
        a, b = rand_image(27), rand_image(28)
        merged = collude(a, b, "alternate") + collude(b, a, "alternate")
        assert torch.allclose(merged, a + b)

    def test_row_interleave_option(self):
        a, b = rand_image(23, h=4, w=4), rand_image(24, h=4, w=4)
        out = collude(a, b, "alternate_rows")
        for y in range(4):
            src = a if y % 2 == 0 else b
            assert torch.equal(out[:, y, :], src[:, y, :])

    def test_unknown_mode(self):
        with pytest.raises(DistortionError, match="mode"):
            collude(rand_image(29), rand_image(30), "xor")


class TestApplyConfig:
    def test_identity_is_exact(self):
        x = rand_image(31)
        cfg = DistortionConfig(kind="identity")
        assert apply_config(cfg, DistortionContext(augmented=x)) is x

    def test_dropout_requires_original(self):
        cfg = DistortionConfig(kind="dropout", params={"p": 0.5})
        with pytest.raises(DistortionError, match="original"):
            apply_config(cfg, DistortionContext(augmented=rand_image(32)))

    def test_collusion_requires_partner(self):
        cfg = DistortionConfig(kind="collusion_avg")
        with pytest.raises(DistortionError, match="partner"):
            apply_config(cfg, DistortionContext(augmented=rand_image(33)))

    @pytest.mark.parametrize("kind", KINDS)
    def test_every_kind_preserves_shape_and_range(self, kind):
        x = rand_image(34, h=24, w=24)
        ctx = DistortionContext(augmented=x, original=rand_image(35, h=24, w=24),
                                partner_augmented=rand_image(36, h=24, w=24))
        cfg = eval_configs((kind,), seed=1)[0]
        out = apply_config(cfg, ctx)
        assert out.shape == x.shape
        assert out.min() >= -1.0 - 1e-6
        assert out.max() <= 1.0 + 1e-6


class TestSampler:
    def test_single_kind_pool(self):
        pool = DistortionPool(kinds=("jpeg",))
        for seed in range(10):
            assert sample_distortion(seed, pool).kind == "jpeg"

    def test_uniformity_over_kinds(self):
        pool = DistortionPool()
        rng = np.random.default_rng(0)
        counts = {k: 0 for k in KINDS}
        draws = 70_000
        for _ in range(draws):
            counts[sample_distortion(rng, pool).kind] += 1
        for kind in KINDS:
            assert abs(counts[kind] / draws - 1 / 7) < 0.01

    def test_equal_seeds_equal_sequences(self):
        pool = DistortionPool()
        seq_a = [sample_distortion(rng, pool).to_dict()
                 for rng in [np.random.default_rng(42)] for _ in range(50)]
        seq_b = [sample_distortion(rng, pool).to_dict()
                 for rng in [np.random.default_rng(42)] for _ in range(50)]
        assert seq_a == seq_b

    def test_params_within_ranges(self):
        pool = DistortionPool()
        rng = np.random.default_rng(1)
        for _ in range(500):
            cfg = sample_distortion(rng, pool)
            if cfg.kind == "cropout":
                lo, hi = DEFAULT_RANGES["cropout_area"]
                assert lo <= cfg.params["area"] <= hi
            elif cfg.kind == "dropout":
                lo, hi = DEFAULT_RANGES["dropout_p"]
                assert lo <= cfg.params["p"] <= hi
            elif cfg.kind == "jpeg":
                lo, hi = DEFAULT_RANGES["jpeg_quality"]
                assert lo <= cfg.params["quality"] <= hi
            elif cfg.kind == "quantization":
                lo, hi = DEFAULT_RANGES["quantization_bits"]
                assert lo <= cfg.params["bits"] <= hi

    def test_empty_pool_rejected(self):
        with pytest.raises(DistortionError, match="at least one"):
            DistortionPool(kinds=())

    def test_unknown_pool_kind_rejected(self):
        with pytest.raises(DistortionError, match="unknown"):
            DistortionPool(kinds=("jpeg", "rotate"))

    def test_duplicate_pool_kinds_rejected(self):
        with pytest.raises(DistortionError, match="duplicate"):
            DistortionPool(kinds=("jpeg", "jpeg"))

    def test_pool_round_trip(self):
        pool = DistortionPool(kinds=("jpeg", "identity"),
                              ranges={"jpeg_quality": (40, 60)})
        assert DistortionPool.from_dict(pool.to_dict()) == pool
