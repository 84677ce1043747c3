import numpy as np
import pytest
import torch

from motion_transfer.flow_stage import VIS_INVISIBLE, VIS_VISIBLE
from motion_transfer.foreground_stage import (DualPathGenerator,
                                              ForegroundStageConfig,
                                              PatchDiscriminator, WarpBlock,
                                              adversarial_losses, flow_to_grid,
                                              generate_foreground,
                                              identity_flow,
                                              train_foreground_stage)
from motion_transfer.perceptual import (IdentityExtractor,
                                        RandomFeatureExtractor,
                                        perceptual_loss)
from motion_transfer.regions import ParsingMap
from motion_transfer.synthetic import make_synthetic_video


def tiny_cfg(**kw):
    base = dict(num_classes=4, image_size=16, base_width=4, depth=2)
    base.update(kw)
    return ForegroundStageConfig(**base)


def make_samples(size=16, n=2, num_classes=4, seed=0):
    frames, parsings, _, _ = make_synthetic_video(n + 1, size, num_classes, seed)
    flow, vis = identity_flow(size, size)
    app = frames[0] * parsings[0].foreground[..., None]
    return [(app, parsings[t], flow, vis,
             frames[t] * parsings[t].foreground[..., None])
            for t in range(1, n + 1)]


class TestFlowToGrid:
    def test_zero_flow_is_identity_grid(self):
        grid = flow_to_grid(np.zeros((5, 7, 2), dtype=np.float32), 5, 7)
        assert grid.shape == (1, 5, 7, 2)
        assert grid[0, 0, 0].tolist() == [-1.0, -1.0]
        assert grid[0, -1, -1].tolist() == [1.0, 1.0]
        # linear spacing: one pixel = 2 / (n - 1) normalized units
        assert float(grid[0, 0, 1, 0] - grid[0, 0, 0, 0]) == pytest.approx(2 / 6)
        assert float(grid[0, 1, 0, 1] - grid[0, 0, 0, 1]) == pytest.approx(2 / 4)

    def test_unit_flow_shifts_grid(self):
        flow = np.zeros((4, 4, 2), dtype=np.float32)
        flow[..., 0] = 1.0
        grid = flow_to_grid(flow, 4, 4)
        base = flow_to_grid(np.zeros((4, 4, 2), dtype=np.float32), 4, 4)
        assert torch.allclose(grid[..., 0] - base[..., 0],
                              torch.full((1, 4, 4), 2 / 3))
        assert torch.allclose(grid[..., 1], base[..., 1])


class TestWarpBlock:
    def test_identity_init_with_zero_flow_returns_input(self, rng):
        block = WarpBlock(3)
        block.init_identity()
        feat = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        grid = flow_to_grid(np.zeros((8, 8, 2), dtype=np.float32), 8, 8)
        ones = torch.ones((1, 1, 8, 8))
        out = block(feat, grid, ones, torch.zeros_like(ones))
        assert torch.allclose(out, feat, atol=1e-6)

    def test_identity_init_applies_warp(self, rng):
        # residual branch off: output is exactly the warped features
        block = WarpBlock(1)
        block.init_identity()
        feat = torch.from_numpy(
            np.tile(np.arange(8, dtype=np.float32), (8, 1))[None, None])
        flow = np.zeros((8, 8, 2), dtype=np.float32)
        flow[..., 0] = 1.0
        grid = flow_to_grid(flow, 8, 8)
        ones = torch.ones((1, 1, 8, 8))
        out = block(feat, grid, ones, torch.zeros_like(ones))
        assert torch.allclose(out[0, 0, :, :-1], feat[0, 0, :, 1:], atol=1e-5)

    def test_visibility_masks_change_residual(self, rng):
        torch.manual_seed(0)
        block = WarpBlock(2)
        feat = torch.from_numpy(rng.uniform(size=(1, 2, 8, 8)).astype(np.float32))
        grid = flow_to_grid(np.zeros((8, 8, 2), dtype=np.float32), 8, 8)
        ones = torch.ones((1, 1, 8, 8))
        zeros = torch.zeros_like(ones)
        all_visible = block(feat, grid, ones, zeros)
        all_invisible = block(feat, grid, zeros, ones)
        assert not torch.allclose(all_visible, all_invisible)


class TestDualPathGenerator:
    def test_output_shape_and_range(self, rng):
        cfg = tiny_cfg()
        torch.manual_seed(0)
        gen = DualPathGenerator(cfg)
        app = torch.from_numpy(rng.uniform(size=(1, 3, 16, 16)).astype(np.float32))
        parsing = torch.from_numpy(rng.uniform(size=(1, 4, 16, 16)).astype(np.float32))
        flow, vis = identity_flow(16, 16)
        with torch.no_grad():
            out = gen(app, parsing, flow, vis)
        assert out.shape == (1, 3, 16, 16)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_resolution_mismatch_rejected(self, rng):
        cfg = tiny_cfg()
        gen = DualPathGenerator(cfg)
        app = torch.zeros((1, 3, 16, 16))
        parsing = torch.zeros((1, 4, 8, 8))
        flow, vis = identity_flow(16, 16)
        with pytest.raises(ValueError):
            gen(app, parsing, flow, vis)
        with pytest.raises(ValueError):
            gen(app, torch.zeros((1, 4, 16, 16)), *identity_flow(8, 8))

    def test_generate_foreground_numpy_wrapper(self, rng):
        cfg = tiny_cfg()
        torch.manual_seed(1)
        gen = DualPathGenerator(cfg)
        app = rng.uniform(size=(16, 16, 3)).astype(np.float32)
        parsing = ParsingMap(
            rng.integers(0, 4, size=(16, 16)).astype(np.int32), 4)
        flow, vis = identity_flow(16, 16)
        out = generate_foreground(gen, app, parsing, flow, vis)
        assert out.shape == (16, 16, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestAdversarialLosses:
    class ConstantDisc(torch.nn.Module):
        def __init__(self, value):
            super().__init__()
            self.value = value

        def forward(self, *tensors):
            # keep the graph connected to the candidate image
            return tensors[-1].mean() * 0.0 + self.value

    def test_indifferent_discriminator(self):
        # D == 0.5 everywhere: d_loss = -2 log 0.5 = 2 log 2, g = log 2
        fake = torch.rand((1, 3, 8, 8), requires_grad=True)
        real = torch.rand((1, 3, 8, 8))
        d_loss, g_loss = adversarial_losses(self.ConstantDisc(0.5),
                                            (real,), (fake,))
        assert float(d_loss.detach()) == pytest.approx(2 * np.log(2), abs=1e-6)
        assert float(g_loss.detach()) == pytest.approx(np.log(2), abs=1e-6)

    def test_perfect_discriminator(self):
        fake = torch.rand((1, 3, 8, 8), requires_grad=True)
        real = torch.rand((1, 3, 8, 8))

        class Oracle(torch.nn.Module):
            def forward(self, x):
                return x.mean() * 0.0 + (1.0 if x is real else 0.0)

        d_loss, g_loss = adversarial_losses(Oracle(), (real,), (fake,))
        assert float(d_loss.detach()) == pytest.approx(0.0, abs=1e-6)
        assert float(g_loss.detach()) == pytest.approx(-np.log(1e-8), rel=1e-6)

    def test_d_loss_detached_from_generator(self, rng):
        torch.manual_seed(5)
        cfg = tiny_cfg()
        disc = PatchDiscriminator(cfg)
        app = torch.rand((1, 3, 16, 16))
        parsing = torch.rand((1, 4, 16, 16))
        real = torch.rand((1, 3, 16, 16))
        fake = torch.rand((1, 3, 16, 16), requires_grad=True)
        d_loss, _ = adversarial_losses(disc, (app, parsing, real),
                                       (app, parsing, fake))
        d_loss.backward()
        assert fake.grad is None

    def test_g_loss_gradient_matches_finite_differences(self, rng):
        torch.manual_seed(3)
        cfg = tiny_cfg()
        disc = PatchDiscriminator(cfg).double()
        app = torch.from_numpy(rng.uniform(size=(1, 3, 16, 16)))
        parsing = torch.from_numpy(rng.uniform(size=(1, 4, 16, 16)))
        real = torch.from_numpy(rng.uniform(size=(1, 3, 16, 16)))
        fake = torch.from_numpy(
            rng.uniform(size=(1, 3, 16, 16))).requires_grad_(True)

        def g_of(candidate):
            _, g = adversarial_losses(disc, (app, parsing, real),
                                      (app, parsing, candidate))
            return g

        g_of(fake).backward()
        step = 1e-5
        for _ in range(10):
            i = tuple(rng.integers(0, s) for s in fake.shape)
            with torch.no_grad():
                bumped = fake.detach().clone()
                bumped[i] += step
                f_plus = float(g_of(bumped))
                bumped[i] -= 2 * step
                f_minus = float(g_of(bumped))
            numeric = (f_plus - f_minus) / (2 * step)
            assert float(fake.grad[i]) == pytest.approx(numeric, rel=1e-3,
                                                        abs=1e-8)


class TestPerceptualLoss:
    def test_zero_for_identical_inputs(self, rng):
        x = torch.from_numpy(rng.uniform(size=(1, 3, 16, 16)).astype(np.float32))
        extractor = RandomFeatureExtractor(seed=1)
        assert float(perceptual_loss(extractor, x, x)) == pytest.approx(0.0)

    def test_identity_extractor_reduces_to_l1(self, rng):
        a = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        b = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        loss = perceptual_loss(IdentityExtractor(), a, b)
        assert float(loss) == pytest.approx(float((a - b).abs().mean()),
                                            abs=1e-7)

    def test_hand_value_with_identity_extractor(self):
        a = torch.zeros((1, 3, 4, 4))
        b = torch.full((1, 3, 4, 4), 0.25)
        assert float(perceptual_loss(IdentityExtractor(), a, b)) == \
            pytest.approx(0.25, abs=1e-7)

    def test_symmetry_and_triangle_inequality(self, rng):
        extractor = RandomFeatureExtractor(seed=2)
        a, b, c = (torch.from_numpy(
            rng.uniform(size=(1, 3, 16, 16)).astype(np.float32))
            for _ in range(3))
        ab = float(perceptual_loss(extractor, a, b))
        ba = float(perceptual_loss(extractor, b, a))
        ac = float(perceptual_loss(extractor, a, c))
        cb = float(perceptual_loss(extractor, c, b))
        assert ab == pytest.approx(ba, abs=1e-7)
        assert ab <= ac + cb + 1e-7

    def test_extractor_deterministic_for_seed(self, rng):
        x = torch.from_numpy(rng.uniform(size=(1, 3, 16, 16)).astype(np.float32))
        f1 = RandomFeatureExtractor(seed=7)(x)
        f2 = RandomFeatureExtractor(seed=7)(x)
        assert all(torch.equal(a, b) for a, b in zip(f1, f2))

    def test_weight_validation(self, rng):
        a = torch.zeros((1, 3, 8, 8))
        with pytest.raises(ValueError):
            perceptual_loss(IdentityExtractor(), a, a, layer_weights=[1.0, 1.0])
        with pytest.raises(ValueError):
            perceptual_loss(IdentityExtractor(), a, a, layer_weights=[-1.0])

    def test_zero_weights_give_zero(self, rng):
        a = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        b = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        assert float(perceptual_loss(IdentityExtractor(), a, b,
                                     layer_weights=[0.0])) == 0.0


class TestIdentityFlow:
    def test_values(self):
        flow, vis = identity_flow(5, 7)
        assert flow.shape == (5, 7, 2) and not flow.any()
        assert vis.shape == (5, 7) and (vis == VIS_VISIBLE).all()
        assert not (vis == VIS_INVISIBLE).any()


class TestTrainForegroundStage:
    def test_same_seed_bitwise_identical(self):
        samples = make_samples()
        _, _, a = train_foreground_stage(samples, tiny_cfg(), seed=2, steps=4)
        _, _, b = train_foreground_stage(samples, tiny_cfg(), seed=2, steps=4)
        assert a == b

    def test_zero_lr_constant_losses(self):
        samples = make_samples(n=1)
        cfg = tiny_cfg(gen_lr=0.0, disc_lr=0.0)
        _, _, curves = train_foreground_stage(samples, cfg, seed=0, steps=5)
        assert len(set(curves["g_total"])) == 1
        assert len(set(curves["d"])) == 1

    def test_l1_only_training_reduces_l1(self):
        samples = make_samples(size=16, n=1)
        cfg = tiny_cfg(lambda_adv=0.0, lambda_per=0.0)
        _, _, curves = train_foreground_stage(samples, cfg, seed=1, steps=60)
        assert np.mean(curves["g_l1"][-10:]) < np.mean(curves["g_l1"][:10])

    def test_no_flow_ablation_runs(self):
        samples = make_samples(n=1)
        cfg = tiny_cfg(use_flow=False)
        gen, _, curves = train_foreground_stage(samples, cfg, seed=0, steps=2)
        assert len(curves["g_total"]) == 2
        app, parsing, _, _, _ = samples[0]
        out = generate_foreground(gen, app, parsing, *identity_flow(16, 16))
        assert out.shape == (16, 16, 3)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_foreground_stage([], tiny_cfg(), seed=0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            tiny_cfg(lambda_adv=-0.1)

    def test_checkpoint_sidecar_records_loss_weights(self, tmp_path):
        from motion_transfer.checkpoint import load_checkpoint

        samples = make_samples(n=1)
        path = tmp_path / "fg.pt"
        train_foreground_stage(samples, tiny_cfg(), seed=0, steps=1,
                               checkpoint_path=path)
        state, cfg = load_checkpoint(path)
        assert set(state) == {"generator", "discriminator"}
        assert cfg["lambda_adv"] == 0.01
        assert cfg["lambda_l1"] == 1.0
        assert cfg["lambda_per"] == 1.0
        assert cfg["gen_lr"] == 2e-4
        assert cfg["disc_lr"] == 2e-5
