import dataclasses

import numpy as np
import pytest
import torch

from relattr.networks import (
    CheckpointMismatchError,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    ParameterSnapshot,
    SwitchableNorm2d,
    config_hash,
    count_parameters,
    d_match_forward,
    generator_forward,
    image_to_tensor,
    init_parameters,
    load_checkpoint,
    load_models,
    relatives_to_tensor,
    save_checkpoint,
    tensor_to_image,
    trunk_forward,
)
from relattr.types import DimensionError, ImageBatch

G_SMALL = GeneratorConfig(
    n_attributes=4, base_channels=8, n_residual_blocks=2, image_size=32,
    normalization="instance",
)
D_SMALL = DiscriminatorConfig(
    n_attributes=4, base_channels=8, n_trunk_layers=3, image_size=32
)


@pytest.fixture(scope="module")
def gen():
    torch.manual_seed(0)
    g = Generator(G_SMALL)
    init_parameters(g)
    return g.eval()


@pytest.fixture(scope="module")
def disc():
    torch.manual_seed(1)
    d = Discriminator(D_SMALL)
    init_parameters(d)
    return d.eval()


def rand_images(b, size=32, seed=0):
    rng = np.random.default_rng(seed)
    return ImageBatch(rng.uniform(-1, 1, size=(b, size, size, 3)).astype(np.float32))


class TestConfigs:
    def test_generator_validation(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_attributes=4, base_channels=4)
        with pytest.raises(ValueError):
            GeneratorConfig(n_attributes=4, n_residual_blocks=0)
        with pytest.raises(ValueError):
            GeneratorConfig(n_attributes=4, normalization="batch")
        with pytest.raises(ValueError):
            GeneratorConfig(n_attributes=4, image_size=30)

    def test_discriminator_validation(self):
        # image size must survive n_trunk_layers halvings
        with pytest.raises(ValueError):
            DiscriminatorConfig(n_attributes=4, n_trunk_layers=6, image_size=32)

    def test_trunk_channels(self):
        cfg = DiscriminatorConfig(n_attributes=17, base_channels=64, n_trunk_layers=6)
        assert cfg.trunk_channels == 2048

    def test_config_hash_sensitivity(self):
        a = config_hash(G_SMALL)
        assert a == config_hash(G_SMALL)
        assert a != config_hash(dataclasses.replace(G_SMALL, base_channels=16))


class TestGenerator:
    def test_output_shape_and_range(self, gen):
        x = image_to_tensor(rand_images(2))
        v = torch.zeros(2, 4)
        out = gen(x, v)
        assert out.shape == (2, 3, 32, 32)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_edits_depend_on_relative_vector(self, gen):
        x = image_to_tensor(rand_images(1))
        zero = gen(x, torch.zeros(1, 4))
        for k in range(4):
            v = torch.zeros(1, 4)
            v[0, k] = 1.0
            assert not torch.equal(gen(x, v), zero)

    def test_input_validation(self, gen):
        with pytest.raises(DimensionError):
            gen(torch.zeros(1, 3, 30, 32), torch.zeros(1, 4))
        with pytest.raises(DimensionError):
            gen(torch.zeros(1, 3, 32, 32), torch.zeros(1, 3))
        with pytest.raises(DimensionError):
            gen(torch.zeros(1, 1, 32, 32), torch.zeros(1, 4))

    def test_accepts_other_multiples_of_four(self, gen):
        # fully convolutional: config size is the training size, not a cage
        out = gen(torch.zeros(1, 3, 48, 48), torch.zeros(1, 4))
        assert out.shape == (1, 3, 48, 48)

    def test_deterministic(self, gen):
        x = image_to_tensor(rand_images(1, seed=4))
        v = torch.full((1, 4), 0.5)
        assert torch.equal(gen(x, v), gen(x, v))

    def test_parameter_count_near_published_scale(self):
        cfg = GeneratorConfig(n_attributes=17)
        n = count_parameters(Generator(cfg))
        assert abs(n - 8_000_000) / 8_000_000 < 0.15

    def test_switchable_norm_variant_runs(self):
        torch.manual_seed(2)
        g = Generator(dataclasses.replace(G_SMALL, normalization="switchable"))
        init_parameters(g)
        out = g.eval()(torch.zeros(2, 3, 32, 32), torch.zeros(2, 4))
        assert torch.isfinite(out).all()


class TestDiscriminator:
    def test_feature_shape(self, disc):
        f = disc.features(image_to_tensor(rand_images(2)))
        # three stride-2 layers: 32 -> 4 spatial, channels 8 * 2**2
        assert f.shape == (2, 32, 4, 4)

    def test_published_feature_shape(self):
        cfg = DiscriminatorConfig(n_attributes=17)
        d = Discriminator(cfg)
        f = d.features(torch.zeros(1, 3, 256, 256))
        assert f.shape == (1, 2048, 4, 4)

    def test_parameter_count_near_published_scale(self):
        n = count_parameters(Discriminator(DiscriminatorConfig(n_attributes=17)))
        assert abs(n - 53_000_000) / 53_000_000 < 0.15

    def test_real_score_is_a_map(self, disc):
        f = disc.features(image_to_tensor(rand_images(2)))
        s = disc.real_score(f)
        assert s.shape == (2, 1, 4, 4)

    def test_match_score_shape_and_conditioning(self, disc):
        f = disc.features(image_to_tensor(rand_images(2, seed=1)))
        g = disc.features(image_to_tensor(rand_images(2, seed=2)))
        v = torch.zeros(2, 4)
        s = disc.match_score(f, v, g)
        assert s.shape == (2, 1, 4, 4)
        v2 = v.clone()
        v2[:, 0] = 1.0
        assert not torch.equal(disc.match_score(f, v2, g), s)
        assert not torch.equal(disc.match_score(g, v, f), s)

    def test_match_head_widths(self, disc):
        ct = D_SMALL.trunk_channels
        assert disc.match_hidden.in_channels == 2 * ct + 4
        assert disc.match_hidden.out_channels == ct
        assert disc.match_out.out_channels == 1

    def test_interp_score_is_per_image_scalar(self, disc):
        f = disc.features(image_to_tensor(rand_images(3)))
        assert disc.interp_score(f).shape == (3,)

    def test_interp_score_batch_consistent(self, disc):
        x = image_to_tensor(rand_images(4, seed=9))
        batched = disc.interp_score(disc.features(x))
        singles = torch.cat(
            [disc.interp_score(disc.features(x[i : i + 1])) for i in range(4)]
        )
        assert torch.allclose(batched, singles, atol=1e-6)

    def test_heads_share_one_trunk(self, disc):
        # all three heads consume the same feature tensor
        x = image_to_tensor(rand_images(1))
        f = disc.features(x)
        assert disc.real_score(f).shape[0] == 1
        assert disc.match_score(f, torch.zeros(1, 4), f).shape[0] == 1
        assert disc.interp_score(f).shape == (1,)

    def test_feature_validation(self, disc):
        with pytest.raises(DimensionError):
            disc.features(torch.zeros(1, 3, 30, 32))
        f = disc.features(torch.zeros(1, 3, 32, 32))
        with pytest.raises(DimensionError):
            disc.match_score(f, torch.zeros(1, 3), f)

    def test_wrappers_match_methods(self, disc):
        imgs = rand_images(2, seed=3)
        f = trunk_forward(disc, imgs)
        assert torch.equal(f, disc.features(image_to_tensor(imgs)))
        v = np.array([1.0, 0.0, -1.0, 0.0])
        s = d_match_forward(disc, f, v, f)
        expected = disc.match_score(f, relatives_to_tensor(v, 2, 4), f)
        assert torch.equal(s, expected)


class TestInit:
    def test_orthogonal_kernels_and_zero_biases(self):
        torch.manual_seed(3)
        d = Discriminator(D_SMALL)
        init_parameters(d)
        for m in d.modules():
            if isinstance(m, torch.nn.Conv2d):
                w = m.weight.reshape(m.weight.shape[0], -1)
                prod = w @ w.T if w.shape[0] <= w.shape[1] else w.T @ w
                eye = torch.eye(prod.shape[0])
                assert torch.allclose(prod, eye, atol=1e-5)
                if m.bias is not None:
                    assert torch.count_nonzero(m.bias) == 0

    def test_switchable_norm_starts_neutral(self):
        sn = SwitchableNorm2d(6)
        assert torch.equal(sn.mean_weight, torch.zeros(3))
        assert torch.equal(sn.weight, torch.ones(6))
        assert torch.equal(sn.running_var, torch.ones(6))


class TestSwitchableNorm:
    def test_normalizes_in_train_mode(self):
        torch.manual_seed(4)
        sn = SwitchableNorm2d(5).train()
        x = torch.randn(4, 5, 8, 8) * 3 + 7
        y = sn(x)
        assert y.mean().abs() < 0.1
        assert abs(y.std() - 1.0) < 0.1

    def test_running_stats_feed_eval_mode(self):
        torch.manual_seed(5)
        sn = SwitchableNorm2d(3)
        x = torch.randn(8, 3, 4, 4) * 2 + 5
        sn.train()
        for _ in range(200):
            sn(x)
        assert torch.allclose(sn.running_mean, x.mean(dim=(0, 2, 3)), atol=0.1)
        sn.eval()
        y = sn(x)
        assert y.mean().abs() < 0.2

    def test_eval_is_deterministic_across_batch_composition(self):
        torch.manual_seed(6)
        sn = SwitchableNorm2d(3)
        sn.train()
        for _ in range(50):
            sn(torch.randn(8, 3, 4, 4))
        sn.eval()
        # batch branch must use running stats: per-sample output can't
        # depend on which other samples share the batch
        x = torch.randn(4, 3, 4, 4)
        full = sn(x)
        alone = sn(x[:1])
        assert torch.allclose(full[:1], alone, atol=1e-6)


class TestTensorHelpers:
    def test_image_round_trip(self):
        imgs = rand_images(2, seed=8)
        t = image_to_tensor(imgs)
        assert t.shape == (2, 3, 32, 32)
        back = tensor_to_image(t)
        assert np.allclose(back.data, imgs.data, atol=1e-6)

    def test_tensor_to_image_clamps(self):
        t = torch.full((1, 3, 4, 4), 1.25)
        assert tensor_to_image(t).data.max() <= 1.0

    def test_relatives_broadcast(self):
        v = np.array([1.0, -1.0, 0.0, 0.5])
        t = relatives_to_tensor(v, 3, 4)
        assert t.shape == (3, 4)
        assert torch.equal(t[0], t[2])
        t2 = relatives_to_tensor(np.tile(v, (3, 1)), 3, 4)
        assert torch.equal(t, t2)
        with pytest.raises(DimensionError):
            relatives_to_tensor(v, 3, 5)

    def test_generator_forward_wrapper(self, gen):
        imgs = rand_images(2, seed=10)
        v = np.zeros(4)
        gen.train()
        try:
            out = generator_forward(gen, imgs, v)
            assert gen.training, "training flag must be restored"
        finally:
            gen.eval()
        assert isinstance(out, ImageBatch)
        assert out.data.shape == imgs.data.shape
        direct = gen(image_to_tensor(imgs), relatives_to_tensor(v, 2, 4))
        assert np.allclose(out.data, tensor_to_image(direct).data)


class TestCheckpoints:
    def _save(self, path, gen, disc, **kw):
        save_checkpoint(
            path, generator=gen, discriminator=disc,
            attribute_names=("a", "b", "c", "d"), **kw,
        )

    def test_round_trip(self, tmp_path, gen, disc):
        p = tmp_path / "ck.pt"
        self._save(p, gen, disc, iteration=7, train_config={"batch_size": 2})
        payload = load_checkpoint(p)
        assert payload["iteration"] == 7
        assert payload["train_config"] == {"batch_size": 2}
        assert payload["attribute_names"] == ("a", "b", "c", "d")

        g2, d2, _ = load_models(p)
        assert not g2.training and not d2.training
        x = image_to_tensor(rand_images(1, seed=12))
        v = torch.zeros(1, 4)
        assert torch.equal(g2(x, v), gen(x, v))
        assert torch.equal(d2.features(x), disc.features(x))

    def test_parameters_identical_bitwise(self, tmp_path, gen, disc):
        p = tmp_path / "ck.pt"
        self._save(p, gen, disc)
        g2, d2, _ = load_models(p)
        for a, b in zip(gen.state_dict().values(), g2.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(disc.state_dict().values(), d2.state_dict().values()):
            assert torch.equal(a, b)

    def test_version_mismatch_rejected(self, tmp_path, gen, disc):
        p = tmp_path / "ck.pt"
        self._save(p, gen, disc)
        payload = torch.load(p, weights_only=False)
        payload["format_version"] = 999
        torch.save(payload, p)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(p)

    def test_config_tamper_rejected(self, tmp_path, gen, disc):
        p = tmp_path / "ck.pt"
        self._save(p, gen, disc)
        payload = torch.load(p, weights_only=False)
        payload["generator_config"]["base_channels"] = 16
        torch.save(payload, p)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(p)


class TestParameterSnapshot:
    def test_capture_restore(self, gen):
        snap = ParameterSnapshot.capture(gen, G_SMALL)
        first = next(gen.parameters())
        original = first.detach().clone()
        with torch.no_grad():
            first.add_(1.0)
        assert not torch.equal(first, original)
        snap.restore(gen, G_SMALL)
        assert torch.equal(next(gen.parameters()).detach(), original)

    def test_restore_checks_config(self, gen):
        snap = ParameterSnapshot.capture(gen, G_SMALL)
        other = dataclasses.replace(G_SMALL, base_channels=16)
        with pytest.raises(CheckpointMismatchError):
            snap.restore(gen, other)
