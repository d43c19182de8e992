import numpy as np
import pytest

from src.architecture import (
    ModelPartition,
    apply_partition,
    build_models,
    configure_models,
    list_parameters,
)
from src.config import HeadType
from src.errors import ConfigError, ShapeError
from src.layers import Dense, MappingMLP, ResidualBlock, StyleBlock, he_std
from src.modulation import ModulationScheme
from src.tensor_core import Tensor, no_grad


def latents(cfg, n=2, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(n, cfg.latent_dim)))


class TestLayers:
    def test_he_std(self):
        assert he_std(50) == pytest.approx(np.sqrt(2.0 / (1.04 * 50)))

    def test_zero_std_dense_starts_at_bias(self):
        layer = Dense(4, 3, std=0.0, bias_init=1.0, role="affine")
        out = layer(Tensor(np.ones((2, 4))))
        np.testing.assert_array_equal(out.data, np.ones((2, 3)))
        assert layer.W.role == "affine"

    def test_residual_block_resampling(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 8, 8)))
        with no_grad():
            assert ResidualBlock(4, 6, rng, resample="up")(x).shape == (1, 6, 16, 16)
            assert ResidualBlock(4, 6, rng, resample="down")(x).shape == (1, 6, 4, 4)
            assert ResidualBlock(4, 4, rng)(x).shape == (1, 4, 8, 8)

    def test_identity_shortcut_only_when_widths_match(self, rng):
        assert not hasattr(ResidualBlock(4, 4, rng), "shortcut")
        assert ResidualBlock(4, 6, rng).shortcut.W.shape == (6, 4, 1, 1)

    def test_residual_block_rejects_wrong_width(self, rng):
        with pytest.raises(ShapeError):
            ResidualBlock(4, 4, rng)(Tensor(np.zeros((1, 3, 8, 8))))

    def test_style_block_checks_style_width(self, rng):
        block = StyleBlock(4, 4, 5, rng)
        with pytest.raises(ShapeError):
            block(Tensor(np.zeros((2, 4, 4, 4))), Tensor(np.zeros((2, 6))))

    def test_style_block_shape(self, rng):
        block = StyleBlock(4, 6, 5, rng)
        with no_grad():
            out = block(Tensor(rng.normal(size=(2, 4, 4, 4))), Tensor(rng.normal(size=(2, 5))))
        assert out.shape == (2, 6, 4, 4)

    def test_mapping_depth(self, rng):
        mlp = MappingMLP(3, 5, 4, rng)
        assert [name for name, _ in mlp.named_parameters()][-2:] == ["fc4/W", "fc4/b"]
        with no_grad():
            assert mlp(Tensor(np.ones((2, 3)))).shape == (2, 5)


class TestNetworks:
    def test_group_counts(self, make_config):
        g, d = build_models(make_config())
        assert (g.group_count, d.group_count) == (4, 4)
        g, d = build_models(make_config(resolution=32, channels=[8, 8, 8, 8]))
        assert (g.group_count, d.group_count) == (5, 5)

    def test_forward_shapes(self, tiny_config):
        g, d = build_models(tiny_config)
        with no_grad():
            images = g(latents(tiny_config))
            logits = d(images)
        assert images.shape == (2, 3, 16, 16)
        assert np.all(np.abs(images.data) <= 1.0)
        assert logits.shape == (2,)

    def test_grayscale(self, make_config):
        cfg = make_config(grayscale=True)
        g, d = build_models(cfg)
        with no_grad():
            images = g(latents(cfg))
            assert images.shape == (2, 1, 16, 16)
            assert d(images).shape == (2,)

    def test_residual_head_is_wider(self, make_config):
        g, _ = build_models(make_config(mode="gphead"))
        assert g.head_type == HeadType.RESIDUAL
        assert not g.has_styles
        assert g.group1.block1.conv1.W.shape == (32, 16, 3, 3)
        assert "gen/mapping/fc1/W" not in list_parameters(g)

    def test_residual_head_takes_no_styles(self, make_config):
        cfg = make_config(mode="gphead")
        g, _ = build_models(cfg)
        with pytest.raises(ValueError):
            g(latents(cfg), styles=[Tensor(np.zeros((2, 8)))] * 2)

    def test_wrong_latent_width(self, tiny_config):
        g, _ = build_models(tiny_config)
        with pytest.raises(ShapeError):
            g(Tensor(np.zeros((2, 5))))

    def test_wrong_image_size(self, tiny_config):
        _, d = build_models(tiny_config)
        with pytest.raises(ShapeError):
            d(Tensor(np.zeros((2, 3, 32, 32))))

    def test_same_seed_same_models(self, tiny_config):
        a = list_parameters(build_models(tiny_config, seed=5))
        b = list_parameters(build_models(tiny_config, seed=5))
        c = list_parameters(build_models(tiny_config, seed=6))
        assert a.names() == b.names()
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)
        assert not np.array_equal(a["gen/fc/W"].data, c["gen/fc/W"].data)


class TestRegistry:
    def test_names_are_hierarchical(self, tiny_config):
        registry = list_parameters(build_models(tiny_config))
        names = registry.names()
        assert names[0] == "gen/mapping/fc1/W"
        assert "gen/group1/block2/affine1/W" in registry
        assert "gen/group4/to_image/conv/W" in registry
        assert "disc/group1/from_image/W" in registry
        assert names[-1] == "disc/fc/b"
        assert len(set(names)) == len(names)

    def test_info(self, tiny_config):
        registry = list_parameters(build_models(tiny_config))
        by_name = {info.name: info for info in registry}
        assert by_name["gen/group3/block1/conv1/W"].group == "group3"
        assert by_name["gen/fc/W"].group is None
        assert by_name["disc/fc/W"].network == "disc"
        assert by_name["disc/fc/W"].role == "fc"

    def test_count(self, tiny_config):
        registry = list_parameters(build_models(tiny_config))
        assert registry.count() == sum(info.tensor.size for info in registry)
        assert registry.count(trainable_only=True) == registry.count()


class TestPartition:
    def test_parse(self):
        assert ModelPartition.parse("g4d2") == ModelPartition(4, 2)
        assert ModelPartition(3, 1).label == "G3D1"
        with pytest.raises(ConfigError):
            ModelPartition.parse("G4")

    def test_unpartitioned_modes(self, make_config):
        assert ModelPartition.for_config(make_config(mode="scratch", gm=2)) == ModelPartition(0, 0)
        assert ModelPartition.for_config(make_config(mode="finetune_all")) == ModelPartition(0, 0)
        assert ModelPartition.for_config(make_config(mode="smallhead", gm=2, dn=1)) == ModelPartition(2, 1)

    def test_frozen_groups(self, make_config):
        g, d, _ = configure_models(make_config(mode="smallhead", gm=2, dn=1))
        registry = list_parameters([g, d])
        frozen = set(registry.frozen())
        expected = {
            name for name in registry.names()
            if name.startswith(("gen/group3/", "gen/group4/", "disc/group1/"))
        }
        assert frozen == expected
        assert not registry.modulation()

    def test_out_of_range(self, tiny_config):
        g, d = build_models(tiny_config)
        with pytest.raises(ConfigError):
            apply_partition(g, d, ModelPartition(5, 0))
        with pytest.raises(ConfigError):
            apply_partition(g, d, ModelPartition(0, 5))

    @pytest.mark.parametrize("mode,scheme", [
        ("adafm", ModulationScheme.ADAFM),
        ("fs", ModulationScheme.FS),
        ("wdemod", ModulationScheme.WEIGHT_DEMOD),
    ])
    def test_modulation_lives_on_frozen_banks(self, make_config, mode, scheme):
        g, d, _ = configure_models(make_config(mode=mode, gm=2, dn=1))
        registry = list_parameters([g, d])
        modulation = registry.modulation()
        assert modulation
        for name, tensor in modulation.items():
            assert name.startswith(("gen/group3/", "gen/group4/"))
            assert not tensor.frozen
        banks = [bank for group in g.groups()[2:] for bank in group.banks()]
        assert all(bank.scheme == scheme for bank in banks)

    def test_adafm_scalar_count(self, make_config):
        cfg = make_config()
        g, d = build_models(cfg)
        banks = [bank for group in g.groups()[2:] for bank in group.banks()]
        expected = sum(2 * bank.cout * bank.cin for bank in banks)
        assert apply_partition(g, d, ModelPartition(2, 1), ModulationScheme.ADAFM, cfg) == expected

    def test_style_banks_keep_their_scheme(self, make_config):
        cfg = make_config(mode="adafm", gm=4, dn=0)
        g, _, _ = configure_models(cfg)
        assert g.group1.block1.conv1.scheme == ModulationScheme.WEIGHT_DEMOD
        assert g.group1.block1.shortcut.scheme == ModulationScheme.ADAFM

    def test_identity_modulation_preserves_generator(self, make_config):
        plain, _ = build_models(make_config(mode="smallhead", gm=2, dn=1), seed=9)
        modulated, _, _ = configure_models(make_config(mode="adafm", gm=2, dn=1), seed=9)
        z = latents(make_config())
        with no_grad():
            np.testing.assert_array_equal(plain(z).data, modulated(z).data)
