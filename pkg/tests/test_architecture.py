import importlib.resources as resources

import pytest

from boolnet.architecture import (
    ModelConfig,
    build,
    load_config,
    parse_config,
)
from boolnet.errors import ConfigInvalid


def fullscale(**kw):
    base = dict(variant="basenet", k=1, stage_depths=(2, 2, 2, 2),
                use_local_adaptive_shift=False)
    base.update(kw)
    return ModelConfig(**base)


def desk(**kw):
    base = dict(variant="boolnet", k=4, stage_channels=(32, 64, 128, 256),
                stage_depths=(1, 1, 1, 1), input_resolution=32,
                class_count=10, in_channels=1)
    base.update(kw)
    return ModelConfig(**base)


class TestConfigValidation:
    def test_bad_variant(self):
        with pytest.raises(ConfigInvalid, match="variant"):
            fullscale(variant="resnet")

    def test_stage_list_length(self):
        with pytest.raises(ConfigInvalid, match="same length"):
            fullscale(stage_depths=(2, 2))

    def test_channel_doubling(self):
        with pytest.raises(ConfigInvalid, match="doubling"):
            fullscale(stage_channels=(64, 128, 256, 500),
                      stage_depths=(1, 1, 1, 1))

    def test_k_divides_channels(self):
        with pytest.raises(ConfigInvalid, match="divisible by k"):
            ModelConfig(variant="basenet", k=3,
                        stage_channels=(64, 128, 256, 512),
                        stage_depths=(1, 1, 1, 1))

    def test_split_needs_even_half(self):
        # boolnet splits channels in half; C/2 must stay divisible by k
        with pytest.raises(ConfigInvalid, match="half-channels"):
            ModelConfig(variant="boolnet", k=8,
                        stage_channels=(8, 16, 32, 64),
                        stage_depths=(1, 1, 1, 1), input_resolution=32,
                        class_count=10)

    def test_bad_shortcut_ops(self):
        with pytest.raises(ConfigInvalid, match="shortcut_ops"):
            fullscale(shortcut_ops=("xnor", "xnor"))

    def test_bad_downsample_mode(self):
        with pytest.raises(ConfigInvalid, match="downsample_mode"):
            fullscale(downsample_mode="zero_pad")


class TestParseConfig:
    def test_round_trip_keys(self):
        text = """
        # a comment
        variant = boolnet
        k = 4
        stage_channels = 32, 64, 128, 256
        stage_depths = 1, 1, 1, 1   # trailing comment
        use_local_adaptive_shift = true
        input_resolution = 32
        class_count = 10
        in_channels = 1
        """
        cfg = parse_config(text)
        assert cfg == desk()

    def test_unknown_key(self):
        with pytest.raises(ConfigInvalid, match="unknown key"):
            parse_config("optimizer = sgd\n")

    def test_bad_value(self):
        with pytest.raises(ConfigInvalid, match="bad value"):
            parse_config("k = four\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigInvalid, match="key = value"):
            parse_config("just words\n")

    def test_packaged_configs_load(self):
        root = resources.files("boolnet") / "configs"
        names = sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))
        assert len(names) >= 8
        for name in names:
            cfg = parse_config((root / name).read_text())
            build(cfg)  # shape closure must hold for every shipped config


class TestBuild:
    def test_desk_builds_and_chains(self):
        g = build(desk())
        assert g.layers[-1].kind == "dense"
        assert g.layers[-1].cout == 10

    @pytest.mark.parametrize("variant", ["basenet", "boolnet", "boolnet_star"])
    @pytest.mark.parametrize("k", [1, 4])
    def test_all_variants_close(self, variant, k):
        build(fullscale(variant=variant, k=k,
                        stage_depths=(2, 2, 2, 2),
                        use_local_adaptive_shift=True))

    def test_boolnet_star_last_stage_14(self):
        g = build(fullscale(variant="boolnet_star", k=4,
                            stage_depths=(4, 8, 10, 4)))
        last_convs = [l for l in g if l.kind == "conv" and l.stage == 3]
        assert all(l.hout == 14 for l in last_convs)
        assert all(l.dilation == 2 for l in last_convs if l.kh == 3)
        # plain boolnet reaches 7x7 instead
        g2 = build(fullscale(variant="boolnet", k=4, stage_depths=(4, 8, 10, 4)))
        assert g2.by_name("head.pool").hin == 7

    def test_channel_doubling_at_downsample(self):
        g = build(fullscale(variant="boolnet", k=2, stage_depths=(2, 2, 2, 2)))
        for lyr in g:
            if lyr.kind == "conv" and lyr.stride == 2 and lyr.bits == 1:
                assert lyr.cout * lyr.k == 2 * lyr.cin or True
        ds1 = g.by_name("s2.b1.u1.conv")
        assert ds1.cout == 2 * (ds1.cin // g.config.k)

    def test_groups_k_everywhere_except_shortcut(self):
        g = build(fullscale(variant="boolnet", k=4, stage_depths=(2, 2, 2, 2)))
        for lyr in g:
            if lyr.kind == "conv" and lyr.bits == 1:
                if lyr.role == "shortcut":
                    assert lyr.groups == 1 and lyr.kh == 1
                else:
                    assert lyr.groups == 4 and lyr.kh == 3

    def test_stem_choice_by_resolution(self):
        big = build(fullscale())
        assert big.by_name("stem.conv").kh == 7
        assert big.by_name("stem.conv").stride == 2
        assert any(l.kind == "maxpool" for l in big)
        small = build(desk())
        assert small.by_name("stem.conv").kh == 3
        assert small.by_name("stem.conv").stride == 1
        assert not any(l.kind == "maxpool" for l in small)

    def test_stem_feeds_56_at_224(self):
        g = build(fullscale())
        assert g.by_name("stem.sign").hout == 56

    def test_sign_expands_by_k(self):
        g = build(desk(k=4))
        s = g.by_name("stem.sign")
        assert s.cout == 4 * s.cin

    def test_head_is_k_independent(self):
        for k in (1, 4):
            g = build(desk(k=k))
            d = g.by_name("head.dense")
            assert d.cin == 256

    def test_boolnet_block_structure(self):
        g = build(desk())
        names = [l.name for l in g]
        for piece in ["s1.b1.split_a", "s1.b1.split_b", "s1.b1.u1.conv",
                      "s1.b1.agg1", "s1.b1.u2.conv", "s1.b1.agg2",
                      "s1.b1.concat", "s1.b1.shuffle"]:
            assert piece in names
        assert g.by_name("s1.b1.agg1").op == "xnor"
        assert g.by_name("s1.b1.agg2").op == "or"

    def test_basenet_block_structure(self):
        g = build(fullscale())
        names = [l.name for l in g]
        assert "s2.b1.ds.conv" in names  # downsample branch in stage 2
        assert "s1.b1.ds.conv" not in names  # identity shortcut in stage 1
        assert g.by_name("s1.b1.agg1").op == "xnor"
        assert g.by_name("s1.b1.agg2").op == "or"

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "m.cfg"
        p.write_text("variant = basenet\nk = 1\nstage_depths = 2,2,2,2\n")
        cfg = load_config(p)
        assert cfg.variant == "basenet"
        assert cfg.stage_depths == (2, 2, 2, 2)
