import numpy as np
import pytest

from fewshot.backbones import BackboneConfig, build_backbone, embed
from fewshot.checkpoint import load_backbone, save_backbone
from fewshot.errors import ConfigError, ShapeError


def test_identity_backbone_has_no_parameters():
    bb = build_backbone(BackboneConfig(kind="identity", input_shape=(2,)), 0)
    assert len(bb.params) == 0
    assert bb.embedding_dim == 2


def test_identity_embed_passes_rows_through():
    bb = build_backbone(BackboneConfig(kind="identity", input_shape=(2,)), 0)
    batch = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(embed(bb, batch).data, batch)


def test_same_seed_gives_bitwise_identical_parameters():
    cfg = BackboneConfig(kind="mlp", input_shape=(4,), hidden=(8,), embedding_dim=3)
    a = build_backbone(cfg, 42)
    b = build_backbone(cfg, 42)
    assert a.params.checksum() == b.params.checksum()
    c = build_backbone(cfg, 43)
    assert a.params.checksum() != c.params.checksum()


def test_mlp_parameter_count():
    cfg = BackboneConfig(kind="mlp", input_shape=(4,), hidden=(8,), embedding_dim=3)
    bb = build_backbone(cfg, 0)
    total = sum(p.data.size for p in bb.params.params.values())
    assert total == 4 * 8 + 8 + 8 * 3 + 3  # 67


def test_mlp_zero_weights_give_zero_embeddings():
    cfg = BackboneConfig(kind="mlp", input_shape=(4,), hidden=(8,), embedding_dim=3)
    bb = build_backbone(cfg, 0)
    for p in bb.params.params.values():
        p.data[:] = 0.0
    out = embed(bb, np.random.default_rng(0).standard_normal((5, 4)))
    assert np.all(out.data == 0.0)


def test_embed_output_shape():
    cfg = BackboneConfig(kind="mlp", input_shape=(6,), hidden=(4,), embedding_dim=9)
    bb = build_backbone(cfg, 1)
    assert embed(bb, np.zeros((7, 6))).data.shape == (7, 9)


def test_conv_embed_output_shape():
    cfg = BackboneConfig(kind="conv", input_shape=(16, 16, 3), channels=(4, 4, 8, 8),
                         embedding_dim=12)
    bb = build_backbone(cfg, 1)
    out = embed(bb, np.random.default_rng(0).random((2, 16, 16, 3)))
    assert out.data.shape == (2, 12)


def test_embed_is_deterministic():
    cfg = BackboneConfig(kind="mlp", input_shape=(4,), hidden=(8,), embedding_dim=3)
    bb = build_backbone(cfg, 3)
    x = np.random.default_rng(9).standard_normal((4, 4))
    assert np.array_equal(embed(bb, x).data, embed(bb, x).data)


def test_shape_mismatch_raises():
    bb = build_backbone(BackboneConfig(kind="mlp", input_shape=(4,), hidden=(8,),
                                       embedding_dim=3), 0)
    with pytest.raises(ShapeError):
        embed(bb, np.zeros((2, 5)))


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(kind="resnet", input_shape=(4,))
    with pytest.raises(ConfigError):
        BackboneConfig(kind="identity", input_shape=(8, 8, 3))
    with pytest.raises(ConfigError):
        BackboneConfig(kind="conv", input_shape=(4,))
    with pytest.raises(ConfigError):
        BackboneConfig(kind="conv", input_shape=(2, 2, 3), channels=(4, 4, 8, 8))
    with pytest.raises(ConfigError):
        BackboneConfig(kind="mlp", input_shape=(4,), embedding_dim=0)


def test_checkpoint_roundtrip_is_lossless(tmp_path):
    cfg = BackboneConfig(kind="mlp", input_shape=(5,), hidden=(7,), embedding_dim=4)
    bb = build_backbone(cfg, 17)
    path = tmp_path / "ckpt.json"
    save_backbone(bb, path, meta={"note": "test"})
    loaded, extra, meta = load_backbone(path)
    assert loaded.config == cfg
    assert extra is None
    assert meta == {"note": "test"}
    assert loaded.params.checksum() == bb.params.checksum()
    for name, p in bb.params.params.items():
        assert np.array_equal(loaded.params[name].data, p.data)
