import numpy as np
import pytest

from conet.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from conet.errors import DataError
from conet.models import DomainSizes, ModelConfig, build_model

SIZES = DomainSizes(num_users=9, num_items_target=7, num_items_source=8)


def build(arch, **kwargs):
    widths = (8, 8, 8) if arch == "csn" else (8, 4, 2)
    cfg = ModelConfig(architecture=arch, embedding_dim=4, hidden_widths=widths, **kwargs)
    return build_model(cfg, SIZES, seed=13)


@pytest.mark.parametrize("arch", ["mlp", "mlp++", "csn", "conet"])
def test_round_trip_bit_exact(arch, tmp_path):
    model = build(arch)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert set(loaded.params) == set(model.params)
    for name in model.params:
        assert loaded.params[name].dtype == np.float64
        assert loaded.params[name].shape == model.params[name].shape
        assert np.array_equal(loaded.params[name], model.params[name]), name

    # save of the loaded model reproduces identical bytes
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_unshared_embedding_flag_round_trips(tmp_path):
    model = build("mlp++", share_user_embedding=False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert not loaded.config.share_user_embedding
    assert "P_src" in loaded.params


def test_lambda_round_trips(tmp_path):
    model = build("conet", lasso_lambda=0.25)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    assert load_checkpoint(path).config.lasso_lambda == 0.25


def test_magic_is_checked(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT!" + b"\x00" * 40)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_version_is_checked(tmp_path):
    model = build("mlp")
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[len(MAGIC)] = FORMAT_VERSION + 1
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        load_checkpoint(path)


def test_truncation_is_detected(tmp_path):
    model = build("conet")
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)
