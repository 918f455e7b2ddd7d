"""
Tests for checkpoint save/load.
"""
import numpy as np
import pytest

from core.utils.artifacts import read_json
from training.services.checkpoints import MANIFEST, CheckpointError, load_checkpoint, save_checkpoint
from training.services.datasets import load_dataset
from training.services.models import build_model
from training.services.trainer import TrainConfig, train


@pytest.fixture(scope="module")
def easy():
    return load_dataset("synthetic:easy", seed=233)


def _trained(data, **overrides):
    settings = dict(epochs=1, batch_size=32, lr=0.1)
    settings.update(overrides)
    cfg = TrainConfig(**settings)
    model = build_model(cfg.model_spec(data.features, data.num_classes))
    train(model, data, cfg)
    return model


@pytest.mark.parametrize("mode", ["wasi", "vanilla", "asi-only"])
def test_round_trip_restores_predictions(easy, tmp_path, mode):
    model = _trained(easy, mode=mode, epsilon=0.9)
    save_checkpoint(model, tmp_path / "ckpt")
    restored = load_checkpoint(tmp_path / "ckpt")

    np.testing.assert_array_equal(restored.predict(easy.val_x), model.predict(easy.val_x))
    for a, b in zip(model.subspace_layers, restored.subspace_layers):
        np.testing.assert_array_equal(a.weight.effective(), b.weight.effective())
        assert a.activation_ranks == b.activation_ranks


def test_tucker_state_is_restored(easy, tmp_path):
    model = _trained(easy, mode="wasi", epsilon=0.9)
    save_checkpoint(model, tmp_path)
    restored = load_checkpoint(tmp_path)
    for a, b in zip(model.subspace_layers, restored.subspace_layers):
        assert a.tucker is not None
        assert b.tucker.ranks == a.tucker.ranks
        np.testing.assert_array_equal(b.tucker.core, a.tucker.core)
        for fa, fb in zip(a.tucker.factors, b.tucker.factors):
            np.testing.assert_array_equal(fb, fa)


def test_manifest_lists_layers_and_extra(easy, tmp_path):
    model = _trained(easy, mode="wasi")
    save_checkpoint(model, tmp_path, extra={"config": {"mode": "wasi"}})
    manifest = read_json(tmp_path / MANIFEST)
    assert [entry["name"] for entry in manifest["layers"]] == ["layer0", "layer1"]
    assert manifest["config"] == {"mode": "wasi"}
    assert (tmp_path / "layer0.L.bin").is_file()
    assert (tmp_path / "layer0.R.bin").is_file()


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError, match=MANIFEST):
        load_checkpoint(tmp_path)


def test_unknown_format_version(easy, tmp_path):
    model = _trained(easy, mode="vanilla")
    path = save_checkpoint(model, tmp_path)
    path.write_text(path.read_text(encoding="utf-8").replace('"format": 1', '"format": 99'), encoding="utf-8")
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(tmp_path)
