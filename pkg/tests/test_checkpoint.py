import struct

import numpy as np
import pytest

from mmic00_settings import VARIANTS
from models.backbone import ModelConfig, build_model
from utils.checkpoint import (decode_checkpoint, encode_checkpoint, load_checkpoint, make_checkpoint, restore_model,
                              save_checkpoint)
from utils.config import parse_config_text
from utils.errors import FormatError, ShapeMismatchError
from utils.trainer import OptimState, adam_step


def run_config(tmp_path, text='{"variant": "tiny"}'):
    return parse_config_text(text, base_dir=tmp_path)


def test_round_trip_is_bit_exact(tmp_path):
    cfg = run_config(tmp_path)
    model = build_model(cfg.model, seed=cfg.seed)
    state = OptimState()
    named = model.named_parameters()[:3]
    adam_step(named, [np.ones_like(t.data) for _, t in named], state, 1e-3)
    path = tmp_path / "best.mmic"
    save_checkpoint(make_checkpoint(cfg, model, state, {"epoch": 4, "val_OA": 87.5}), path)
    loaded = load_checkpoint(path)

    restored_cfg, restored = restore_model(loaded)
    assert restored_cfg.model == cfg.model
    for name, tensor in model.named_parameters():
        assert np.array_equal(dict(restored.named_parameters())[name].data, tensor.data)
        assert loaded.tensors[name].dtype == tensor.dtype
    assert loaded.best_metric == {"epoch": 4, "val_OA": 87.5}
    restored_state = OptimState.from_tensors(loaded.optimizer)
    assert restored_state.step == 1
    assert all(np.array_equal(restored_state.first_moment[k], v) for k, v in state.first_moment.items())
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_checkpoint_without_optimizer(tmp_path):
    cfg = run_config(tmp_path)
    checkpoint = make_checkpoint(cfg, build_model(cfg.model))
    assert decode_checkpoint(encode_checkpoint(checkpoint)).optimizer is None


def _blob(tmp_path) -> bytes:
    cfg = run_config(tmp_path, '{"variant": "tiny", "stage_depths": [1, 1, 1, 1]}')
    return encode_checkpoint(make_checkpoint(cfg, build_model(cfg.model)))


def test_corrupt_magic(tmp_path):
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + _blob(tmp_path)[4:])


def test_version_mismatch(tmp_path):
    blob = _blob(tmp_path)
    with pytest.raises(FormatError, match="version 7"):
        decode_checkpoint(blob[:4] + struct.pack("<I", 7) + blob[8:])


testdata_truncation = [3, 10, 200, 0.5, -1]


@pytest.mark.parametrize("cut", testdata_truncation)
def test_truncated_checkpoint(tmp_path, cut):
    blob = _blob(tmp_path)
    end = int(len(blob) * cut) if isinstance(cut, float) else cut
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:end])


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "absent.mmic")


def test_restore_into_other_layout(tmp_path):
    checkpoint = decode_checkpoint(_blob(tmp_path))
    with pytest.raises(ShapeMismatchError):
        restore_model(checkpoint, ModelConfig.from_variant("small", stage_depths=[1, 1, 1, 1]))


@pytest.mark.parametrize("variant", list(VARIANTS))
def test_every_variant_round_trips(tmp_path, variant):
    cfg = run_config(tmp_path, f'{{"variant": "{variant}", "classes": 5}}')
    model = build_model(cfg.model, seed=1)
    _, restored = restore_model(decode_checkpoint(encode_checkpoint(make_checkpoint(cfg, model))))
    original = model.state_dict()
    assert all(np.array_equal(value, original[name]) for name, value in restored.state_dict().items())
