import numpy as np
import pytest

from conftest import tiny_model
from equigen import checkpoint as ckpt
from equigen.errors import CheckpointCorruptionError


def test_roundtrip_preserves_everything(tmp_path):
    model = tiny_model("learned", conditional=True)
    model.extras["size_distribution"] = {"sizes": [4, 5], "probs": [0.5, 0.5]}
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, model)
    loaded = ckpt.load_checkpoint(path)
    assert loaded.net == model.net
    assert loaded.diffusion == model.diffusion
    assert loaded.extras == model.extras
    assert loaded.params.names() == model.params.names()
    np.testing.assert_array_equal(loaded.params.flat(), model.params.flat())


def test_truncated_file_is_corrupt(tmp_path):
    model = tiny_model("vp")
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, model)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(CheckpointCorruptionError):
        ckpt.load_checkpoint(path)


def test_bit_flip_fails_checksum(tmp_path):
    model = tiny_model("vp")
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, model)
    blob = bytearray(path.read_bytes())
    blob[200] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointCorruptionError):
        ckpt.load_checkpoint(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointCorruptionError):
        ckpt.load_checkpoint(path)


def test_inspect_reports_config_and_segments(tmp_path):
    model = tiny_model("learned")
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, model)
    summary = ckpt.inspect_checkpoint(path)
    assert "checksum: ok" in summary
    assert "forward_kind = learned" in summary
    assert f"parameter segments: {len(model.params)} ({model.params.size} scalars)" in summary
    assert "fwd/embed/w" in summary
