"""
Tests for model checkpoint files
"""

import struct

import numpy as np
import pytest

from models.architectures import dense_spec
from models.checkpoint import (
    CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)


# ==================== Checkpoint Tests ====================

class TestCheckpoint:

    def test_round_trip_is_bit_exact(self, tmp_path, small_spec, small_model):
        """Test save + load reproduces every parameter bit for bit"""
        path = save_checkpoint(small_model, tmp_path / "model.cfck")
        restored = load_checkpoint(path, small_spec)
        original = small_model.state()
        for name, values in restored.state().items():
            assert values.tobytes() == original[name].tobytes()

    def test_no_temporary_left_behind(self, tmp_path, small_model):
        """Test the atomic write leaves only the final file"""
        save_checkpoint(small_model, tmp_path / "model.cfck")
        assert [p.name for p in tmp_path.iterdir()] == ["model.cfck"]

    def test_bad_magic(self, small_spec, small_model):
        """Test a foreign file is rejected"""
        blob = b"XXXX" + encode_checkpoint(small_model)[4:]
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(blob, small_spec)

    def test_unsupported_version(self, small_spec, small_model):
        """Test a newer format version is rejected"""
        blob = bytearray(encode_checkpoint(small_model))
        struct.pack_into("<H", blob, 4, 2)
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(blob), small_spec)

    def test_spec_mismatch(self, small_model):
        """Test loading into a different architecture fails"""
        with pytest.raises(CheckpointError, match="network spec"):
            decode_checkpoint(encode_checkpoint(small_model), dense_spec(6, (6,), 3))

    def test_truncated_payload(self, small_spec, small_model):
        """Test a cut-off payload is rejected"""
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(encode_checkpoint(small_model)[:-8], small_spec)

    def test_trailing_bytes(self, small_spec, small_model):
        """Test extra bytes after the payload are rejected"""
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(encode_checkpoint(small_model) + b"\0", small_spec)

    def test_missing_file(self, tmp_path, small_spec):
        """Test an unreadable path raises CheckpointError"""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.cfck", small_spec)

    def test_restored_model_predicts_identically(self, small_spec, small_model, small_batch):
        """Test a restored model reproduces the logits exactly"""
        x, _ = small_batch
        restored = decode_checkpoint(encode_checkpoint(small_model), small_spec)
        assert np.array_equal(restored.forward(x, 1).values, small_model.forward(x, 1).values)
