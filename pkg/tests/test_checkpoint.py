"""Checkpoint binary format and model persistence."""

import numpy as np
import pytest

from accoref.checkpoint import CheckpointError, load_arrays, save_arrays
from accoref.model import CorefModel, ModelConfig


class TestArrayFormat:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        arrays = {
            "a.w": rng.uniform(-1, 1, (3, 4)),
            "b": rng.uniform(-1, 1, (7,)),
            "scalarish": np.array(3.0714812980510063e-17).reshape(1),
            "deep": rng.uniform(-1, 1, (2, 3, 4)),
        }
        path = tmp_path / "m.acnc"
        save_arrays(path, arrays)
        loaded = load_arrays(path)
        assert loaded.keys() == arrays.keys()
        for name, arr in arrays.items():
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == arr.tobytes()

    def test_double_round_trip_byte_identical_file(self, tmp_path, rng):
        arrays = {"x": rng.uniform(-1, 1, (5, 5))}
        p1, p2 = tmp_path / "a.acnc", tmp_path / "b.acnc"
        save_arrays(p1, arrays)
        save_arrays(p2, load_arrays(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.acnc"
        path.write_bytes(b"XXXX\x01\x00\x00\x00")
        with pytest.raises(CheckpointError, match="magic"):
            load_arrays(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.acnc"
        path.write_bytes(b"ACNC\x63\x00\x00\x00")
        with pytest.raises(CheckpointError, match="version"):
            load_arrays(path)

    def test_truncation_detected(self, tmp_path, rng):
        path = tmp_path / "t.acnc"
        save_arrays(path, {"x": rng.uniform(-1, 1, (4, 4))})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_arrays(path)


class TestModelPersistence:
    def test_save_load_restores_every_parameter(self, tmp_path):
        cfg = ModelConfig(d_tok=4, feat_dim=4, ff_hidden=8, lstm_hidden=8)
        model = CorefModel(cfg)
        path = tmp_path / "model.acnc"
        model.save(path, extra={"train_config": {"seed": 0}})
        loaded, sidecar = CorefModel.load(path)
        assert sidecar["train_config"] == {"seed": 0}
        ours = model.named_arrays()
        theirs = loaded.named_arrays()
        assert ours.keys() == theirs.keys()
        for name in ours:
            assert ours[name].tobytes() == theirs[name].tobytes()

    def test_shape_mismatch_detected(self, tmp_path):
        model = CorefModel(ModelConfig(d_tok=4, feat_dim=4, ff_hidden=8, lstm_hidden=8))
        path = tmp_path / "model.acnc"
        model.save(path)
        other = CorefModel(ModelConfig(d_tok=6, feat_dim=4, ff_hidden=8, lstm_hidden=8))
        with pytest.raises(CheckpointError, match="shape"):
            other.load_arrays(load_arrays(path))

    def test_missing_sidecar_detected(self, tmp_path):
        model = CorefModel(ModelConfig(d_tok=4, feat_dim=4, ff_hidden=8, lstm_hidden=8))
        path = tmp_path / "model.acnc"
        model.save(path)
        path.with_suffix(".acnc.json").unlink()
        with pytest.raises(CheckpointError, match="sidecar"):
            CorefModel.load(path)
