import numpy as np
import pytest

from gshead.aucode import AUValidationError
from gshead.tensorio import (load_au_truth, load_audio_features, load_motion,
                             load_tensors, save_au_truth_csv, save_au_truth_json,
                             save_audio_features, save_motion, save_tensors)


def test_tensor_container_round_trip(tmp_path):
    arrays = {"a": np.arange(12.0).reshape(3, 4), "b": np.ones(5, dtype=np.int64)}
    save_tensors(tmp_path / "t.npz", arrays, {"note": "hello", "n": 3})
    back, meta = load_tensors(tmp_path / "t.npz")
    np.testing.assert_array_equal(back["a"], arrays["a"])
    np.testing.assert_array_equal(back["b"], arrays["b"])
    assert meta == {"note": "hello", "n": 3}


def test_reserved_metadata_key(tmp_path):
    with pytest.raises(ValueError):
        save_tensors(tmp_path / "t.npz", {"__meta__": np.zeros(1)})


def test_audio_features_round_trip(tmp_path):
    frames = np.random.default_rng(0).normal(0, 1, (20, 768))
    save_audio_features(tmp_path / "a.npz", frames, fps=50.0)
    back, fps = load_audio_features(tmp_path / "a.npz")
    np.testing.assert_array_equal(back, frames)
    assert fps == 50.0


def test_audio_features_shape_validation(tmp_path):
    with pytest.raises(ValueError):
        save_audio_features(tmp_path / "a.npz", np.zeros((4, 3, 2)), fps=50.0)


def test_motion_round_trip(tmp_path):
    offsets = np.random.default_rng(1).normal(0, 0.01, (5, 30, 3))
    save_motion(tmp_path / "m.npz", offsets, template_hash="abc123")
    back, h = load_motion(tmp_path / "m.npz")
    np.testing.assert_array_equal(back, offsets)
    assert h == "abc123"


def test_au_truth_json_round_trip(tmp_path):
    frames = np.random.default_rng(2).uniform(0, 5, (8, 17))
    save_au_truth_json(tmp_path / "gt.json", frames)
    np.testing.assert_allclose(load_au_truth(tmp_path / "gt.json"), frames)


def test_au_truth_csv_round_trip_openface_columns(tmp_path):
    frames = np.random.default_rng(3).uniform(0, 5, (8, 17))
    save_au_truth_csv(tmp_path / "gt.csv", frames)
    text = (tmp_path / "gt.csv").read_text()
    assert "AU01_r" in text and "AU45_r" in text
    np.testing.assert_allclose(load_au_truth(tmp_path / "gt.csv"), frames, atol=1e-6)


def test_au_truth_rejects_out_of_range(tmp_path):
    with pytest.raises(AUValidationError):
        save_au_truth_json(tmp_path / "gt.json", np.full((2, 17), 6.0))


def test_au_truth_csv_missing_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("frame,AU01_r\n0,1.0\n")
    with pytest.raises(AUValidationError):
        load_au_truth(tmp_path / "bad.csv")
