"""File formats shared across the pipeline.

- tensor container: an npz archive of named arrays plus one JSON metadata
  blob; shapes travel in the archive header so readers can validate them.
- AU ground truth: CSV or JSON with an explicit au_order header; CSV columns
  follow the OpenFace intensity naming (AU01_r ... AU45_r).
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .aucode import AU_ORDER, AUValidationError

METADATA_KEY = "__meta__"


def save_tensors(path: str | Path, arrays: dict[str, np.ndarray],
                 metadata: dict | None = None) -> None:
    if METADATA_KEY in arrays:
        raise ValueError(f"array name {METADATA_KEY!r} is reserved")
    payload = dict(arrays)
    payload[METADATA_KEY] = np.frombuffer(
        json.dumps(metadata or {}, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as npz:
        meta = json.loads(npz[METADATA_KEY].tobytes().decode()) if METADATA_KEY in npz else {}
        arrays = {k: npz[k] for k in npz.files if k != METADATA_KEY}
    return arrays, meta


def save_audio_features(path: str | Path, frames: np.ndarray, fps: float) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError(f"audio features must be (T, D), got {frames.shape}")
    save_tensors(path, {"frames": frames}, {"fps": fps, "kind": "audio_features"})


def load_audio_features(path: str | Path) -> tuple[np.ndarray, float]:
    arrays, meta = load_tensors(path)
    return arrays["frames"], float(meta["fps"])


def save_motion(path: str | Path, offsets: np.ndarray, template_hash: str) -> None:
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[2] != 3:
        raise ValueError(f"motion must be (T, V, 3), got {offsets.shape}")
    save_tensors(path, {"offsets": offsets},
                 {"template_hash": template_hash, "kind": "motion"})


def load_motion(path: str | Path) -> tuple[np.ndarray, str]:
    arrays, meta = load_tensors(path)
    return arrays["offsets"], str(meta.get("template_hash", ""))


def save_au_truth_json(path: str | Path, frames: np.ndarray) -> None:
    frames = _check_au_frames(frames)
    Path(path).write_text(json.dumps({
        "au_order": list(AU_ORDER),
        "frames": frames.tolist(),
    }))


def save_au_truth_csv(path: str | Path, frames: np.ndarray) -> None:
    frames = _check_au_frames(frames)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["frame"] + [f"{au}_r" for au in AU_ORDER])
    for t, row in enumerate(frames):
        writer.writerow([t] + [f"{x:.6f}" for x in row])
    Path(path).write_text(buf.getvalue())


def load_au_truth(path: str | Path) -> np.ndarray:
    """Load a (T, 17) AU intensity matrix from .csv or .json."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        if tuple(doc.get("au_order") or ()) != AU_ORDER:
            raise AUValidationError(f"au_order header mismatch in {path}")
        return _check_au_frames(np.asarray(doc["frames"], dtype=np.float64))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [f"{au}_r" for au in AU_ORDER]
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise AUValidationError(f"{path}: missing AU columns {missing}")
        rows = [[float(rec[c]) for c in cols] for rec in reader]
    return _check_au_frames(np.asarray(rows, dtype=np.float64))


def _check_au_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != len(AU_ORDER):
        raise AUValidationError(f"AU frames must be (T, {len(AU_ORDER)}), got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise AUValidationError("AU frames contain non-finite values")
    if frames.size and (frames.min() < 0.0 or frames.max() > 5.0):
        raise AUValidationError("AU intensities out of [0, 5]")
    return frames
