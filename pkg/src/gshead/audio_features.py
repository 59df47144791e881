"""Audio feature providers.

The encoder consumes 768-dim per-frame speech features. Two providers cover
the desk-scale setup: precomputed features from a tensor container, and a
deterministic synthetic provider that runs a log-mel-style transform on raw
audio and projects it to 768 dims with a fixed seeded matrix. Both avoid any
pretrained checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .tensorio import load_audio_features

FEATURE_DIM = 768


@dataclass
class AudioFeatureSequence:
    frames: np.ndarray   # (T, 768)
    frame_rate: float    # features per second

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise ValueError(f"features must be (T, {FEATURE_DIM}), got {self.frames.shape}")
        if len(self.frames) < 1:
            raise ValueError("feature sequence must contain at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("features contain non-finite values")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def __len__(self) -> int:
        return len(self.frames)


class PrecomputedFeatureProvider:
    """Reads (T, 768) feature containers written by tensorio.save_audio_features."""

    def features_from_file(self, path: str | Path) -> AudioFeatureSequence:
        frames, fps = load_audio_features(path)
        return AudioFeatureSequence(frames, fps)


class SyntheticLogMelProvider:
    """Deterministic stand-in extractor: log-mel-style frames -> fixed projection.

    Good enough to exercise the whole pipeline offline; not a speech model.
    """

    def __init__(self, fps: float = 50.0, num_bands: int = 64, seed: int = 1234):
        self.fps = fps
        self.num_bands = num_bands
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(num_bands),
                                     (num_bands, FEATURE_DIM))

    def features_from_waveform(self, waveform: np.ndarray,
                               sample_rate: int) -> AudioFeatureSequence:
        waveform = np.asarray(waveform, dtype=np.float64)
        if waveform.ndim == 2:
            waveform = waveform.mean(axis=1)
        hop = max(int(round(sample_rate / self.fps)), 1)
        window = 2 * hop
        n_frames = max(1, int(np.ceil(len(waveform) / hop)))
        padded = np.pad(waveform, (0, n_frames * hop + window - len(waveform)))
        hann = np.hanning(window)

        spectra = np.stack([
            np.abs(np.fft.rfft(padded[t * hop:t * hop + window] * hann))
            for t in range(n_frames)
        ])
        bands = self._band_matrix(spectra.shape[1])
        logmel = np.log1p(spectra @ bands.T)
        return AudioFeatureSequence(logmel @ self.projection, self.fps)

    def features_from_file(self, path: str | Path) -> AudioFeatureSequence:
        sample_rate, data = wavfile.read(path)
        if np.issubdtype(data.dtype, np.integer):
            data = data.astype(np.float64) / np.iinfo(data.dtype).max
        return self.features_from_waveform(data, sample_rate)

    def _band_matrix(self, n_bins: int) -> np.ndarray:
        """Triangular bands spaced on a log-like warped axis."""
        edges = np.unique(np.geomspace(1, n_bins - 1, self.num_bands + 2).astype(int))
        while len(edges) < self.num_bands + 2:  # dedupe collapsed low bins
            edges = np.append(edges, edges[-1] + 1)
        bands = np.zeros((self.num_bands, n_bins))
        for b in range(self.num_bands):
            lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
            if mid > lo:
                bands[b, lo:mid] = np.linspace(0, 1, mid - lo, endpoint=False)
            bands[b, mid:hi] = np.linspace(1, 0, max(hi - mid, 1), endpoint=False)
        return bands


def load_features(path: str | Path,
                  synthetic_fps: float = 50.0) -> AudioFeatureSequence:
    """Dispatch: .npz containers are precomputed features, .wav goes synthetic."""
    suffix = Path(path).suffix.lower()
    if suffix == ".npz":
        return PrecomputedFeatureProvider().features_from_file(path)
    if suffix == ".wav":
        return SyntheticLogMelProvider(fps=synthetic_fps).features_from_file(path)
    raise ValueError(f"unsupported audio input: {suffix}")
