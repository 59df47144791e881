"""Speech-to-AU encoder: 768-dim audio features to AU code sequences.

A transformer whose lower layers attend within a short window (fast
articulatory detail) while upper layers attend globally (slow prosody). The
output head is a scaled sigmoid so the [0, 5] range is architectural, followed
by average frame pooling down to the video rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .aucode import AUCode, NUM_AUS, codes_to_array
from .audio_features import FEATURE_DIM, AudioFeatureSequence

AU_RANGE = 5.0


@dataclass
class EncoderConfig:
    layer_count: int = 4
    head_count: int = 4
    hidden_dim: int = 256
    lower_layer_window: int = 5   # attention width, in frames, for the lower half
    audio_fps: float = 50.0
    video_fps: float = 25.0

    def __post_init__(self):
        if self.lower_layer_window < 1:
            raise ValueError("attention window must be >= 1 frame")
        if self.hidden_dim % self.head_count != 0:
            raise ValueError("hidden_dim must be divisible by head_count")
        if self.audio_fps < self.video_fps:
            raise ValueError("frame pooling only downsamples: audio_fps >= video_fps")


@dataclass
class AUGroundTruth:
    frames: np.ndarray  # (T, 17) intensities in [0, 5]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != NUM_AUS:
            raise ValueError(f"ground truth must be (T, {NUM_AUS})")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 5):
            raise ValueError("ground-truth intensities out of [0, 5]")


def banded_attention_mask(t: int, window: int, dtype=torch.float64) -> torch.Tensor:
    """Additive mask allowing |i - j| <= (window - 1) // 2."""
    half = (window - 1) // 2
    idx = torch.arange(t)
    allowed = (idx[:, None] - idx[None, :]).abs() <= half
    mask = torch.full((t, t), float("-inf"), dtype=dtype)
    mask[allowed] = 0.0
    return mask


def sinusoidal_positions(t: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    pos = torch.arange(t, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(t, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class SpeechToAUEncoder(nn.Module):
    def __init__(self, config: EncoderConfig | None = None,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config or EncoderConfig()
        c = self.config
        self.input_proj = nn.Linear(FEATURE_DIM, c.hidden_dim, dtype=dtype)
        self.layers = nn.ModuleList([
            nn.TransformerEncoderLayer(
                d_model=c.hidden_dim, nhead=c.head_count,
                dim_feedforward=2 * c.hidden_dim, dropout=0.0,
                batch_first=True, dtype=dtype)
            for _ in range(c.layer_count)
        ])
        # residual projection head into the calibrated AU space
        self.residual_proj = nn.Linear(c.hidden_dim, c.hidden_dim, dtype=dtype)
        self.au_head = nn.Linear(c.hidden_dim, NUM_AUS, dtype=dtype)
        self._dtype = dtype

    @property
    def lower_layer_count(self) -> int:
        return self.config.layer_count // 2

    def layer_activations(self, audio: AudioFeatureSequence) -> list[torch.Tensor]:
        """Per-layer hidden states, for attention-mask verification."""
        _, acts = self._forward_hidden(torch.tensor(audio.frames, dtype=self._dtype))
        return acts

    def _forward_hidden(self, frames: torch.Tensor):
        t = frames.shape[0]
        h = self.input_proj(frames) * math.sqrt(self.config.hidden_dim) \
            + sinusoidal_positions(t, self.config.hidden_dim, self._dtype)
        h = h.unsqueeze(0)
        band = banded_attention_mask(t, self.config.lower_layer_window, self._dtype)
        activations = []
        for i, layer in enumerate(self.layers):
            mask = band if i < self.lower_layer_count else None
            h = layer(h, src_mask=mask)
            activations.append(h.squeeze(0))
        return h.squeeze(0), activations

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(T, 768) audio frames to (T, 17) AU intensities at the audio rate."""
        h, _ = self._forward_hidden(frames)
        h = h + self.residual_proj(h)
        return AU_RANGE * torch.sigmoid(self.au_head(h))

    def predict(self, audio: AudioFeatureSequence,
                video_fps: float | None = None) -> torch.Tensor:
        """(T_video, 17) pooled AU intensities; differentiable."""
        intensities = self(torch.tensor(audio.frames, dtype=self._dtype))
        return frame_pool(intensities, audio.frame_rate,
                          video_fps or self.config.video_fps)


def frame_pool(values: torch.Tensor, audio_fps: float, video_fps: float) -> torch.Tensor:
    """Average-pool (T, D) features from the audio rate to the video rate.

    Output length is ceil(T * video_fps / audio_fps); segment boundaries are
    ceil-aligned so every input frame lands in exactly one output frame.
    """
    if audio_fps < video_fps:
        raise ValueError("frame pooling only downsamples")
    t = values.shape[0]
    ratio = audio_fps / video_fps
    out_len = int(math.ceil(t / ratio))
    bounds = [min(t, int(math.ceil(k * ratio))) for k in range(out_len + 1)]
    bounds[-1] = t
    pooled = [values[lo:hi].mean(dim=0) if hi > lo else values[min(lo, t - 1)]
              for lo, hi in zip(bounds[:-1], bounds[1:])]
    return torch.stack(pooled)


def encode(audio: AudioFeatureSequence, config: EncoderConfig,
           weights: dict | None = None) -> list[AUCode]:
    """Run the encoder in inference mode and return validated AU codes."""
    model = SpeechToAUEncoder(config)
    if weights is not None:
        try:
            model.load_state_dict(weights)
        except RuntimeError as exc:
            raise ValueError(f"weights incompatible with config: {exc}") from exc
    return encode_with_model(model, audio)


def encode_with_model(model: SpeechToAUEncoder,
                      audio: AudioFeatureSequence) -> list[AUCode]:
    with torch.no_grad():
        pooled = model.predict(audio)
    return [AUCode.from_clamped(row) for row in pooled.numpy()]


# --- losses -------------------------------------------------------------------

def _as_tensor(pred) -> torch.Tensor:
    if torch.is_tensor(pred):
        return pred
    if isinstance(pred, (list, tuple)) and pred and isinstance(pred[0], AUCode):
        return torch.tensor(codes_to_array(pred))
    return torch.tensor(np.asarray(pred, dtype=np.float64))


def regression_loss(pred, gt) -> torch.Tensor:
    """Summed L1 between predicted and ground-truth intensities."""
    p = _as_tensor(pred)
    g = _as_tensor(gt.frames if isinstance(gt, AUGroundTruth) else gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    return (p - g).abs().sum()


def temporal_loss(pred) -> torch.Tensor:
    """Sum of squared frame-to-frame differences; zero for constant sequences."""
    p = _as_tensor(pred)
    if p.shape[0] < 2:
        return torch.zeros((), dtype=p.dtype)
    return ((p[1:] - p[:-1]) ** 2).sum()


def audio_loss(pred, gt, lambda_reg: float = 1.0,
               lambda_temp: float = 0.1) -> torch.Tensor:
    return lambda_reg * regression_loss(pred, gt) + lambda_temp * temporal_loss(pred)


def train_speech2au(model: SpeechToAUEncoder, features: list[np.ndarray],
                    targets: list[np.ndarray], steps: int, lr: float = 1e-3,
                    lambda_reg: float = 1.0, lambda_temp: float = 0.1,
                    batch_size: int | None = 1, weight_decay: float = 0.01,
                    seed: int = 0) -> list[float]:
    """AdamW training over (audio frames, pooled AU target) pairs; returns loss curve.

    batch_size=None takes a full-batch gradient every step.
    """
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    fps = model.config.audio_fps, model.config.video_fps
    curve = []
    for _ in range(steps):
        if batch_size is None:
            batch = range(len(features))
        else:
            batch = rng.integers(len(features), size=batch_size)
        loss = torch.zeros((), dtype=torch.float64)
        for i in batch:
            frames = torch.tensor(features[i], dtype=torch.float64)
            target = torch.tensor(targets[i], dtype=torch.float64)
            pred = frame_pool(model(frames), *fps)
            loss = loss + audio_loss(pred, target, lambda_reg, lambda_temp)
        loss = loss / len(list(batch))
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
    return curve
