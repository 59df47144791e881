"""AU-prompt diffusion over facial vertex offsets.

Forward process: closed-form Gaussian jumps under a cosine variance schedule.
Reverse process: a transformer that predicts the clean offset sequence
directly (not the noise), conditioned on the mesh template, per-frame AU
codes, audio features and the diffusion step; sampling re-noises the
prediction to the previous step. Long sequences run through fixed windows
with an overlap of carried context frames. A GRU denoiser with a matched
parameter budget ships for the no-diffusion ablation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class MotionSequence:
    """Vertex offsets from the template, (T, V, 3) scene units."""

    offsets: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.offsets.ndim != 3 or self.offsets.shape[2] != 3:
            raise ValueError(f"offsets must be (T, V, 3), got {self.offsets.shape}")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("offsets contain non-finite values")

    @property
    def frame_count(self) -> int:
        return self.offsets.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.offsets.shape[1]


@dataclass
class NoiseSchedule:
    """Betas for steps 1..N plus cumulative alpha products with abar[0] = 1."""

    betas: np.ndarray            # (N,)
    alpha_bars: np.ndarray       # (N + 1,), alpha_bars[0] == 1

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.alpha_bars = np.asarray(self.alpha_bars, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(self.betas) < -1e-12):
            raise ValueError("betas must be monotone non-decreasing")
        if self.alpha_bars[0] != 1.0 or np.any(self.alpha_bars <= 0) \
                or np.any(self.alpha_bars > 1.0):
            raise ValueError("cumulative products must start at 1 and stay in (0, 1]")

    @property
    def steps(self) -> int:
        return len(self.betas)

    @classmethod
    def cosine(cls, steps: int = 50, s: float = 0.008,
               max_beta: float = 0.999) -> "NoiseSchedule":
        ns = np.arange(steps + 1)
        f = np.cos((ns / steps + s) / (1 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, max_beta)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(betas=betas, alpha_bars=abar)


def forward_noise(clean: np.ndarray, step: int, schedule: NoiseSchedule,
                  rng_seed: int) -> np.ndarray:
    """Closed-form jump q(x^n | x^0); step 0 returns the input exactly."""
    clean = np.asarray(clean, dtype=np.float64)
    if not 0 <= step <= schedule.steps:
        raise ValueError(f"step must lie in [0, {schedule.steps}], got {step}")
    abar = schedule.alpha_bars[step]
    if step == 0:
        return clean.copy()
    noise = np.random.default_rng(rng_seed).standard_normal(clean.shape)
    return np.sqrt(abar) * clean + np.sqrt(1.0 - abar) * noise


def renoise_to(pred_clean: torch.Tensor, step: int, schedule: NoiseSchedule,
               generator: torch.Generator) -> torch.Tensor:
    """Re-noise a clean prediction to diffusion step `step` (0 returns it as is)."""
    if step == 0:
        return pred_clean
    abar = schedule.alpha_bars[step]
    noise = torch.randn(pred_clean.shape, generator=generator,
                        dtype=pred_clean.dtype)
    return math.sqrt(abar) * pred_clean + math.sqrt(1.0 - abar) * noise


# ---------------------------------------------------------------------------
# denoisers


@dataclass
class DenoiserConfig:
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    feedforward: int = 512
    window: int = 32          # frames per inference window
    overlap: int = 8          # context frames carried between windows
    use_au: bool = True       # the Codes4P conditioning switch
    use_audio: bool = True
    gru_hidden: int = 416     # sized to keep the GRU within 10% of the transformer


class _ConditioningStem(nn.Module):
    """Shared projections: offsets + AU codes + audio -> frame tokens."""

    def __init__(self, vertex_count: int, cfg: DenoiserConfig, num_steps: int,
                 dtype: torch.dtype):
        super().__init__()
        self.cfg = cfg
        self.vertex_count = vertex_count
        d = cfg.d_model
        self.x_proj = nn.Linear(3 * vertex_count, d, dtype=dtype)
        self.au_proj = nn.Linear(17, d, dtype=dtype)
        self.audio_proj = nn.Linear(768, d, dtype=dtype)
        self.fuse = nn.Linear(3 * d, d, dtype=dtype)
        self.template_proj = nn.Linear(3 * vertex_count, d, dtype=dtype)
        self.step_embed = nn.Embedding(num_steps + 1, d, dtype=dtype)
        self.context_flag = nn.Parameter(torch.zeros(d, dtype=dtype))

    def frame_tokens(self, noisy: torch.Tensor, au: torch.Tensor | None,
                     audio: torch.Tensor | None, step: torch.Tensor) -> torch.Tensor:
        b, t = noisy.shape[0], noisy.shape[1]
        d = self.cfg.d_model
        x = self.x_proj(noisy.reshape(b, t, -1))
        zeros = torch.zeros(b, t, d, dtype=x.dtype)
        au_tok = self.au_proj(au) if (au is not None and self.cfg.use_au) else zeros
        audio_tok = self.audio_proj(audio) if (audio is not None and self.cfg.use_audio) else zeros
        tokens = self.fuse(torch.cat([x, au_tok, audio_tok], dim=-1))
        return tokens + self.step_embed(step).unsqueeze(1)

    def context_tokens(self, context: torch.Tensor, step: torch.Tensor) -> torch.Tensor:
        b, c = context.shape[0], context.shape[1]
        tok = self.x_proj(context.reshape(b, c, -1))
        return tok + self.context_flag + self.step_embed(step).unsqueeze(1)


class TransformerDenoiser(nn.Module):
    """Clean-sequence prediction D(x^n, template, AU codes, audio, n)."""

    def __init__(self, vertex_count: int, config: DenoiserConfig | None = None,
                 num_steps: int = 50, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config or DenoiserConfig()
        self.stem = _ConditioningStem(vertex_count, self.config, num_steps, dtype)
        d = self.config.d_model
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=self.config.heads,
            dim_feedforward=self.config.feedforward, dropout=0.0,
            batch_first=True, dtype=dtype)
        self.encoder = nn.TransformerEncoder(layer, self.config.layers)
        self.head = nn.Linear(d, 3 * vertex_count, dtype=dtype)
        self._dtype = dtype

    @property
    def vertex_count(self) -> int:
        return self.stem.vertex_count

    def forward(self, noisy: torch.Tensor, template: torch.Tensor,
                au: torch.Tensor | None, audio: torch.Tensor | None,
                step: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = noisy.ndim == 3
        if squeeze:
            noisy = noisy.unsqueeze(0)
            au = au.unsqueeze(0) if au is not None else None
            audio = audio.unsqueeze(0) if audio is not None else None
            context = context.unsqueeze(0) if context is not None else None
            step = step.reshape(1)
        b, t = noisy.shape[0], noisy.shape[1]

        frame_tok = self.stem.frame_tokens(noisy, au, audio, step)
        tmpl_tok = self.stem.template_proj(template.reshape(1, 1, -1)) \
            .expand(b, 1, -1) + self.stem.step_embed(step).unsqueeze(1)
        parts = [tmpl_tok]
        n_ctx = 0
        if context is not None and context.shape[1] > 0:
            parts.append(self.stem.context_tokens(context, step))
            n_ctx = context.shape[1]
        parts.append(frame_tok)
        tokens = torch.cat(parts, dim=1)
        tokens = tokens + _positions(tokens.shape[1], self.config.d_model, self._dtype)

        hidden = self.encoder(tokens)
        out = self.head(hidden[:, 1 + n_ctx:])
        out = out.reshape(b, t, self.vertex_count, 3)
        return out.squeeze(0) if squeeze else out


class GRUDenoiser(nn.Module):
    """Recurrent baseline with the same conditioning stem (no-diffusion ablation)."""

    def __init__(self, vertex_count: int, config: DenoiserConfig | None = None,
                 num_steps: int = 50, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config or DenoiserConfig()
        self.stem = _ConditioningStem(vertex_count, self.config, num_steps, dtype)
        self.gru = nn.GRU(self.config.d_model, self.config.gru_hidden,
                          num_layers=2, batch_first=True, dtype=dtype)
        self.head = nn.Linear(self.config.gru_hidden, 3 * vertex_count, dtype=dtype)
        self._dtype = dtype

    @property
    def vertex_count(self) -> int:
        return self.stem.vertex_count

    def forward(self, noisy: torch.Tensor, template: torch.Tensor,
                au: torch.Tensor | None, audio: torch.Tensor | None,
                step: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = noisy.ndim == 3
        if squeeze:
            noisy = noisy.unsqueeze(0)
            au = au.unsqueeze(0) if au is not None else None
            audio = audio.unsqueeze(0) if audio is not None else None
            context = context.unsqueeze(0) if context is not None else None
            step = step.reshape(1)
        b, t = noisy.shape[0], noisy.shape[1]
        tokens = self.stem.frame_tokens(noisy, au, audio, step)
        tmpl = self.stem.template_proj(template.reshape(1, 1, -1)).expand(b, 1, -1)
        n_ctx = 0
        if context is not None and context.shape[1] > 0:
            ctx = self.stem.context_tokens(context, step)
            tokens = torch.cat([tmpl, ctx, tokens], dim=1)
            n_ctx = ctx.shape[1]
        else:
            tokens = torch.cat([tmpl, tokens], dim=1)
        hidden, _ = self.gru(tokens)
        out = self.head(hidden[:, 1 + n_ctx:])
        out = out.reshape(b, t, self.vertex_count, 3)
        return out.squeeze(0) if squeeze else out


def _positions(t: int, dim: int, dtype) -> torch.Tensor:
    pos = torch.arange(t, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(t, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


# ---------------------------------------------------------------------------
# sampling


def sample_window(denoiser: nn.Module, schedule: NoiseSchedule,
                  template: torch.Tensor, au: torch.Tensor | None,
                  audio: torch.Tensor | None, frames: int,
                  generator: torch.Generator,
                  context: torch.Tensor | None = None) -> torch.Tensor:
    """Full reverse chain for one window; returns the step-0 clean prediction."""
    v = denoiser.vertex_count
    x = torch.randn((frames, v, 3), generator=generator, dtype=template.dtype)
    pred = x
    for n in range(schedule.steps, 0, -1):
        step = torch.tensor([n], dtype=torch.long)
        with torch.no_grad():
            pred = denoiser(x, template, au, audio, step, context)
        if n > 1:
            x = renoise_to(pred, n - 1, schedule, generator)
    return pred


def sample(denoiser: nn.Module, schedule: NoiseSchedule, template: torch.Tensor,
           au: torch.Tensor | None, audio: torch.Tensor | None, frames: int,
           seed: int = 0, window: int | None = None,
           overlap: int | None = None) -> torch.Tensor:
    """Sample a (frames, V, 3) offset sequence, windowed with carried context."""
    cfg = getattr(denoiser, "config", DenoiserConfig())
    window = window or cfg.window
    overlap = cfg.overlap if overlap is None else overlap
    if overlap >= window:
        raise ValueError("overlap must be smaller than the window")
    v = denoiser.vertex_count
    generator = torch.Generator().manual_seed(seed)
    if frames == 0:
        return torch.zeros((0, v, 3), dtype=template.dtype)

    chunks: list[torch.Tensor] = []
    context: torch.Tensor | None = None
    start = 0
    while start < frames:
        count = min(window, frames - start)
        au_w = au[start:start + count] if au is not None else None
        audio_w = audio[start:start + count] if audio is not None else None
        pred = sample_window(denoiser, schedule, template, au_w, audio_w,
                             count, generator, context)
        chunks.append(pred)
        context = pred[-overlap:] if overlap > 0 else None
        start += count
    return torch.cat(chunks, dim=0)


# ---------------------------------------------------------------------------
# geometric losses


@dataclass
class GeometryWeights:
    vertex: float = 1.0
    motion: float = 0.5
    deform: float = 0.1
    lip: float = 0.8
    lambda_lap: float = 1.0


def _pair(pred, gt) -> tuple[torch.Tensor, torch.Tensor]:
    p = pred if torch.is_tensor(pred) else torch.tensor(np.asarray(pred, dtype=np.float64))
    g = gt if torch.is_tensor(gt) else torch.tensor(np.asarray(gt, dtype=np.float64))
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    return p, g


def vertex_loss(pred, gt) -> torch.Tensor:
    """Mean per-vertex Euclidean distance over all frames."""
    p, g = _pair(pred, gt)
    return torch.linalg.norm(p - g, dim=-1).mean()


def motion_loss(pred, gt) -> torch.Tensor:
    """Velocity + acceleration consistency; invariant to constant offsets."""
    p, g = _pair(pred, gt)
    t, v = p.shape[0], p.shape[1]
    if t < 2:
        return torch.zeros((), dtype=p.dtype)
    dp, dg = p[1:] - p[:-1], g[1:] - g[:-1]
    vel = torch.linalg.norm(dp - dg, dim=-1).sum() / (t * v)
    if t < 3:
        return vel
    d2p, d2g = dp[1:] - dp[:-1], dg[1:] - dg[:-1]
    acc = torch.linalg.norm(d2p - d2g, dim=-1).sum() / ((t - 1) * v)
    return vel + acc


def neighbor_mean_matrix(adjacency: list[np.ndarray]) -> torch.Tensor:
    """Dense (V, V) operator mapping offsets to their 1-ring mean."""
    v = len(adjacency)
    m = np.zeros((v, v))
    for i, neigh in enumerate(adjacency):
        if len(neigh):
            m[i, neigh] = 1.0 / len(neigh)
    return torch.tensor(m)


def laplacian_energy(offsets: torch.Tensor, neighbor_mean: torch.Tensor) -> torch.Tensor:
    """Mean squared uniform Laplacian (offset minus 1-ring mean) over T*V."""
    lap = offsets - torch.einsum("vw,twc->tvc", neighbor_mean, offsets)
    return (lap ** 2).sum(dim=-1).mean()


def deform_loss(pred, neighbor_mean: torch.Tensor,
                lambda_lap: float = 1.0) -> torch.Tensor:
    """Mean offset magnitude plus weighted Laplacian smoothing energy."""
    p = pred if torch.is_tensor(pred) else torch.tensor(np.asarray(pred, dtype=np.float64))
    magnitude = torch.linalg.norm(p, dim=-1).mean()
    return magnitude + lambda_lap * laplacian_energy(p, neighbor_mean)


def lip_loss(pred, gt, lip_vertex_index, lip_frame_index) -> torch.Tensor:
    """Vertex loss restricted to the lip vertex/frame sets; empty sets give 0."""
    p, g = _pair(pred, gt)
    lv = torch.as_tensor(np.asarray(lip_vertex_index, dtype=np.int64))
    lt = torch.as_tensor(np.asarray(lip_frame_index, dtype=np.int64))
    if lv.numel() == 0 or lt.numel() == 0:
        return torch.zeros((), dtype=p.dtype)
    p_sel = p[lt][:, lv]
    g_sel = g[lt][:, lv]
    return torch.linalg.norm(p_sel - g_sel, dim=-1).mean()


def geometry_loss(pred, gt, neighbor_mean: torch.Tensor, lip_vertex_index,
                  lip_frame_index, weights: GeometryWeights | None = None) -> torch.Tensor:
    w = weights or GeometryWeights()
    return (w.vertex * vertex_loss(pred, gt)
            + w.motion * motion_loss(pred, gt)
            + w.deform * deform_loss(pred, neighbor_mean, w.lambda_lap)
            + w.lip * lip_loss(pred, gt, lip_vertex_index, lip_frame_index))


# ---------------------------------------------------------------------------
# training


@dataclass
class MotionSample:
    au: np.ndarray        # (T, 17)
    audio: np.ndarray     # (T, 768)
    offsets: np.ndarray   # (T, V, 3)


def train_motion_diffusion(denoiser: nn.Module, schedule: NoiseSchedule,
                           corpus: list[MotionSample], template: np.ndarray,
                           neighbor_mean: torch.Tensor, lip_vertex_index,
                           steps: int, lr: float = 1e-4, batch_size: int = 8,
                           weights: GeometryWeights | None = None,
                           grad_clip: float = 1.0, seed: int = 0,
                           cosine_anneal: bool = True) -> list[float]:
    """AdamW + cosine annealing + gradient clipping over noisy-step regression."""
    weights = weights or GeometryWeights()
    opt = torch.optim.AdamW(denoiser.parameters(), lr=lr, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps) \
        if cosine_anneal else None
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    tmpl = torch.tensor(np.asarray(template, dtype=np.float64))
    curve: list[float] = []
    for _ in range(steps):
        idx = rng.integers(len(corpus), size=batch_size)
        x0 = torch.tensor(np.stack([corpus[i].offsets for i in idx]))
        au = torch.tensor(np.stack([corpus[i].au for i in idx]))
        audio = torch.tensor(np.stack([corpus[i].audio for i in idx]))
        n = int(rng.integers(1, schedule.steps + 1))
        abar = schedule.alpha_bars[n]
        noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        noisy = math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise
        step = torch.full((len(idx),), n, dtype=torch.long)

        pred = denoiser(noisy, tmpl, au, audio, step)
        loss = torch.zeros((), dtype=x0.dtype)
        all_frames = np.arange(x0.shape[1])
        for bi in range(len(idx)):
            loss = loss + geometry_loss(pred[bi], x0[bi], neighbor_mean,
                                        lip_vertex_index, all_frames, weights)
        loss = loss / len(idx)
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(denoiser.parameters(), grad_clip)
        opt.step()
        if sched is not None:
            sched.step()
        curve.append(float(loss.detach()))
    return curve
