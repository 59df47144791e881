"""Dynamic per-frame Gaussian attribute decoding.

RotNet predicts a per-Gaussian rotation offset composed onto the canonical
rotation; the Feature Line stores per-AU, per-Gaussian opacity features whose
AU-weighted aggregate feeds OPCNet, whose output modulates opacity in logit
space. Scale and color stay frozen. Both nets zero-initialize their output
layer so an untrained decoder reproduces the canonical rig exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .aucode import AUCode, NUM_AUS, aggregation_weights

FEATURE_DIM = 16
OPACITY_OFFSET_SCALE = 0.5  # tanh(delta) * this, in logit units


class FeatureLine(nn.Module):
    """Learnable (K=17, Q, D=16) feature bank keyed by AU and Gaussian index."""

    def __init__(self, gaussian_count: int, init_scale: float = 0.01,
                 seed: int = 0, bank: np.ndarray | None = None,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        if bank is not None:
            bank = np.asarray(bank, dtype=np.float64)
            if bank.ndim != 3 or bank.shape[0] != NUM_AUS or bank.shape[2] != FEATURE_DIM:
                raise ValueError(f"bank must be ({NUM_AUS}, Q, {FEATURE_DIM})")
            tensor = torch.tensor(bank, dtype=dtype)
        else:
            rng = np.random.default_rng(seed)
            tensor = torch.tensor(rng.uniform(-init_scale, init_scale,
                                              (NUM_AUS, gaussian_count, FEATURE_DIM)),
                                  dtype=dtype)
        self.bank = nn.Parameter(tensor)

    @property
    def gaussian_count(self) -> int:
        return self.bank.shape[1]

    def numpy_bank(self) -> np.ndarray:
        return self.bank.detach().numpy().copy()


def aggregate_features(fl: FeatureLine, code: AUCode,
                       epsilon: float = 1e-6) -> torch.Tensor:
    """AU-weighted feature aggregate for every Gaussian: (Q, D)."""
    w = torch.tensor(aggregation_weights(code, epsilon), dtype=fl.bank.dtype)
    return torch.einsum("k,kqd->qd", w, fl.bank)


def aggregate_feature(fl: FeatureLine, code: AUCode, gaussian_index: int,
                      epsilon: float = 1e-6) -> np.ndarray:
    """Single-Gaussian aggregate, (D,)."""
    if not 0 <= gaussian_index < fl.gaussian_count:
        raise IndexError(f"gaussian index {gaussian_index} out of range")
    with torch.no_grad():
        return aggregate_features(fl, code, epsilon)[gaussian_index].numpy()


# ---------------------------------------------------------------------------
# decoders


def _mlp(in_dim: int, hidden: int, out_dim: int, dtype) -> nn.Sequential:
    net = nn.Sequential(
        nn.Linear(in_dim, hidden, dtype=dtype),
        nn.ReLU(),
        nn.Linear(hidden, hidden, dtype=dtype),
        nn.ReLU(),
        nn.Linear(hidden, out_dim, dtype=dtype),
    )
    nn.init.zeros_(net[-1].weight)
    nn.init.zeros_(net[-1].bias)
    return net


def quat_multiply_torch(q1: torch.Tensor, q2: torch.Tensor) -> torch.Tensor:
    w1, x1, y1, z1 = q1.unbind(-1)
    w2, x2, y2, z2 = q2.unbind(-1)
    return torch.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], dim=-1)


def axis_angle_to_quat_torch(rotvec: torch.Tensor) -> torch.Tensor:
    """Differentiable axis-angle to quaternion; exact identity at zero."""
    angle = torch.linalg.norm(rotvec, dim=-1, keepdim=True)
    half = 0.5 * angle
    # sin(half)/angle written through sinc for smoothness at zero
    k = 0.5 * torch.sinc(half / torch.pi)
    return torch.cat([torch.cos(half), rotvec * k], dim=-1)


class RotNet(nn.Module):
    """3-layer MLP rotation decoder: canonical quats + AU code + positions in."""

    def __init__(self, hidden: int = 64, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.net = _mlp(4 + NUM_AUS + 3, hidden, 3, dtype)
        self._dtype = dtype

    def forward(self, canonical_quats: torch.Tensor, code: torch.Tensor,
                positions: torch.Tensor) -> torch.Tensor:
        q = canonical_quats
        c = code.expand(q.shape[0], -1)
        rotvec = self.net(torch.cat([q, c, positions], dim=-1))
        return quat_multiply_torch(axis_angle_to_quat_torch(rotvec), q)


class OPCNet(nn.Module):
    """3-layer MLP opacity decoder over aggregated features + AU code + position."""

    def __init__(self, hidden: int = 64, use_au: bool = True,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.use_au = use_au  # the Codes4O conditioning switch
        self.net = _mlp(FEATURE_DIM + NUM_AUS + 3, hidden, 1, dtype)

    def forward(self, features: torch.Tensor, code: torch.Tensor,
                positions: torch.Tensor) -> torch.Tensor:
        c = code.expand(features.shape[0], -1)
        if not self.use_au:
            c = torch.zeros_like(c)
        return self.net(torch.cat([features, c, positions], dim=-1)).squeeze(-1)


def modulate_opacity_logit(logit_alpha0: torch.Tensor,
                           delta: torch.Tensor) -> torch.Tensor:
    """sigma(logit(alpha0) + tanh(delta) * 0.5), given stored logits."""
    return torch.sigmoid(logit_alpha0 + torch.tanh(delta) * OPACITY_OFFSET_SCALE)


def modulate_opacity(alpha0: float | np.ndarray, delta: float | np.ndarray):
    """Same modulation from opacity values in (0, 1) instead of logits."""
    a = np.asarray(alpha0, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise ValueError("alpha0 must lie strictly inside (0, 1)")
    logit = np.log(a) - np.log1p(-a)
    out = 1.0 / (1.0 + np.exp(-(logit + np.tanh(np.asarray(delta, dtype=np.float64))
                                * OPACITY_OFFSET_SCALE)))
    return float(out) if np.isscalar(alpha0) and np.isscalar(delta) else out


@dataclass
class FrameAttributes:
    """Per-frame decoded facial attributes; Q matches the rig facial count."""

    positions: np.ndarray   # (Q, 3)
    rotations: np.ndarray   # (Q, 4) unit quaternions
    opacities: np.ndarray   # (Q,) in (0, 1)

    def __post_init__(self):
        norms = np.linalg.norm(self.rotations, axis=-1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("frame rotations must be unit quaternions")
        if len(self.opacities) and (self.opacities.min() <= 0 or self.opacities.max() >= 1):
            raise ValueError("frame opacities must lie in (0, 1)")


def decode_frame_torch(canonical_quats: torch.Tensor, canonical_logit_op: torch.Tensor,
                       canonical_positions: torch.Tensor, offsets: torch.Tensor,
                       code: AUCode, fl: FeatureLine, rotnet: RotNet,
                       opcnet: OPCNet) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable decode: returns (positions, quats, opacities) tensors."""
    positions = canonical_positions + offsets
    code_t = torch.tensor(code.values, dtype=canonical_quats.dtype)
    quats = rotnet(canonical_quats, code_t, positions)
    feats = aggregate_features(fl, code)
    delta = opcnet(feats, code_t, positions)
    opac = modulate_opacity_logit(canonical_logit_op, delta)
    return positions, quats, opac


def decode_frame(rig, offsets: np.ndarray, code: AUCode, fl: FeatureLine,
                 rotnet: RotNet, opcnet: OPCNet) -> FrameAttributes:
    """Decode one animated frame for the rig's facial Gaussians."""
    v = rig.facial_count
    with torch.no_grad():
        pos, quats, opac = decode_frame_torch(
            torch.tensor(rig.quats[:v]), torch.tensor(rig.logit_opacities[:v]),
            torch.tensor(rig.positions[:v]), torch.tensor(np.asarray(offsets)),
            code, fl, rotnet, opcnet)
    return FrameAttributes(positions=pos.numpy(), rotations=quats.numpy(),
                           opacities=opac.numpy())


# ---------------------------------------------------------------------------
# losses


def opcmotion_loss(delta_mu: torch.Tensor, delta_alpha: torch.Tensor,
                   gamma: float = 1.0, lam: float = 0.001) -> torch.Tensor:
    """Couples displacement magnitude to opacity-change magnitude."""
    dm = delta_mu if torch.is_tensor(delta_mu) else torch.tensor(np.asarray(delta_mu))
    da = delta_alpha if torch.is_tensor(delta_alpha) else torch.tensor(np.asarray(delta_alpha))
    move = torch.linalg.norm(dm, dim=-1)
    return lam * ((move - gamma * da.abs()) ** 2).sum()


def featureline_reg(fl: FeatureLine | torch.Tensor, lambda_sparse: float = 0.01,
                    lambda_smooth: float = 0.001) -> torch.Tensor:
    """L1 sparsity on the bank + squared smoothness across adjacent AU slices."""
    bank = fl.bank if isinstance(fl, FeatureLine) else fl
    sparse = bank.abs().sum()
    smooth = ((bank[1:] - bank[:-1]) ** 2).sum()
    return lambda_sparse * sparse + lambda_smooth * smooth


def distance_loss(delta_mu: torch.Tensor, tau: float,
                  lam_move: float = 0.1) -> torch.Tensor:
    """Displacement limit: per-point penalty saturates at tau."""
    dm = delta_mu if torch.is_tensor(delta_mu) else torch.tensor(np.asarray(delta_mu))
    move = torch.linalg.norm(dm, dim=-1)
    return lam_move * torch.clamp(move, max=tau).sum()


def default_tau(bbox_diagonal: float) -> float:
    """Displacement threshold: 5% of the template bounding-box diagonal."""
    return 0.05 * bbox_diagonal


# ---------------------------------------------------------------------------
# densify / prune bookkeeping


@dataclass(frozen=True)
class AdaptationEvent:
    kind: str   # clone | split | prune
    index: int

    def __post_init__(self):
        if self.kind not in ("clone", "split", "prune"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("event index must be non-negative")


def adapt_featureline(fl: FeatureLine, event: AdaptationEvent) -> FeatureLine:
    """Apply one densify/prune event: clone/split copy column i, prune drops it."""
    bank = fl.numpy_bank()
    if event.index >= bank.shape[1]:
        raise IndexError(f"event index {event.index} out of range (Q={bank.shape[1]})")
    if event.kind in ("clone", "split"):
        new_bank = np.concatenate([bank, bank[:, event.index:event.index + 1]], axis=1)
    else:
        new_bank = np.delete(bank, event.index, axis=1)
    return FeatureLine(gaussian_count=new_bank.shape[1], bank=new_bank)


def append_event(path: str | Path, event: AdaptationEvent) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps({"event": event.kind, "index": event.index}) + "\n")


def load_events(path: str | Path) -> list[AdaptationEvent]:
    events = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        events.append(AdaptationEvent(kind=doc["event"], index=int(doc["index"])))
    return events


def replay_events(fl: FeatureLine, events: list[AdaptationEvent]) -> FeatureLine:
    for event in events:
        fl = adapt_featureline(fl, event)
    return fl
