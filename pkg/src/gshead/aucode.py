"""Action-unit code space: the 17-dim intensity vectors that condition everything.

An AU code holds one intensity in [0, 5] per action unit, ordered by the
canonical list below. The order is serialized explicitly in every file format
so a reordered file is caught instead of silently misread.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

AU_ORDER: tuple[str, ...] = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
    "AU14", "AU15", "AU17", "AU23", "AU24", "AU25", "AU26", "AU45",
)
NUM_AUS = len(AU_ORDER)  # 17
AU_MIN = 0.0
AU_MAX = 5.0
DEFAULT_EPSILON = 1e-6


class AUValidationError(ValueError):
    """Raised when AU codes, masks or modulation params violate their domain."""


@dataclass(frozen=True)
class AUCode:
    """One frame of AU intensities, clamped to [0, 5], in canonical order."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (NUM_AUS,):
            raise AUValidationError(f"AU code must have shape ({NUM_AUS},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise AUValidationError("AU code contains non-finite values")
        if arr.min() < AU_MIN or arr.max() > AU_MAX:
            raise AUValidationError(
                f"AU intensities must lie in [{AU_MIN}, {AU_MAX}], got "
                f"[{arr.min()}, {arr.max()}]")
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls) -> "AUCode":
        return cls(np.zeros(NUM_AUS))

    @classmethod
    def from_clamped(cls, values: Iterable[float]) -> "AUCode":
        """Build a code by clamping arbitrary finite values into [0, 5]."""
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise AUValidationError("AU code contains non-finite values")
        return cls(np.clip(arr, AU_MIN, AU_MAX))

    def __getitem__(self, au: str | int) -> float:
        if isinstance(au, str):
            au = AU_ORDER.index(au)
        return float(self.values[au])


@dataclass(frozen=True)
class AUActivationMask:
    """Binary up-regulate(1)/suppress(0) flags, one per action unit."""

    flags: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.flags)
        if arr.shape != (NUM_AUS,):
            raise AUValidationError(f"mask must have shape ({NUM_AUS},), got {arr.shape}")
        if not np.all(np.isin(arr, (0, 1))):
            raise AUValidationError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "flags", arr.astype(np.int64))

    @classmethod
    def from_active(cls, active: Iterable[str]) -> "AUActivationMask":
        flags = np.zeros(NUM_AUS, dtype=np.int64)
        for au in active:
            flags[AU_ORDER.index(au)] = 1
        return cls(flags)

    def active_units(self) -> list[str]:
        return [AU_ORDER[i] for i in np.flatnonzero(self.flags)]


@dataclass(frozen=True)
class ModulationParams:
    """Enhancement/suppression coefficients for the activation transform.

    `enhance` scales activated units by (1 + enhance); `suppress` scales the
    rest by (1 - suppress) and must stay below 1 so intensities cannot flip
    sign.
    """

    enhance: float = 0.5
    suppress: float = 0.3

    def __post_init__(self):
        if not np.isfinite(self.enhance) or self.enhance <= 0:
            raise AUValidationError(f"enhance must be a positive real, got {self.enhance}")
        if not np.isfinite(self.suppress) or not (0.0 <= self.suppress < 1.0):
            raise AUValidationError(f"suppress must lie in [0, 1), got {self.suppress}")


def aggregation_weights(code: AUCode, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Normalized feature-aggregation weights w_k = e_k / (sum_j e_j + epsilon)."""
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise AUValidationError(f"epsilon must be a positive real, got {epsilon}")
    e = code.values
    return e / (e.sum() + epsilon)


def modulate(code: AUCode, mask: AUActivationMask, params: ModulationParams) -> AUCode:
    """Apply the enhancement-suppression transform to one AU code.

    Activated units scale by (1 + enhance), suppressed units by (1 - suppress);
    the result is clamped back into [0, 5].
    """
    y = mask.flags.astype(np.float64)
    e = code.values
    modulated = e * (1.0 + params.enhance * y) - params.suppress * (1.0 - y) * e
    return AUCode(np.clip(modulated, AU_MIN, AU_MAX))


def sequence_modulate(codes: Sequence[AUCode], mask: AUActivationMask,
                      params: ModulationParams) -> list[AUCode]:
    """Framewise modulation; empty sequences pass through empty."""
    return [modulate(c, mask, params) for c in codes]


def codes_to_array(codes: Sequence[AUCode]) -> np.ndarray:
    """Stack a code sequence into a (T, 17) float array (T may be 0)."""
    if len(codes) == 0:
        return np.zeros((0, NUM_AUS))
    return np.stack([c.values for c in codes])


def codes_from_array(arr: np.ndarray, clamp: bool = False) -> list[AUCode]:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != NUM_AUS:
        raise AUValidationError(f"expected (T, {NUM_AUS}) array, got {arr.shape}")
    make = AUCode.from_clamped if clamp else AUCode
    return [make(row) for row in arr]


def codes_to_json(codes: Sequence[AUCode]) -> str:
    """Serialize a code sequence with an explicit au_order header."""
    return json.dumps({
        "au_order": list(AU_ORDER),
        "frames": [c.values.tolist() for c in codes],
    })


def codes_from_json(text: str) -> list[AUCode]:
    doc = json.loads(text)
    order = doc.get("au_order")
    if tuple(order or ()) != AU_ORDER:
        raise AUValidationError(f"au_order header mismatch: {order}")
    return [AUCode(np.asarray(f, dtype=np.float64)) for f in doc["frames"]]


def mask_to_json(mask: AUActivationMask) -> str:
    return json.dumps({"au_order": list(AU_ORDER), "flags": mask.flags.tolist()})


def mask_from_json(text: str) -> AUActivationMask:
    doc = json.loads(text)
    order = doc.get("au_order")
    if tuple(order or ()) != AU_ORDER:
        raise AUValidationError(f"au_order header mismatch: {order}")
    return AUActivationMask(np.asarray(doc["flags"]))
