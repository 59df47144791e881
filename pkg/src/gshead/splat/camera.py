"""Pinhole camera with a rigid world-to-camera transform.

Convention: right-handed camera frame, camera looks down -z, y up. Pixel u
grows right, v grows down; pixel centers sit at integer + 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Camera:
    extrinsic: np.ndarray  # (4, 4) world-to-camera, row-major
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        if self.extrinsic.shape != (4, 4):
            raise ValueError(f"extrinsic must be 4x4, got {self.extrinsic.shape}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.extrinsic[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("extrinsic rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsic[:3, 3]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_json(self) -> str:
        return json.dumps({
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "extrinsic": self.extrinsic.reshape(-1).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Camera":
        doc = json.loads(text)
        return cls(
            extrinsic=np.asarray(doc["extrinsic"], dtype=np.float64).reshape(4, 4),
            fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
            width=int(doc["width"]), height=int(doc["height"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Camera":
        return cls.from_json(Path(path).read_text())


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera extrinsic for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, forward)
    # camera axes in world coordinates; camera looks down -z => z axis = -forward
    R = np.stack([right, true_up, -forward])
    ext = np.eye(4)
    ext[:3, :3] = R
    ext[:3, 3] = -R @ eye
    return ext


def default_camera(width: int = 128, height: int = 128, distance: float = 3.0,
                   fov_deg: float = 40.0) -> Camera:
    """Front-facing camera centered on the origin at the given distance."""
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(
        extrinsic=look_at(np.array([0.0, 0.0, distance]), np.zeros(3)),
        fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )


def camera_ring(count: int, radius: float, height: float = 0.0,
                width: int = 128, image_height: int = 128,
                fov_deg: float = 40.0, span_deg: float = 360.0) -> list[Camera]:
    """Evenly spaced cameras on a horizontal ring, all looking at the origin."""
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    cams = []
    for k in range(count):
        angle = np.radians(span_deg) * k / max(count, 1)
        eye = np.array([radius * np.sin(angle), height, radius * np.cos(angle)])
        cams.append(Camera(
            extrinsic=look_at(eye, np.zeros(3)),
            fx=f, fy=f, cx=width / 2.0, cy=image_height / 2.0,
            width=width, height=image_height,
        ))
    return cams
