"""Pinhole camera model: projection, deprojection and pose construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


class BehindCamera(Exception):
    """Raised when a point to project lies at or behind the image plane."""


class NonPositiveDepth(Exception):
    """Raised when deprojection is requested with depth <= 0."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid world-to-camera transform.

    Camera frame convention: +z forward, +x right, +y down.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int
    rotation: np.ndarray  # (3, 3), world -> camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        assert self.fx > 0 and self.fy > 0
        assert 0 <= self.cx < self.image_w and 0 <= self.cy < self.image_h
        r = np.asarray(self.rotation, dtype=np.float64)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-9), "rotation must be orthonormal"
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def world_to_cam(self, p_world: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p_world, dtype=np.float64) + self.translation

    def cam_to_world(self, p_cam: np.ndarray) -> np.ndarray:
        return self.rotation.T @ (np.asarray(p_cam, dtype=np.float64) - self.translation)


def look_at(eye, target, fx, fy, width, height, up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Build a camera at `eye` whose optical axis points at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ eye
    return CameraModel(
        fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
        image_w=width, image_h=height, rotation=rotation, translation=translation,
    )


def top_down(eye, fx, fy, width, height) -> CameraModel:
    """Camera looking straight down the world -z axis (used by the wrist camera)."""
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    eye = np.asarray(eye, dtype=np.float64)
    return CameraModel(
        fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
        image_w=width, image_h=height, rotation=rotation, translation=-rotation @ eye,
    )


def project_point(p_world: np.ndarray, cam: CameraModel) -> Tuple[Tuple[float, float], float]:
    """Project a world point to a floating-point pixel and camera-frame depth."""
    p_cam = cam.world_to_cam(p_world)
    z = float(p_cam[2])
    if z <= 0.0:
        raise BehindCamera(f"point has camera depth {z}")
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    return (float(u), float(v)), z


def deproject_pixel(pixel, depth: float, cam: CameraModel) -> np.ndarray:
    """Inverse of project_point: pixel plus camera-frame depth to a world point."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth {depth} <= 0")
    u, v = pixel
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    return cam.cam_to_world(np.array([x, y, depth]))
