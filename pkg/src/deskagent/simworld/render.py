"""Flat-shaded rasterization of the tabletop scene with painter's ordering."""

from __future__ import annotations

from typing import List, Optional, Tuple

import cv2
import numpy as np

from .camera import CameraModel
from .scene import SceneConfig
from .types import Gripper, RenderedObs, WorldState

BACKGROUND = (38, 38, 46)
TABLE_COLOR = (150, 124, 96)
DRAWER_BODY = (92, 76, 60)
DRAWER_INNER = (40, 32, 26)
HANDLE_COLOR = (230, 150, 40)
SLIDER_RAIL = (90, 90, 100)
SLIDER_HANDLE = (60, 200, 210)
CONTAINER_COLOR = (120, 120, 128)
EE_OPEN_COLOR = (235, 80, 235)
EE_CLOSED_COLOR = (160, 40, 160)
BLOCK_RGB = {
    "red": (220, 40, 40),
    "green": (40, 200, 40),
    "blue": (50, 80, 230),
}
LIGHT_ON = {
    "red": (255, 90, 90),
    "green": (110, 255, 110),
    "blue": (120, 150, 255),
}
LIGHT_OFF = {
    "red": (80, 20, 20),
    "green": (20, 70, 20),
    "blue": (25, 35, 85),
}


def _project_many(points: np.ndarray, cam: CameraModel):
    """Project an (N, 3) array; returns pixel array (N, 2) and depths (N,)."""
    p_cam = points @ cam.rotation.T + cam.translation
    z = p_cam[:, 2]
    u = cam.fx * p_cam[:, 0] / z + cam.cx
    v = cam.fy * p_cam[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1), z


def _poly(img, corners_world, cam, color):
    pts, z = _project_many(np.asarray(corners_world, dtype=np.float64), cam)
    if np.any(z <= 1e-3):
        return
    cv2.fillConvexPoly(img, np.round(pts).astype(np.int32), color)


def _sprite(img, center_world, half_m, cam, color):
    p_cam = cam.world_to_cam(center_world)
    z = p_cam[2]
    if z <= 1e-3:
        return
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    r = max(1, int(round(cam.fx * half_m / z)))
    cv2.rectangle(img, (int(round(u)) - r, int(round(v)) - r),
                  (int(round(u)) + r, int(round(v)) + r), color, -1)


def render(state: WorldState, cam: CameraModel, cfg: SceneConfig,
           draw_ee: bool = True) -> np.ndarray:
    """Render one camera view as a float32 image in [0, 1], deterministic."""
    img = np.empty((cam.image_h, cam.image_w, 3), dtype=np.uint8)
    img[:] = BACKGROUND

    # Flat surfaces in fixed back-to-front order (all lie on the table plane).
    wx, wy = cfg.workspace_x, cfg.workspace_y
    _poly(img, [[wx[0], wy[0], 0], [wx[1], wy[0], 0], [wx[1], wy[1], 0], [wx[0], wy[1], 0]],
          cam, TABLE_COLOR)
    _poly(img, [[cfg.slider_platform_x[0], cfg.slider_platform_y[0], cfg.slider_z],
                [cfg.slider_platform_x[1], cfg.slider_platform_y[0], cfg.slider_z],
                [cfg.slider_platform_x[1], cfg.slider_platform_y[1], cfg.slider_z],
                [cfg.slider_platform_x[0], cfg.slider_platform_y[1], cfg.slider_z]],
          cam, SLIDER_RAIL)
    cx, cy = cfg.container_x, cfg.container_y
    _poly(img, [[cx[0], cy[0], 0.001], [cx[1], cy[0], 0.001],
                [cx[1], cy[1], 0.001], [cx[0], cy[1], 0.001]], cam, CONTAINER_COLOR)

    # Drawer body slides toward -y as it opens.
    ext = state.drawer_ext
    dx = cfg.drawer_x_range
    front_y = cfg.drawer_handle_y_closed - cfg.drawer_travel * ext
    _poly(img, [[dx[0], front_y, 0.002], [dx[1], front_y, 0.002],
                [dx[1], cfg.drawer_handle_y_closed + 0.04, 0.002],
                [dx[0], cfg.drawer_handle_y_closed + 0.04, 0.002]], cam, DRAWER_BODY)
    if ext > 0.05:
        _poly(img, [[dx[0] + 0.02, front_y + 0.015, 0.003],
                    [dx[1] - 0.02, front_y + 0.015, 0.003],
                    [dx[1] - 0.02, cfg.drawer_handle_y_closed + 0.02, 0.003],
                    [dx[0] + 0.02, cfg.drawer_handle_y_closed + 0.02, 0.003]],
              cam, DRAWER_INNER)

    # Depth-sorted sprites (painter's algorithm over primitive centers).
    sprites: List[Tuple[float, np.ndarray, float, tuple]] = []

    def add(center, half_m, color):
        z = cam.world_to_cam(np.asarray(center, dtype=np.float64))[2]
        sprites.append((float(z), np.asarray(center, dtype=np.float64), half_m, color))

    add(cfg.drawer_handle_pos(ext), 0.018, HANDLE_COLOR)
    add(cfg.slider_handle_pos(state.slider_pos), 0.022, SLIDER_HANDLE)
    for color in cfg.button_x:
        on = state.lights[color]
        add(cfg.button_pos(color), 0.02, LIGHT_ON[color] if on else LIGHT_OFF[color])
    for b in state.blocks:
        add(b.pose, cfg.block_half, BLOCK_RGB[b.color])
    if draw_ee:
        ee_color = EE_OPEN_COLOR if state.gripper is Gripper.OPEN else EE_CLOSED_COLOR
        add(state.ee_pos, 0.015, ee_color)

    sprites.sort(key=lambda s: -s[0])
    for _, center, half_m, color in sprites:
        _sprite(img, center, half_m, cam, color)

    return img.astype(np.float32) / 255.0


def render_obs(state: WorldState, cfg: SceneConfig) -> RenderedObs:
    """Render both configured cameras. The wrist view omits the end effector."""
    static = render(state, cfg.static_camera, cfg, draw_ee=True)
    gripper = render(state, cfg.gripper_camera(state), cfg, draw_ee=False)
    return RenderedObs(static_rgb=static, gripper_rgb=gripper)
